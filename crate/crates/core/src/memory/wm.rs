use std::fmt;

use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::chunk::{Chunk, ChunkContent, ChunkId, Query, Symbol};

/// Name of the central production system as a writer/owner.
pub const CENTRAL: &str = "central";

pub const DEFAULT_WM_CAPACITY: usize = 8;

pub fn central() -> Symbol {
    Symbol::lit(CENTRAL)
}

/// What a buffer can hold: a chunk, or a pending request posted as a pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferContent {
    Chunk(Chunk),
    Query { id: ChunkId, pattern: Query },
}

impl BufferContent {
    pub fn id(&self) -> ChunkId {
        match self {
            BufferContent::Chunk(c) => c.id(),
            BufferContent::Query { id, .. } => *id,
        }
    }

    pub fn chunk(&self) -> Option<&Chunk> {
        match self {
            BufferContent::Chunk(c) => Some(c),
            BufferContent::Query { .. } => None,
        }
    }

    pub fn query(&self) -> Option<&Query> {
        match self {
            BufferContent::Query { pattern, .. } => Some(pattern),
            BufferContent::Chunk(_) => None,
        }
    }
}

impl fmt::Display for BufferContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BufferContent::Chunk(c) => write!(f, "{c}"),
            BufferContent::Query { pattern, .. } => write!(f, "query {pattern}"),
        }
    }
}

/// A single-chunk working-memory cell with exactly one owning writer besides
/// the central system.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    name: Symbol,
    owner: Symbol,
    content: Option<BufferContent>,
    urgent: bool,
}

impl Buffer {
    pub fn name(&self) -> &Symbol {
        &self.name
    }

    pub fn owner(&self) -> &Symbol {
        &self.owner
    }

    pub fn content(&self) -> Option<&BufferContent> {
        self.content.as_ref()
    }

    pub fn chunk(&self) -> Option<&Chunk> {
        self.content.as_ref().and_then(BufferContent::chunk)
    }

    pub fn is_urgent(&self) -> bool {
        self.urgent
    }

    pub fn is_central(&self) -> bool {
        self.owner.as_str() == CENTRAL
    }
}

/// Record of an accepted write (or clear when `content` is `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct WmWrite {
    pub writer: Symbol,
    pub buffer: Symbol,
    pub content: Option<BufferContent>,
    pub urgent: bool,
}

/// The set of all buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingMemory {
    capacity: usize,
    buffers: Vec<Buffer>,
}

impl Default for WorkingMemory {
    fn default() -> Self {
        Self::new(DEFAULT_WM_CAPACITY)
    }
}

impl WorkingMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            buffers: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn add_buffer(&mut self, name: Symbol, owner: Symbol) -> Result<(), MemoryError> {
        if self.buffers.iter().any(|b| b.name == name) {
            return Err(MemoryError::DuplicateBuffer(name));
        }
        if self.buffers.len() >= self.capacity {
            return Err(MemoryError::CapacityExceeded(self.capacity));
        }
        self.buffers.push(Buffer {
            name,
            owner,
            content: None,
            urgent: false,
        });
        Ok(())
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn get(&self, name: &Symbol) -> Option<&Buffer> {
        self.buffers.iter().find(|b| &b.name == name)
    }

    fn get_mut(&mut self, name: &Symbol) -> Result<&mut Buffer, MemoryError> {
        self.buffers
            .iter_mut()
            .find(|b| &b.name == name)
            .ok_or_else(|| MemoryError::UnknownBuffer(name.clone()))
    }

    /// Chunks currently held, in buffer declaration order.
    pub fn chunks(&self) -> impl Iterator<Item = (&Symbol, &Chunk)> {
        self.buffers.iter().filter_map(|b| b.chunk().map(|c| (&b.name, c)))
    }

    pub fn chunk_contents(&self) -> Vec<&ChunkContent> {
        self.chunks().map(|(_, c)| c.content()).collect()
    }

    fn check_writer(&self, writer: &Symbol, buffer: &Symbol) -> Result<(), MemoryError> {
        let b = self
            .get(buffer)
            .ok_or_else(|| MemoryError::UnknownBuffer(buffer.clone()))?;
        if writer.as_str() != CENTRAL && &b.owner != writer {
            return Err(MemoryError::OwnershipViolation {
                writer: writer.clone(),
                buffer: buffer.clone(),
                owner: b.owner.clone(),
            });
        }
        Ok(())
    }

    /// Replace a buffer's content. The central system may write any buffer;
    /// a shadow system only the buffer it owns.
    pub fn write(
        &mut self,
        writer: &Symbol,
        buffer: &Symbol,
        content: BufferContent,
        urgent: bool,
    ) -> Result<WmWrite, MemoryError> {
        self.check_writer(writer, buffer)?;
        let b = self.get_mut(buffer)?;
        b.content = Some(content.clone());
        b.urgent = urgent;
        Ok(WmWrite {
            writer: writer.clone(),
            buffer: buffer.clone(),
            content: Some(content),
            urgent,
        })
    }

    pub fn clear(&mut self, writer: &Symbol, buffer: &Symbol) -> Result<WmWrite, MemoryError> {
        self.check_writer(writer, buffer)?;
        let b = self.get_mut(buffer)?;
        b.content = None;
        b.urgent = false;
        Ok(WmWrite {
            writer: writer.clone(),
            buffer: buffer.clone(),
            content: None,
            urgent: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::IdGen;

    fn wm() -> WorkingMemory {
        let mut wm = WorkingMemory::default();
        wm.add_buffer(Symbol::lit("goal"), central()).unwrap();
        wm.add_buffer(Symbol::lit("emotion"), Symbol::lit("emotion")).unwrap();
        wm.add_buffer(Symbol::lit("vision"), Symbol::lit("vision")).unwrap();
        wm.add_buffer(Symbol::lit("declarative"), Symbol::lit("declarative"))
            .unwrap();
        wm
    }

    fn threat(ids: &mut IdGen) -> Chunk {
        crate::chunk::make_chunk(ids, "threat", &[("level", "high")]).unwrap()
    }

    #[test]
    fn owner_writes_own_buffer() {
        let mut ids = IdGen::new();
        let mut wm = wm();
        let c = threat(&mut ids);
        let w = wm
            .write(
                &Symbol::lit("emotion"),
                &Symbol::lit("emotion"),
                BufferContent::Chunk(c.clone()),
                true,
            )
            .unwrap();
        assert_eq!(w.writer.as_str(), "emotion");
        let b = wm.get(&Symbol::lit("emotion")).unwrap();
        assert_eq!(b.chunk(), Some(&c));
        assert!(b.is_urgent());
    }

    #[test]
    fn foreign_write_is_an_ownership_violation() {
        let mut ids = IdGen::new();
        let mut wm = wm();
        let err = wm
            .write(
                &Symbol::lit("emotion"),
                &Symbol::lit("vision"),
                BufferContent::Chunk(threat(&mut ids)),
                false,
            )
            .unwrap_err();
        match err {
            MemoryError::OwnershipViolation { writer, buffer, .. } => {
                assert_eq!(writer.as_str(), "emotion");
                assert_eq!(buffer.as_str(), "vision");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(wm.get(&Symbol::lit("vision")).unwrap().content().is_none());
    }

    #[test]
    fn central_writes_any_buffer() {
        let mut ids = IdGen::new();
        let mut wm = wm();
        let q = Query::parse("dog", &[("name", "?"), ("breed", "labrador")]).unwrap();
        wm.write(
            &central(),
            &Symbol::lit("declarative"),
            BufferContent::Query {
                id: ids.next_id(),
                pattern: q,
            },
            false,
        )
        .unwrap();
        assert!(wm
            .get(&Symbol::lit("declarative"))
            .unwrap()
            .content()
            .unwrap()
            .query()
            .is_some());
    }

    #[test]
    fn capacity_and_duplicates() {
        let mut wm = WorkingMemory::new(1);
        wm.add_buffer(Symbol::lit("a"), central()).unwrap();
        assert_eq!(
            wm.add_buffer(Symbol::lit("a"), central()),
            Err(MemoryError::DuplicateBuffer(Symbol::lit("a")))
        );
        assert_eq!(
            wm.add_buffer(Symbol::lit("b"), central()),
            Err(MemoryError::CapacityExceeded(1))
        );
    }

    #[test]
    fn clear_resets_urgency() {
        let mut ids = IdGen::new();
        let mut wm = wm();
        let e = Symbol::lit("emotion");
        wm.write(&e, &e, BufferContent::Chunk(threat(&mut ids)), true).unwrap();
        wm.clear(&central(), &e).unwrap();
        let b = wm.get(&e).unwrap();
        assert!(b.content().is_none() && !b.is_urgent());
    }
}
