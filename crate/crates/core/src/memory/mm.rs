use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wm::WorkingMemory;
use super::MemoryError;
use crate::chunk::{match_query, Bindings, ChunkContent, Query, Symbol};
use crate::codec::HoloVector;
use crate::time::SimTime;

/// Identifier of a Middle Memory entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// What an entry stores: symbolic content, or a prediction vector with an
/// optional decoding.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Chunk(ChunkContent),
    Vector {
        vector: HoloVector,
        decoded: Option<ChunkContent>,
    },
}

impl Payload {
    /// The chunk visible to pattern matching, if any.
    pub fn chunk(&self) -> Option<&ChunkContent> {
        match self {
            Payload::Chunk(c) => Some(c),
            Payload::Vector { decoded, .. } => decoded.as_ref(),
        }
    }

    fn key(&self) -> PayloadKey {
        match self {
            Payload::Chunk(c) => PayloadKey::Chunk(c.clone()),
            Payload::Vector { vector, decoded } => {
                PayloadKey::Vector(vector.as_slice().iter().map(|v| v.to_bits()).collect(), decoded.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PayloadKey {
    Chunk(ChunkContent),
    Vector(Vec<u64>, Option<ChunkContent>),
}

/// Activation and forgetting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MmParams {
    /// Base-level decay `d`.
    pub decay: f64,
    /// Total spreading weight `W`, divided evenly among non-empty buffers.
    pub spreading: f64,
    pub retrieval_threshold: f64,
    pub forgetting_threshold: f64,
    /// Scale `s` of logistic activation noise; zero disables it.
    pub noise: f64,
}

impl Default for MmParams {
    fn default() -> Self {
        Self {
            decay: 0.5,
            spreading: 1.0,
            retrieval_threshold: -1.0,
            forgetting_threshold: -2.5,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmEntry {
    id: EntryId,
    payload: Payload,
    tag: Symbol,
    presentations: Vec<SimTime>,
    links: BTreeSet<EntryId>,
    activation: f64,
}

impl MmEntry {
    pub fn id(&self) -> EntryId {
        self.id
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn chunk(&self) -> Option<&ChunkContent> {
        self.payload.chunk()
    }

    pub fn tag(&self) -> &Symbol {
        &self.tag
    }

    pub fn presentations(&self) -> &[SimTime] {
        &self.presentations
    }

    pub fn links(&self) -> &BTreeSet<EntryId> {
        &self.links
    }

    /// Activation as of the last [`MiddleMemory::refresh`].
    pub fn cached_activation(&self) -> f64 {
        self.activation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deposit {
    pub id: EntryId,
    /// False when the deposit merged into an existing entry as a new presentation.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub id: EntryId,
    pub activation: f64,
    /// Bindings from the pattern, when one was given.
    pub bindings: Bindings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forgotten {
    pub id: EntryId,
    pub tag: Symbol,
    pub activation: f64,
}

/// `ln Σ (now − t)^(−d)` over presentation times.
pub fn base_level(presentations: &[SimTime], now: SimTime, decay: f64) -> Result<f64, MemoryError> {
    let mut sum = 0.0;
    for &t in presentations {
        if t >= now {
            return Err(MemoryError::TemporalOrder { now, latest: t });
        }
        sum += now.secs_since(t).powf(-decay);
    }
    Ok(sum.ln())
}

/// Activation-ranked store of tagged predictions and propositional chunks.
#[derive(Debug, Clone)]
pub struct MiddleMemory {
    params: MmParams,
    noise_seed: u64,
    entries: BTreeMap<EntryId, MmEntry>,
    index: HashMap<(PayloadKey, Symbol), EntryId>,
    next_id: u64,
}

impl MiddleMemory {
    pub fn new(params: MmParams) -> Self {
        Self::with_seed(params, 0)
    }

    /// `noise_seed` drives the logistic noise term when `params.noise > 0`.
    pub fn with_seed(params: MmParams, noise_seed: u64) -> Self {
        Self {
            params,
            noise_seed,
            entries: BTreeMap::new(),
            index: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn params(&self) -> &MmParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: EntryId) -> Option<&MmEntry> {
        self.entries.get(&id)
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &MmEntry> {
        self.entries.values()
    }

    fn latest(&self) -> Option<SimTime> {
        self.entries
            .values()
            .filter_map(|e| e.presentations.last().copied())
            .max()
    }

    /// Add a presentation. Identical content under the same tag merges into
    /// one entry; anything else creates a new entry.
    pub fn deposit(&mut self, payload: Payload, tag: Symbol, now: SimTime) -> Result<Deposit, MemoryError> {
        if let Some(latest) = self.latest() {
            if now < latest {
                return Err(MemoryError::TemporalOrder { now, latest });
            }
        }
        let key = (payload.key(), tag.clone());
        if let Some(&id) = self.index.get(&key) {
            self.entries
                .get_mut(&id)
                .expect("indexed entry")
                .presentations
                .push(now);
            return Ok(Deposit { id, created: false });
        }
        let id = EntryId(self.next_id);
        self.next_id += 1;
        self.entries.insert(
            id,
            MmEntry {
                id,
                payload,
                tag,
                presentations: vec![now],
                links: BTreeSet::new(),
                activation: f64::NEG_INFINITY,
            },
        );
        self.index.insert(key, id);
        Ok(Deposit { id, created: true })
    }

    /// Record a symmetric graph edge. Self-links are ignored.
    pub fn link(&mut self, a: EntryId, b: EntryId) -> Result<(), MemoryError> {
        for id in [a, b] {
            if !self.entries.contains_key(&id) {
                return Err(MemoryError::UnknownEntry(id));
            }
        }
        if a == b {
            return Ok(());
        }
        self.entries.get_mut(&a).unwrap().links.insert(b);
        self.entries.get_mut(&b).unwrap().links.insert(a);
        Ok(())
    }

    pub fn neighbors(&self, id: EntryId) -> Result<&BTreeSet<EntryId>, MemoryError> {
        self.entries
            .get(&id)
            .map(|e| &e.links)
            .ok_or(MemoryError::UnknownEntry(id))
    }

    /// `B + S + ε`. `S` gives each non-empty buffer `W / n` if its chunk
    /// shares a symbol with the entry or with an entry linked to it.
    pub fn activation(&self, id: EntryId, wm: &WorkingMemory, now: SimTime) -> Result<f64, MemoryError> {
        let entry = self.entries.get(&id).ok_or(MemoryError::UnknownEntry(id))?;
        let sources = wm.chunk_contents();
        self.activation_of(entry, &sources, now)
    }

    fn activation_of(&self, entry: &MmEntry, sources: &[&ChunkContent], now: SimTime) -> Result<f64, MemoryError> {
        let b = base_level(&entry.presentations, now, self.params.decay)?;
        Ok(b + self.spreading(entry, sources) + self.noise(entry.id, now))
    }

    fn spreading(&self, entry: &MmEntry, sources: &[&ChunkContent]) -> f64 {
        if sources.is_empty() {
            return 0.0;
        }
        let linked: Vec<&ChunkContent> = entry
            .links
            .iter()
            .filter_map(|l| self.entries.get(l).and_then(MmEntry::chunk))
            .collect();
        let own = entry.chunk();
        let hits = sources
            .iter()
            .filter(|src| {
                own.is_some_and(|c| c.shares_symbol_with(src)) || linked.iter().any(|l| l.shares_symbol_with(src))
            })
            .count();
        self.params.spreading * hits as f64 / sources.len() as f64
    }

    fn noise(&self, id: EntryId, now: SimTime) -> f64 {
        if self.params.noise == 0.0 {
            return 0.0;
        }
        let seed = self.noise_seed ^ id.0.rotate_left(29) ^ (now.millis() as u64).rotate_left(7);
        let u: f64 = ChaCha8Rng::seed_from_u64(seed).random_range(f64::EPSILON..1.0);
        self.params.noise * (u / (1.0 - u)).ln()
    }

    /// Recompute and cache every entry's activation.
    pub fn refresh(&mut self, wm: &WorkingMemory, now: SimTime) -> Result<(), MemoryError> {
        let sources = wm.chunk_contents();
        let computed = self
            .entries
            .values()
            .map(|e| Ok((e.id, self.activation_of(e, &sources, now)?)))
            .collect::<Result<Vec<_>, MemoryError>>()?;
        for (id, a) in computed {
            self.entries.get_mut(&id).unwrap().activation = a;
        }
        Ok(())
    }

    /// Ranked retrieval with freshly computed activations.
    pub fn retrieve(
        &self,
        wm: &WorkingMemory,
        now: SimTime,
        pattern: Option<&Query>,
        tags: Option<&[Symbol]>,
        k: usize,
    ) -> Result<Vec<Retrieved>, MemoryError> {
        let sources = wm.chunk_contents();
        let mut scored = Vec::with_capacity(self.entries.len());
        for e in self.entries.values() {
            scored.push((e, self.activation_of(e, &sources, now)?));
        }
        Ok(self.rank(scored, pattern, tags, k))
    }

    /// Ranked retrieval against the activations cached by the last refresh.
    pub fn retrieve_cached(&self, pattern: Option<&Query>, tags: Option<&[Symbol]>, k: usize) -> Vec<Retrieved> {
        self.rank(
            self.entries.values().map(|e| (e, e.activation)).collect(),
            pattern,
            tags,
            k,
        )
    }

    fn rank(
        &self,
        scored: Vec<(&MmEntry, f64)>,
        pattern: Option<&Query>,
        tags: Option<&[Symbol]>,
        k: usize,
    ) -> Vec<Retrieved> {
        let mut hits: Vec<Retrieved> = scored
            .into_iter()
            .filter(|(_, a)| *a >= self.params.retrieval_threshold)
            .filter(|(e, _)| tags.is_none_or(|t| t.contains(&e.tag)))
            .filter_map(|(e, a)| {
                let bindings = match pattern {
                    None => Bindings::new(),
                    Some(p) => match_query(p, e.chunk()?)?,
                };
                Some(Retrieved {
                    id: e.id,
                    activation: a,
                    bindings,
                })
            })
            .collect();
        hits.sort_by(|a, b| b.activation.total_cmp(&a.activation).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        hits
    }

    /// Refresh activations and drop every entry below the forgetting threshold.
    pub fn sweep(&mut self, wm: &WorkingMemory, now: SimTime) -> Result<Vec<Forgotten>, MemoryError> {
        self.refresh(wm, now)?;
        let doomed: Vec<Forgotten> = self
            .entries
            .values()
            .filter(|e| e.activation < self.params.forgetting_threshold)
            .map(|e| Forgotten {
                id: e.id,
                tag: e.tag.clone(),
                activation: e.activation,
            })
            .collect();
        for f in &doomed {
            let e = self.entries.remove(&f.id).unwrap();
            self.index.remove(&(e.payload.key(), e.tag));
            for l in e.links {
                if let Some(n) = self.entries.get_mut(&l) {
                    n.links.remove(&f.id);
                }
            }
        }
        Ok(doomed)
    }
}
