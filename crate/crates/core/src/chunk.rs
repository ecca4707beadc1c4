//! Symbols, chunks and query patterns.
//!
//! A chunk is a typed bundle of `slot:value` pairs, written in the familiar
//! `isa:dog name:Fido breed:labrador` form. A [`Query`] is the same shape with
//! some positions replaced by variables; `?` on its own is an anonymous
//! variable that binds under the name of the slot it sits in (the type
//! position binds as `isa`), while `?x` is a named variable that can be shared
//! between positions and across the conditions of a production.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Token reserved for the anonymous wildcard.
pub const WILDCARD: &str = "?";

/// Name of the type role, both in patterns and in the holographic codec.
pub const ISA: &str = "isa";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("invalid symbol {0:?}: symbols are non-empty, contain no whitespace or ':' and do not start with '?'")]
    InvalidSymbol(String),
    #[error("invalid variable {0:?}")]
    InvalidVariable(String),
    #[error("duplicate slot name {0}")]
    DuplicateSlot(Symbol),
    #[error("slot {0} holds a wildcard; chunks carry concrete values only")]
    WildcardValue(Symbol),
    #[error("slot name {0} is reserved")]
    ReservedSlot(Symbol),
    #[error("variable ?{0} is not bound")]
    Unbound(Symbol),
}

/// An interned, immutable symbol.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(name: &str) -> Result<Self, ChunkError> {
        if name.is_empty() || name.starts_with('?') || name.contains(':') || name.chars().any(char::is_whitespace) {
            return Err(ChunkError::InvalidSymbol(name.to_string()));
        }
        Ok(Symbol(Arc::from(name)))
    }

    /// Panicking constructor for literals known to be valid.
    pub fn lit(name: &str) -> Self {
        Self::new(name).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn isa() -> Self {
        Symbol::lit(ISA)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl std::str::FromStr for Symbol {
    type Err = ChunkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Symbol::new(s)
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Symbol::new(&s).map_err(de::Error::custom)
    }
}

/// Unique identifier of a chunk instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(pub u64);

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Allocator for chunk ids. Owned by whoever creates chunks (normally the
/// runtime) so that ids are reproducible from run to run.
#[derive(Debug, Clone, Default)]
pub struct IdGen {
    next: u64,
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    /// An allocator whose first id is `first`.
    pub fn starting_at(first: u64) -> Self {
        Self { next: first }
    }

    pub fn next_id(&mut self) -> ChunkId {
        let id = ChunkId(self.next);
        self.next += 1;
        id
    }

    pub fn chunk(&mut self, content: ChunkContent) -> Chunk {
        Chunk {
            id: self.next_id(),
            content,
        }
    }
}

/// Build a chunk with a fresh id from string tokens.
pub fn make_chunk(ids: &mut IdGen, ctype: &str, slots: &[(&str, &str)]) -> Result<Chunk, ChunkError> {
    Ok(ids.chunk(ChunkContent::parse(ctype, slots)?))
}

/// The content of a chunk: its type plus ordered slots. Two chunks with the
/// same content are interchangeable for matching and memory identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkContent {
    ctype: Symbol,
    slots: Vec<(Symbol, Symbol)>,
}

impl ChunkContent {
    pub fn new(ctype: Symbol, slots: Vec<(Symbol, Symbol)>) -> Result<Self, ChunkError> {
        check_slot_names(slots.iter().map(|(k, _)| k))?;
        Ok(Self { ctype, slots })
    }

    /// Parse from raw tokens, rejecting wildcards in value positions.
    pub fn parse(ctype: &str, slots: &[(&str, &str)]) -> Result<Self, ChunkError> {
        let ctype = Symbol::new(ctype)?;
        let mut out = Vec::with_capacity(slots.len());
        for (name, value) in slots {
            let name = Symbol::new(name)?;
            if value.starts_with('?') {
                return Err(ChunkError::WildcardValue(name));
            }
            out.push((name, Symbol::new(value)?));
        }
        Self::new(ctype, out)
    }

    pub fn ctype(&self) -> &Symbol {
        &self.ctype
    }

    pub fn slots(&self) -> &[(Symbol, Symbol)] {
        &self.slots
    }

    pub fn get(&self, slot: &Symbol) -> Option<&Symbol> {
        if slot.as_str() == ISA {
            return Some(&self.ctype);
        }
        self.slots.iter().find(|(k, _)| k == slot).map(|(_, v)| v)
    }

    /// Type plus every slot value; slot names are not included.
    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        std::iter::once(&self.ctype).chain(self.slots.iter().map(|(_, v)| v))
    }

    pub fn shares_symbol_with(&self, other: &ChunkContent) -> bool {
        self.symbols().any(|a| other.symbols().any(|b| a == b))
    }

    /// The exact-match pattern for this content.
    pub fn to_query(&self) -> Query {
        Query {
            ctype: Term::Sym(self.ctype.clone()),
            slots: self
                .slots
                .iter()
                .map(|(k, v)| (k.clone(), Term::Sym(v.clone())))
                .collect(),
        }
    }
}

impl fmt::Display for ChunkContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "isa:{}", self.ctype)?;
        for (k, v) in &self.slots {
            write!(f, " {k}:{v}")?;
        }
        Ok(())
    }
}

fn check_slot_names<'a>(names: impl Iterator<Item = &'a Symbol>) -> Result<(), ChunkError> {
    let mut seen: Vec<&Symbol> = Vec::new();
    for name in names {
        if name.as_str() == ISA {
            return Err(ChunkError::ReservedSlot(name.clone()));
        }
        if seen.contains(&name) {
            return Err(ChunkError::DuplicateSlot(name.clone()));
        }
        seen.push(name);
    }
    Ok(())
}

/// A chunk instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chunk {
    id: ChunkId,
    content: ChunkContent,
}

impl Chunk {
    pub fn from_parts(id: ChunkId, content: ChunkContent) -> Self {
        Self { id, content }
    }

    pub fn id(&self) -> ChunkId {
        self.id
    }

    pub fn content(&self) -> &ChunkContent {
        &self.content
    }

    pub fn ctype(&self) -> &Symbol {
        &self.content.ctype
    }

    pub fn get(&self, slot: &Symbol) -> Option<&Symbol> {
        self.content.get(slot)
    }
}

impl fmt::Display for Chunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.content.fmt(f)
    }
}

/// One position in a pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Sym(Symbol),
    /// A variable. `anonymous` records that it was written as a bare `?`,
    /// in which case `name` is the slot it occupies.
    Var {
        name: Symbol,
        anonymous: bool,
    },
}

impl Term {
    fn parse(token: &str, position: &Symbol) -> Result<Self, ChunkError> {
        match token.strip_prefix('?') {
            Some("") => Ok(Term::Var {
                name: position.clone(),
                anonymous: true,
            }),
            Some(name) => Ok(Term::Var {
                name: Symbol::new(name).map_err(|_| ChunkError::InvalidVariable(token.to_string()))?,
                anonymous: false,
            }),
            None => Ok(Term::Sym(Symbol::new(token)?)),
        }
    }

    fn token(&self) -> String {
        match self {
            Term::Sym(s) => s.to_string(),
            Term::Var { anonymous: true, .. } => WILDCARD.to_string(),
            Term::Var { name, .. } => format!("?{name}"),
        }
    }

    pub fn var(&self) -> Option<&Symbol> {
        match self {
            Term::Var { name, .. } => Some(name),
            Term::Sym(_) => None,
        }
    }
}

/// Variable bindings produced by matching.
pub type Bindings = BTreeMap<Symbol, Symbol>;

/// A chunk pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    ctype: Term,
    slots: Vec<(Symbol, Term)>,
}

impl Query {
    pub fn new(ctype: Term, slots: Vec<(Symbol, Term)>) -> Result<Self, ChunkError> {
        check_slot_names(slots.iter().map(|(k, _)| k))?;
        Ok(Self { ctype, slots })
    }

    /// Parse from raw tokens; `?` and `?name` become variables.
    pub fn parse(ctype: &str, slots: &[(&str, &str)]) -> Result<Self, ChunkError> {
        let isa = Symbol::isa();
        let ctype = Term::parse(ctype, &isa)?;
        let mut out = Vec::with_capacity(slots.len());
        for (name, value) in slots {
            let name = Symbol::new(name)?;
            let term = Term::parse(value, &name)?;
            out.push((name, term));
        }
        Self::new(ctype, out)
    }

    pub fn ctype(&self) -> &Term {
        &self.ctype
    }

    pub fn slots(&self) -> &[(Symbol, Term)] {
        &self.slots
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        std::iter::once(&self.ctype).chain(self.slots.iter().map(|(_, t)| t))
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.terms().filter_map(Term::var)
    }

    pub fn has_variables(&self) -> bool {
        self.variables().next().is_some()
    }

    /// Replace bound variables with their values.
    pub fn substitute(&self, bindings: &Bindings) -> Query {
        let sub = |t: &Term| match t {
            Term::Var { name, .. } => match bindings.get(name) {
                Some(v) => Term::Sym(v.clone()),
                None => t.clone(),
            },
            Term::Sym(_) => t.clone(),
        };
        Query {
            ctype: sub(&self.ctype),
            slots: self.slots.iter().map(|(k, t)| (k.clone(), sub(t))).collect(),
        }
    }

    /// Instantiate into concrete content; every variable must be bound.
    pub fn instantiate(&self, bindings: &Bindings) -> Result<ChunkContent, ChunkError> {
        let resolve = |t: &Term| match t {
            Term::Sym(s) => Ok(s.clone()),
            Term::Var { name, .. } => bindings
                .get(name)
                .cloned()
                .ok_or_else(|| ChunkError::Unbound(name.clone())),
        };
        let ctype = resolve(&self.ctype)?;
        let slots = self
            .slots
            .iter()
            .map(|(k, t)| Ok((k.clone(), resolve(t)?)))
            .collect::<Result<Vec<_>, ChunkError>>()?;
        Ok(ChunkContent { ctype, slots })
    }

    /// The pattern with the constraint at `slot` removed.
    pub fn without_slot(&self, slot: &Symbol) -> Query {
        Query {
            ctype: self.ctype.clone(),
            slots: self.slots.iter().filter(|(k, _)| k != slot).cloned().collect(),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "isa:{}", self.ctype.token())?;
        for (k, t) in &self.slots {
            write!(f, " {k}:{}", t.token())?;
        }
        Ok(())
    }
}

/// Match a pattern against chunk content.
///
/// Succeeds iff every constant in `query` equals the corresponding value in
/// `chunk` and every slot named in `query` exists in `chunk`. Extra slots in
/// the chunk are ignored. A variable that occurs twice must bind the same
/// value both times.
pub fn match_query(query: &Query, chunk: &ChunkContent) -> Option<Bindings> {
    match_with(query, chunk, &Bindings::new())
}

/// Like [`match_query`] but extends (and must agree with) existing bindings.
pub fn match_with(query: &Query, chunk: &ChunkContent, prior: &Bindings) -> Option<Bindings> {
    let mut out = prior.clone();
    unify(&query.ctype, &chunk.ctype, &mut out)?;
    for (slot, term) in &query.slots {
        let value = chunk.slots.iter().find(|(k, _)| k == slot).map(|(_, v)| v)?;
        unify(term, value, &mut out)?;
    }
    Some(out)
}

fn unify(term: &Term, value: &Symbol, bindings: &mut Bindings) -> Option<()> {
    match term {
        Term::Sym(s) => (s == value).then_some(()),
        Term::Var { name, .. } => match bindings.get(name) {
            Some(bound) => (bound == value).then_some(()),
            None => {
                bindings.insert(name.clone(), value.clone());
                Some(())
            }
        },
    }
}

// JSON shape shared by chunks and patterns: {"isa": "dog", "slots": {"name": "Fido"}}.

struct OrderedSlots(Vec<(String, String)>);

impl<'de> Deserialize<'de> for OrderedSlots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedSlots;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of slot names to values")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, String>()? {
                    if out.iter().any(|(seen, _): &(String, String)| *seen == k) {
                        return Err(de::Error::custom(format!("duplicate slot name {k}")));
                    }
                    out.push((k, v));
                }
                Ok(OrderedSlots(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct RawChunk {
    isa: String,
    #[serde(default)]
    slots: Option<OrderedSlots>,
}

impl RawChunk {
    fn pairs(&self) -> Vec<(&str, &str)> {
        self.slots
            .as_ref()
            .map(|s| s.0.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect())
            .unwrap_or_default()
    }
}

struct SlotsSer<'a, T>(&'a [(Symbol, T)], fn(&T) -> String);

impl<T> Serialize for SlotsSer<'_, T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0 {
            map.serialize_entry(k.as_str(), &(self.1)(v))?;
        }
        map.end()
    }
}

impl Serialize for ChunkContent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry(ISA, &self.ctype)?;
        map.serialize_entry("slots", &SlotsSer(&self.slots, |v: &Symbol| v.to_string()))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for ChunkContent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawChunk::deserialize(d)?;
        ChunkContent::parse(&raw.isa, &raw.pairs()).map_err(de::Error::custom)
    }
}

impl Serialize for Query {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry(ISA, &self.ctype.token())?;
        map.serialize_entry("slots", &SlotsSer(&self.slots, Term::token))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for Query {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawChunk::deserialize(d)?;
        Query::parse(&raw.isa, &raw.pairs()).map_err(de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ChunkRecord {
    id: ChunkId,
    #[serde(flatten)]
    content: ChunkContent,
}

impl Serialize for Chunk {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("id", &self.id)?;
        map.serialize_entry(ISA, &self.content.ctype)?;
        map.serialize_entry("slots", &SlotsSer(&self.content.slots, |v: &Symbol| v.to_string()))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for Chunk {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ChunkRecord::deserialize(d)?;
        Ok(Chunk {
            id: r.id,
            content: r.content,
        })
    }
}
