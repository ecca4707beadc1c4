//! Shadow production systems: peripheral rule engines that read anything
//! but write only their own buffer.
//!
//! Each system filters Middle Memory into its buffer, answers queries the
//! central system posts there, and may flag a write as urgent to interrupt
//! the central system. Central firings that match a shadow-written chunk
//! are recorded in a [`ContributionLedger`]; when a reward arrives the
//! producing shadow productions receive the same TD update as central ones.

use serde::{Deserialize, Serialize};

use crate::chunk::{ChunkContent, ChunkId, Symbol};
use crate::memory::{BufferContent, EntryId, MemoryError, MiddleMemory, WmWrite, WorkingMemory};
use crate::production::{
    fire, match_all, resolve, Effect, Firing, MatchContext, Matched, PlannedContent, Production, ProductionError,
    UtilityLearner, UtilityUpdate,
};
use crate::time::SimTime;

pub const RETRIEVAL_FAILURE: &str = "retrieval-failure";

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSystem {
    pub name: Symbol,
    pub buffer: Symbol,
    pub subscriptions: Vec<Symbol>,
    /// Steps per central cycle.
    pub rate: u32,
    pub productions: Vec<Production>,
}

impl ShadowSystem {
    pub fn new(name: Symbol, buffer: Symbol, subscriptions: Vec<Symbol>) -> Self {
        Self {
            name,
            buffer,
            subscriptions,
            rate: 1,
            productions: Vec::new(),
        }
    }

    pub fn with_production(mut self, p: Production) -> Self {
        self.productions.push(p);
        self
    }
}

/// What one shadow step decided. Nothing is applied yet; the caller writes
/// the buffer and allocates chunk ids.
#[derive(Debug, Clone, PartialEq)]
pub enum ShadowStep {
    /// A query in the owned buffer was answered (or failed).
    Answered {
        query: ChunkId,
        entry: Option<EntryId>,
        content: ChunkContent,
    },
    Fired {
        firing: Firing,
        conflict: Vec<Symbol>,
        matched: Vec<Matched>,
    },
}

impl ShadowStep {
    /// The buffer writes this step asks for, in action order.
    pub fn writes(&self, buffer: &Symbol) -> Vec<(PlannedContent, bool)> {
        match self {
            ShadowStep::Answered { content, .. } => vec![(PlannedContent::Chunk(content.clone()), false)],
            ShadowStep::Fired { firing, .. } => firing
                .effects
                .iter()
                .filter_map(|e| match e {
                    Effect::Write {
                        buffer: b,
                        content,
                        urgent,
                    } if b == buffer => Some((content.clone(), *urgent)),
                    _ => None,
                })
                .collect(),
        }
    }
}

/// Complete the query held in the system's buffer from Middle Memory,
/// restricted to its subscriptions. Returns `None` when the buffer holds no
/// query; a failed lookup yields a retrieval-failure chunk.
pub fn answer_query(system: &ShadowSystem, wm: &WorkingMemory, mm: &MiddleMemory) -> Option<ShadowStep> {
    let BufferContent::Query { id, pattern } = wm.get(&system.buffer)?.content()? else {
        return None;
    };
    let hit = mm
        .retrieve_cached(Some(pattern), Some(&system.subscriptions), 1)
        .into_iter()
        .next();
    let (entry, content) = match hit.and_then(|h| pattern.instantiate(&h.bindings).ok().map(|c| (h.id, c))) {
        Some((entry, content)) => (Some(entry), content),
        None => (None, retrieval_failure(*id)),
    };
    Some(ShadowStep::Answered {
        query: *id,
        entry,
        content,
    })
}

pub fn retrieval_failure(query: ChunkId) -> ChunkContent {
    ChunkContent::parse(RETRIEVAL_FAILURE, &[("query-id", &format!("q{}", query.0))]).expect("valid symbols")
}

/// One step of a shadow system: answer a pending query if there is one,
/// otherwise match, resolve and fire at most one production.
pub fn shadow_step(
    system: &mut ShadowSystem,
    wm: &WorkingMemory,
    mm: &MiddleMemory,
    now: SimTime,
) -> Result<Option<ShadowStep>, ProductionError> {
    if let Some(answer) = answer_query(system, wm, mm) {
        return Ok(Some(answer));
    }
    let ctx = MatchContext {
        default_tags: &system.subscriptions,
        ..MatchContext::new(wm, mm)
    };
    let outcome = match_all(&system.productions, &ctx);
    let Some(winner) = resolve(&outcome.conflict) else {
        return Ok(None);
    };
    let firing = fire(&mut system.productions[winner.index], winner, now)?;
    Ok(Some(ShadowStep::Fired {
        conflict: outcome.conflict.iter().map(|i| i.production.clone()).collect(),
        matched: winner.matched.clone(),
        firing,
    }))
}

/// Write `content` to the system's buffer flagged urgent.
pub fn interrupt(
    system: &ShadowSystem,
    content: BufferContent,
    wm: &mut WorkingMemory,
) -> Result<WmWrite, MemoryError> {
    wm.write(&system.name, &system.buffer, content, true)
}

/// A shadow production's buffer deposit and whether a central firing used it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub system: Symbol,
    pub production: Symbol,
    pub buffer: Symbol,
    pub chunk: ChunkId,
    pub cycle: u64,
    pub deposited_at: SimTime,
    pub consumed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContributionLedger {
    records: Vec<Contribution>,
}

impl ContributionLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Contribution] {
        &self.records
    }

    /// Note a shadow write. An unconsumed record for the same buffer is
    /// dropped: its chunk was overwritten and can no longer be consumed.
    pub fn record_deposit(&mut self, c: Contribution) {
        self.discard_unconsumed(&c.buffer);
        self.records.push(c);
    }

    /// Forget unconsumed records for `buffer` after its content changed.
    pub fn discard_unconsumed(&mut self, buffer: &Symbol) {
        self.records.retain(|r| &r.buffer != buffer || r.consumed.is_some());
    }

    /// Mark every record whose chunk a central firing matched. A record is
    /// consumed at most once; the first cycle wins. Returns newly consumed
    /// records.
    pub fn record_consumption(&mut self, matched: &[Matched], cycle: u64) -> Vec<Contribution> {
        let mut out = Vec::new();
        for m in matched {
            let Matched::Buffer { buffer, chunk } = m else { continue };
            for r in &mut self.records {
                if r.consumed.is_none() && &r.buffer == buffer && r.chunk == *chunk {
                    r.consumed = Some(cycle);
                    out.push(r.clone());
                }
            }
        }
        out
    }

    /// Apply one TD update per consumed record to the producing shadow
    /// production, discounting from the deposit time, then clear the
    /// consumed records.
    pub fn propagate_credit(
        &mut self,
        learner: &UtilityLearner,
        systems: &mut [ShadowSystem],
        reward: f64,
        at: SimTime,
    ) -> Vec<UtilityUpdate> {
        let (consumed, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.records)
            .into_iter()
            .partition(|r| r.consumed.is_some());
        self.records = rest;
        consumed
            .iter()
            .filter_map(|r| {
                let sys = systems.iter_mut().find(|s| s.name == r.system)?;
                learner.apply(&mut sys.productions, &r.production, r.deposited_at, reward, at)
            })
            .collect()
    }
}
