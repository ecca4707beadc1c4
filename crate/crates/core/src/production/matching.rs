use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, Production, ProductionError, Source};
use crate::chunk::{match_with, Bindings, Chunk, ChunkContent, ChunkId, Query, Symbol};
use crate::memory::{EntryId, MiddleMemory, WorkingMemory};
use crate::time::SimTime;

/// Read access to Middle Memory for MM conditions: the single top-ranked
/// entry matching the pattern under any of the tags.
pub trait MmView {
    fn top(&self, pattern: &Query, tags: &[Symbol]) -> Option<(EntryId, Bindings)>;
}

impl MmView for MiddleMemory {
    fn top(&self, pattern: &Query, tags: &[Symbol]) -> Option<(EntryId, Bindings)> {
        self.retrieve_cached(Some(pattern), Some(tags), 1)
            .into_iter()
            .next()
            .map(|r| (r.id, r.bindings))
    }
}

/// An MM view with nothing in it.
pub struct NoMm;

impl MmView for NoMm {
    fn top(&self, _: &Query, _: &[Symbol]) -> Option<(EntryId, Bindings)> {
        None
    }
}

/// Everything a production can match against.
pub struct MatchContext<'a> {
    pub wm: &'a WorkingMemory,
    pub mm: &'a dyn MmView,
    /// Tags used by MM conditions that name none.
    pub default_tags: &'a [Symbol],
    /// Ungated per-buffer inflow lists (pipeline mode). Every item is tested
    /// in addition to the buffer content.
    pub inflow: Option<&'a BTreeMap<Symbol, Vec<Chunk>>>,
}

impl<'a> MatchContext<'a> {
    pub fn new(wm: &'a WorkingMemory, mm: &'a dyn MmView) -> Self {
        Self {
            wm,
            mm,
            default_tags: &[],
            inflow: None,
        }
    }
}

/// What a satisfied condition matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matched {
    Buffer { buffer: Symbol, chunk: ChunkId },
    Entry { entry: EntryId },
}

/// A production together with the bindings that satisfy it.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiation {
    pub index: usize,
    pub production: Symbol,
    pub utility: f64,
    pub bindings: Bindings,
    pub matched: Vec<Matched>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchOutcome {
    pub conflict: Vec<Instantiation>,
    /// Number of (condition, content) tests evaluated.
    pub candidates: u64,
}

fn test_buffer(
    buffer: &Symbol,
    pattern: &Query,
    bindings: &Bindings,
    ctx: &MatchContext,
    candidates: &mut u64,
) -> Option<(Bindings, ChunkId)> {
    let mut found = None;
    let held = ctx.wm.get(buffer).and_then(|b| b.chunk());
    let inflow = ctx
        .inflow
        .and_then(|m| m.get(buffer))
        .map(|v| v.as_slice())
        .unwrap_or(&[]);
    // Buffer content first, then the inflow list newest first.
    for chunk in held.into_iter().chain(inflow.iter().rev()) {
        *candidates += 1;
        if found.is_none() {
            found = match_with(pattern, chunk.content(), bindings).map(|b| (b, chunk.id()));
        }
    }
    found
}

/// Evaluate one production's conditions in order, threading bindings.
pub fn match_production(
    index: usize,
    production: &Production,
    ctx: &MatchContext,
    candidates: &mut u64,
) -> Option<Instantiation> {
    let mut bindings = Bindings::new();
    let mut matched = Vec::new();
    for cond in &production.conditions {
        let pattern = cond.pattern.substitute(&bindings);
        let hit = match &cond.source {
            Source::Buffer(buffer) => test_buffer(buffer, &pattern, &bindings, ctx, candidates).map(|(b, id)| {
                (
                    b,
                    Matched::Buffer {
                        buffer: buffer.clone(),
                        chunk: id,
                    },
                )
            }),
            Source::Mm(tags) => {
                *candidates += 1;
                let tags = if tags.is_empty() { ctx.default_tags } else { tags };
                ctx.mm.top(&pattern, tags).map(|(entry, fresh)| {
                    let mut merged = bindings.clone();
                    merged.extend(fresh);
                    (merged, Matched::Entry { entry })
                })
            }
        };
        match (hit, cond.negated) {
            (Some(_), true) | (None, false) => return None,
            (None, true) => {}
            (Some((b, m)), false) => {
                bindings = b;
                matched.push(m);
            }
        }
    }
    Some(Instantiation {
        index,
        production: production.name.clone(),
        utility: production.utility,
        bindings,
        matched,
    })
}

/// The conflict set: every production whose conditions all hold.
pub fn match_all(productions: &[Production], ctx: &MatchContext) -> MatchOutcome {
    let mut out = MatchOutcome::default();
    for (i, p) in productions.iter().enumerate() {
        if let Some(inst) = match_production(i, p, ctx, &mut out.candidates) {
            out.conflict.push(inst);
        }
    }
    out
}

/// Highest utility wins; exact ties go to the smallest name.
pub fn resolve(conflict: &[Instantiation]) -> Option<&Instantiation> {
    conflict.iter().reduce(|best, i| {
        if i.utility > best.utility || (i.utility == best.utility && i.production < best.production) {
            i
        } else {
            best
        }
    })
}

/// Content a firing asks to place in a buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum PlannedContent {
    Chunk(ChunkContent),
    Query(Query),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Write {
        buffer: Symbol,
        content: PlannedContent,
        urgent: bool,
    },
    Clear {
        buffer: Symbol,
    },
    Reward(f64),
    Halt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub production: Symbol,
    pub owner: Symbol,
    pub bindings: Bindings,
    pub effects: Vec<Effect>,
}

/// Resolve the production's actions against `inst`'s bindings, in order,
/// and record the firing time. Effects are applied by the caller, which
/// owns chunk id allocation and the trace.
pub fn fire(production: &mut Production, inst: &Instantiation, now: SimTime) -> Result<Firing, ProductionError> {
    let err = |source| ProductionError::Binding {
        production: production.name.clone(),
        source,
    };
    let mut effects = Vec::with_capacity(production.actions.len());
    for action in &production.actions {
        effects.push(match action {
            Action::WriteBuffer {
                buffer,
                template,
                urgent,
            } => Effect::Write {
                buffer: buffer.clone(),
                content: PlannedContent::Chunk(template.instantiate(&inst.bindings).map_err(err)?),
                urgent: *urgent,
            },
            Action::PostQuery { buffer, template } => Effect::Write {
                buffer: buffer.clone(),
                content: PlannedContent::Query(template.substitute(&inst.bindings)),
                urgent: false,
            },
            Action::ClearBuffer { buffer } => Effect::Clear { buffer: buffer.clone() },
            Action::EmitReward { amount } => Effect::Reward(*amount),
            Action::Halt => Effect::Halt,
        });
    }
    production.fired_at.push(now);
    Ok(Firing {
        production: production.name.clone(),
        owner: production.owner.clone(),
        bindings: inst.bindings.clone(),
        effects,
    })
}

#[cfg(test)]
pub(crate) fn sat(production: &Production, ctx: &MatchContext) -> bool {
    let mut n = 0;
    match_production(0, production, ctx, &mut n).is_some()
}
