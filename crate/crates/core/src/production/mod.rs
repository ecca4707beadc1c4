//! Production rules: representation, matching, conflict resolution, firing
//! and utility learning.
//!
//! Matching is strictly binary. A production is in the conflict set iff every
//! condition holds; among those, the highest utility wins and exact ties go
//! to the lexicographically smallest name.

mod learning;
mod matching;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use learning::{
    form_retrieval_production, prune_provisional, td_update, LearnerParams, UtilityLearner, UtilityUpdate,
};
pub use matching::{
    fire, match_all, match_production, resolve, Effect, Firing, Instantiation, MatchContext, MatchOutcome, Matched,
    MmView, NoMm, PlannedContent,
};

use crate::chunk::{ChunkError, Query, Symbol};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProductionError {
    #[error("production {production}: {source}")]
    Binding {
        production: Symbol,
        #[source]
        source: ChunkError,
    },
}

/// Where a condition looks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Buffer(Symbol),
    /// Middle Memory filtered by any of these tags; empty means the owning
    /// system's subscriptions.
    Mm(Vec<Symbol>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCondition", into = "RawCondition")]
pub struct Condition {
    pub source: Source,
    pub pattern: Query,
    pub negated: bool,
}

impl Condition {
    pub fn buffer(buffer: Symbol, pattern: Query) -> Self {
        Self {
            source: Source::Buffer(buffer),
            pattern,
            negated: false,
        }
    }

    pub fn mm(tags: Vec<Symbol>, pattern: Query) -> Self {
        Self {
            source: Source::Mm(tags),
            pattern,
            negated: false,
        }
    }

    pub fn negate(mut self) -> Self {
        self.negated = true;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct RawCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    buffer: Option<Symbol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mm: Option<Vec<Symbol>>,
    pattern: Query,
    #[serde(default)]
    negated: bool,
}

impl TryFrom<RawCondition> for Condition {
    type Error = String;
    fn try_from(r: RawCondition) -> Result<Self, String> {
        let source = match (r.buffer, r.mm) {
            (Some(b), None) => Source::Buffer(b),
            (None, Some(tags)) => Source::Mm(tags),
            _ => return Err("a condition names exactly one of `buffer` or `mm`".into()),
        };
        Ok(Condition {
            source,
            pattern: r.pattern,
            negated: r.negated,
        })
    }
}

impl From<Condition> for RawCondition {
    fn from(c: Condition) -> Self {
        let (buffer, mm) = match c.source {
            Source::Buffer(b) => (Some(b), None),
            Source::Mm(t) => (None, Some(t)),
        };
        RawCondition {
            buffer,
            mm,
            pattern: c.pattern,
            negated: c.negated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    WriteBuffer {
        buffer: Symbol,
        template: Query,
        #[serde(default)]
        urgent: bool,
    },
    ClearBuffer {
        buffer: Symbol,
    },
    /// Place a request pattern in a buffer; unbound variables stay open.
    PostQuery {
        buffer: Symbol,
        template: Query,
    },
    EmitReward {
        amount: f64,
    },
    Halt,
}

impl Action {
    /// Buffer this action modifies, if any.
    pub fn target(&self) -> Option<&Symbol> {
        match self {
            Action::WriteBuffer { buffer, .. } | Action::ClearBuffer { buffer } | Action::PostQuery { buffer, .. } => {
                Some(buffer)
            }
            Action::EmitReward { .. } | Action::Halt => None,
        }
    }
}

/// A condition/action rule owned by the central system or a shadow system.
#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub name: Symbol,
    pub owner: Symbol,
    pub conditions: Vec<Condition>,
    pub actions: Vec<Action>,
    pub utility: f64,
    /// Provisional productions are pruned unless a reward makes them permanent.
    pub permanent: bool,
    pub created_at: Option<SimTime>,
    pub fired_at: Vec<SimTime>,
}

impl Production {
    pub fn new(name: Symbol, owner: Symbol, conditions: Vec<Condition>, actions: Vec<Action>) -> Self {
        Self {
            name,
            owner,
            conditions,
            actions,
            utility: 0.0,
            permanent: true,
            created_at: None,
            fired_at: Vec::new(),
        }
    }

    pub fn with_utility(mut self, utility: f64) -> Self {
        self.utility = utility;
        self
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}] U={:.5}", self.name, self.owner, self.utility)?;
        if !self.permanent {
            f.write_str(" provisional")?;
        }
        Ok(())
    }
}
