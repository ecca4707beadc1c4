//! Working Memory and Middle Memory.
//!
//! Working Memory is a small set of named buffers, each holding at most one
//! chunk and owned by exactly one writer. Middle Memory is the larger store
//! that predictors deposit into; its entries are ranked by activation,
//!
//! ```text
//! A = ln Σ_j (now − t_j)^(−d)  +  Σ_buffers W/n · [shares a symbol or is linked]  +  ε
//! ```
//!
//! and forgotten once activation drops below the forgetting threshold.

mod context;
mod mm;
mod wm;

use thiserror::Error;

pub use context::{context_vector, softmax, ContextVector};
pub use mm::{base_level, Deposit, EntryId, Forgotten, MiddleMemory, MmEntry, MmParams, Payload, Retrieved};
pub use wm::{central, Buffer, BufferContent, WmWrite, WorkingMemory, CENTRAL, DEFAULT_WM_CAPACITY};

use crate::chunk::Symbol;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("{writer} may not write buffer {buffer} (owned by {owner}): shadow systems write only their own buffer")]
    OwnershipViolation {
        writer: Symbol,
        buffer: Symbol,
        owner: Symbol,
    },
    #[error("unknown buffer {0}")]
    UnknownBuffer(Symbol),
    #[error("duplicate buffer {0}")]
    DuplicateBuffer(Symbol),
    #[error("working memory capacity of {0} buffers exceeded")]
    CapacityExceeded(usize),
    #[error("unknown memory entry {0}")]
    UnknownEntry(EntryId),
    #[error("time {now} is not after the latest presentation at {latest}")]
    TemporalOrder { now: SimTime, latest: SimTime },
}
