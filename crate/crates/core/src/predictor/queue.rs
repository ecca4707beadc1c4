use std::sync::{Arc, Mutex};

use super::Prediction;
use crate::chunk::Symbol;

#[derive(Debug, Clone, PartialEq)]
pub enum QueuedItem {
    Prediction(Prediction),
    /// A message that could not be used; carries the raw payload.
    Malformed {
        raw: String,
        reason: String,
    },
    /// The predictor stopped responding.
    Stalled {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Queued {
    pub cycle: u64,
    pub predictor: Symbol,
    pub index: u64,
    pub item: QueuedItem,
}

/// Thread-safe holding area between predictors and Middle Memory.
#[derive(Debug, Clone, Default)]
pub struct IngestionQueue {
    inner: Arc<Mutex<Vec<Queued>>>,
}

impl IngestionQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, item: Queued) {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).push(item);
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Take everything queued, ordered by (cycle, predictor, index)
    /// regardless of arrival order.
    pub fn drain(&self) -> Vec<Queued> {
        let mut items = std::mem::take(&mut *self.inner.lock().unwrap_or_else(|e| e.into_inner()));
        items.sort_by(|a, b| (a.cycle, &a.predictor, a.index).cmp(&(b.cycle, &b.predictor, b.index)));
        items
    }
}
