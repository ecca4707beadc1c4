//! The generative-network seam.
//!
//! Every cycle the runtime broadcasts the context vector (plus its top
//! decoded symbols) to each registered predictor. Predictors answer with
//! tagged [`Prediction`]s that land in an [`IngestionQueue`]; the queue is
//! drained only at the start of the next cycle, and everything drained goes
//! into Middle Memory. Nothing a predictor says reaches a buffer directly.
//!
//! Two reference predictors run inline ([`NgramPredictor`],
//! [`AssociativePredictor`]); [`ExternalPredictor`] speaks newline-delimited
//! JSON to a child process or a TCP peer.

mod associative;
mod external;
mod ngram;
mod queue;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use associative::AssociativePredictor;
pub use external::{parse_wire_prediction, ContextMessage, ExternalPredictor};
pub use ngram::NgramPredictor;
pub use queue::{IngestionQueue, Queued, QueuedItem};

use crate::chunk::{ChunkContent, Symbol};
use crate::codec::HoloVector;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("predictor {0} is stalled")]
    Stalled(Symbol),
    #[error("cannot start predictor {name}: {source}")]
    Spawn {
        name: Symbol,
        #[source]
        source: std::io::Error,
    },
    #[error("predictor {name}: {reason}")]
    Config { name: Symbol, reason: String },
}

/// One output of a predictor, tagged with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tag: Symbol,
    pub vector: Option<HoloVector>,
    pub chunk: Option<ChunkContent>,
    pub salience: f64,
    pub cycle: u64,
}

/// What every predictor receives each cycle.
#[derive(Debug, Clone, Copy)]
pub struct Delivery<'a> {
    pub cycle: u64,
    pub vector: &'a HoloVector,
    /// Set when the context was empty; `vector` is all zeros.
    pub zero: bool,
    /// Most salient decoded symbols, strongest first.
    pub symbols: &'a [Symbol],
}

pub trait Predictor: Send {
    fn name(&self) -> &Symbol;
    fn tag(&self) -> &Symbol;

    /// Hand the context to the predictor. Inline predictors return their
    /// emissions directly; asynchronous ones return nothing here and push
    /// into the ingestion queue instead.
    fn deliver(&mut self, delivery: &Delivery) -> Result<Vec<Prediction>, PredictorError>;

    fn is_stalled(&self) -> bool {
        false
    }
}

/// Chunk shape used to turn a predicted symbol into MM content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitShape {
    pub isa: Symbol,
    pub slot: Symbol,
}

impl EmitShape {
    pub fn chunk(&self, value: &Symbol) -> ChunkContent {
        ChunkContent::new(self.isa.clone(), vec![(self.slot.clone(), value.clone())]).expect("slot is not isa")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredictorKind {
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        /// Whitespace-separated token sequences.
        corpus: Vec<String>,
    },
    Associative {
        /// `[a, b, count]` co-occurrence triples; symmetric.
        pairs: Vec<(Symbol, Symbol, u64)>,
    },
    External(Endpoint),
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Endpoint {
    /// Program and arguments; spoken to over stdin/stdout.
    Command(Vec<String>),
    /// `host:port`.
    Tcp(String),
}

/// A predictor as declared in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorBinding {
    pub name: Symbol,
    pub tag: Symbol,
    pub kind: PredictorKind,
    #[serde(default = "default_rate")]
    pub rate: u32,
    #[serde(default)]
    pub seed: u64,
    /// Buffer this predictor's module feeds in pipeline mode.
    pub module: Symbol,
    pub emit: EmitShape,
}

fn default_rate() -> u32 {
    1
}

impl PredictorBinding {
    pub fn build(&self, queue: &IngestionQueue) -> Result<Box<dyn Predictor>, PredictorError> {
        Ok(match &self.kind {
            PredictorKind::Ngram { order, corpus } => Box::new(NgramPredictor::train(self, *order, corpus)?),
            PredictorKind::Associative { pairs } => Box::new(AssociativePredictor::new(self, pairs)),
            PredictorKind::External(endpoint) => Box::new(ExternalPredictor::connect(self, endpoint, queue.clone())?),
        })
    }
}

/// Rank `(symbol, score)` candidates by score desc, then symbol asc, and
/// keep the best `n`.
pub(crate) fn top_n(mut scored: Vec<(Symbol, f64)>, n: usize) -> Vec<(Symbol, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}
