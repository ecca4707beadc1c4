use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{Bindings, ChunkContent, ChunkId, Symbol};
use crate::memory::{BufferContent, EntryId};
use crate::production::Matched;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Predictions go to Middle Memory and are filtered by shadow systems.
    Mm,
    /// Predictions go straight into module buffers and pile up in inflow
    /// lists that the central engine must scan.
    Pipeline,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mm" => Ok(Mode::Mm),
            "pipeline" => Ok(Mode::Pipeline),
            other => Err(format!("unknown mode {other:?} (expected mm or pipeline)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Mm => "mm",
            Mode::Pipeline => "pipeline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub seed: u64,
    pub mode: Mode,
    pub cycle_length_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltReason {
    HaltAction,
    CyclesExhausted,
}

/// One member of the central conflict set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEntry {
    pub production: Symbol,
    pub utility: f64,
    pub matched: Vec<Matched>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Deposit {
        entry: EntryId,
        tag: Symbol,
        origin: Symbol,
        created: bool,
        content: Option<ChunkContent>,
        salience: f64,
    },
    /// Pipeline mode: a prediction written straight into its module buffer.
    Inflow {
        buffer: Symbol,
        chunk: ChunkId,
        origin: Symbol,
        tag: Symbol,
        content: ChunkContent,
        salience: f64,
        backlog: usize,
    },
    ShadowFire {
        system: Symbol,
        production: Symbol,
        conflict: Vec<Symbol>,
    },
    QueryAnswer {
        system: Symbol,
        query: ChunkId,
        entry: Option<EntryId>,
    },
    CentralMatch {
        candidates: u64,
        conflict: Vec<ConflictEntry>,
    },
    CentralFire {
        production: Symbol,
        bindings: Bindings,
        matched: Vec<Matched>,
    },
    Idle,
    WmWrite {
        writer: Symbol,
        buffer: Symbol,
        /// `None` for a clear.
        content: Option<BufferContent>,
        urgent: bool,
    },
    Forget {
        entry: EntryId,
        tag: Symbol,
        activation: f64,
    },
    Reward {
        amount: f64,
        /// The central production that emitted it; `None` when scheduled.
        production: Option<Symbol>,
    },
    UtilityUpdate {
        production: Symbol,
        owner: Symbol,
        before: f64,
        after: f64,
        effective_reward: f64,
        made_permanent: bool,
    },
    Interrupt {
        system: Symbol,
        buffer: Symbol,
        chunk: ChunkId,
    },
    Consumption {
        system: Symbol,
        production: Symbol,
        buffer: Symbol,
        chunk: ChunkId,
        deposit_cycle: u64,
    },
    Context {
        zero: bool,
        wm_sources: usize,
        mm_sources: usize,
        mm_size: usize,
        symbols: Vec<Symbol>,
    },
    Delivery {
        predictor: Symbol,
        stalled: bool,
        zero: bool,
    },
    ProductionFormed {
        production: Symbol,
        owner: Symbol,
        entry: EntryId,
        activation: f64,
    },
    ProductionPruned {
        production: Symbol,
        owner: Symbol,
        utility: f64,
    },
    Warning {
        message: String,
    },
    Error {
        message: String,
        raw: Option<String>,
    },
    Halt {
        reason: HaltReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("empty trace: missing header")]
    MissingHeader,
    #[error("unsupported trace version {0} (this build reads version {TRACE_VERSION})")]
    UnsupportedVersion(u32),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is truncated after line {last_good_line}")]
    Truncated { last_good_line: usize },
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    pub fn halt(&self) -> Option<HaltReason> {
        match self.events.last().map(|e| &e.kind) {
            Some(EventKind::Halt { reason }) => Some(*reason),
            _ => None,
        }
    }

    pub fn write_to(&self, mut out: impl Write) -> io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parse a trace. A file must end with a newline-terminated halt event;
    /// anything short of that is reported as truncated.
    pub fn read_from(input: impl BufRead) -> Result<Self, TraceError> {
        let mut lines = split_lines(input)?.into_iter();
        let (first, terminated) = lines.next().ok_or(TraceError::MissingHeader)?;
        let header = parse_header(&first)?;
        if !terminated {
            return Err(TraceError::Truncated { last_good_line: 0 });
        }
        let mut trace = Trace::new(header);
        let mut last_good = 1;
        for (i, (line, terminated)) in lines.enumerate() {
            let n = i + 2;
            let event: TraceEvent = match serde_json::from_str(&line) {
                Ok(e) => e,
                Err(_) if !terminated => {
                    return Err(TraceError::Truncated {
                        last_good_line: last_good,
                    })
                }
                Err(e) => {
                    return Err(TraceError::Parse {
                        line: n,
                        message: e.to_string(),
                    })
                }
            };
            if !terminated {
                return Err(TraceError::Truncated {
                    last_good_line: last_good,
                });
            }
            trace.events.push(event);
            last_good = n;
        }
        if trace.halt().is_none() {
            return Err(TraceError::Truncated {
                last_good_line: last_good,
            });
        }
        Ok(trace)
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        Self::read_from(text.as_bytes())
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, TraceError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| TraceError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != TRACE_VERSION as u64 {
            return Err(TraceError::UnsupportedVersion(v as u32));
        }
    }
    serde_json::from_value(value).map_err(|e| TraceError::Parse {
        line: 1,
        message: e.to_string(),
    })
}

/// Lines with a flag telling whether each ended in `\n`.
fn split_lines(mut input: impl BufRead) -> io::Result<Vec<(String, bool)>> {
    let mut out = Vec::new();
    loop {
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(out);
        }
        let terminated = line.ends_with('\n');
        if terminated {
            line.pop();
        }
        out.push((line, terminated));
    }
}
