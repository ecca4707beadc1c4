use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    Delivery, Endpoint, IngestionQueue, Prediction, Predictor, PredictorBinding, PredictorError, Queued, QueuedItem,
};
use crate::chunk::{ChunkContent, Symbol};
use crate::codec::HoloVector;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

/// Runtime-to-predictor message, one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub cycle: u64,
    pub dim: usize,
    pub vector: Vec<f64>,
    pub symbols: Vec<Symbol>,
    pub zero: bool,
}

impl ContextMessage {
    pub fn from_delivery(d: &Delivery) -> Self {
        Self {
            kind: "context".into(),
            cycle: d.cycle,
            dim: d.vector.dim(),
            vector: d.vector.as_slice().to_vec(),
            symbols: d.symbols.to_vec(),
            zero: d.zero,
        }
    }
}

#[derive(Deserialize)]
struct WirePrediction {
    #[serde(rename = "type")]
    kind: String,
    tag: Symbol,
    salience: f64,
    #[serde(default)]
    chunk: Option<ChunkContent>,
    #[serde(default)]
    vector: Option<Vec<f64>>,
}

/// Parse one predictor-to-runtime line. Unknown fields are ignored; a tag
/// other than `expected_tag` is rejected.
pub fn parse_wire_prediction(line: &str, expected_tag: &Symbol, cycle: u64) -> Result<Prediction, String> {
    let w: WirePrediction = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if w.kind != "prediction" {
        return Err(format!("unexpected message type {:?}", w.kind));
    }
    if &w.tag != expected_tag {
        return Err(format!("tag {} does not match binding tag {}", w.tag, expected_tag));
    }
    if !w.salience.is_finite() || !(0.0..=1.0).contains(&w.salience) {
        return Err(format!("salience {} outside [0, 1]", w.salience));
    }
    if w.chunk.is_none() && w.vector.is_none() {
        return Err("prediction carries neither chunk nor vector".into());
    }
    let vector = w
        .vector
        .map(|v| HoloVector::new(v).map_err(|_| "vector has non-finite components".to_string()))
        .transpose()?;
    Ok(Prediction {
        tag: w.tag,
        vector,
        chunk: w.chunk,
        salience: w.salience,
        cycle,
    })
}

/// A predictor living in another process, reached over stdin/stdout or TCP.
///
/// Delivery never blocks: context lines go to a writer thread, and a reader
/// thread pushes whatever comes back into the ingestion queue stamped with
/// the latest delivered cycle. Any I/O failure marks the predictor stalled;
/// it is then skipped for the rest of the run.
pub struct ExternalPredictor {
    name: Symbol,
    tag: Symbol,
    tx: Option<mpsc::Sender<String>>,
    stalled: Arc<AtomicBool>,
    cycle: Arc<AtomicU64>,
    child: Option<Child>,
}

impl ExternalPredictor {
    pub fn connect(
        binding: &PredictorBinding,
        endpoint: &Endpoint,
        queue: IngestionQueue,
    ) -> Result<Self, PredictorError> {
        let spawn_err = |source| PredictorError::Spawn {
            name: binding.name.clone(),
            source,
        };
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Command(argv) => {
                let (prog, args) = argv.split_first().ok_or_else(|| PredictorError::Config {
                    name: binding.name.clone(),
                    reason: "empty command".into(),
                })?;
                let mut child = Command::new(prog)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(spawn_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdout), Box::new(stdin), Some(child))
            }
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(spawn_err)?
                    .next()
                    .ok_or_else(|| PredictorError::Config {
                        name: binding.name.clone(),
                        reason: format!("cannot resolve {addr}"),
                    })?;
                let stream = TcpStream::connect_timeout(&sock, CONNECT_TIMEOUT).map_err(spawn_err)?;
                let _ = stream.set_nodelay(true);
                let read_half = stream.try_clone().map_err(spawn_err)?;
                (Box::new(read_half), Box::new(stream), None)
            }
        };

        let stalled = Arc::new(AtomicBool::new(false));
        let cycle = Arc::new(AtomicU64::new(0));
        let (tx, rx) = mpsc::channel::<String>();

        let mark_stalled = {
            let stalled = stalled.clone();
            let queue = queue.clone();
            let name = binding.name.clone();
            let cycle = cycle.clone();
            move |reason: String| {
                if !stalled.swap(true, Ordering::SeqCst) {
                    queue.push(Queued {
                        cycle: cycle.load(Ordering::SeqCst),
                        predictor: name.clone(),
                        index: u64::MAX,
                        item: QueuedItem::Stalled { reason },
                    });
                }
            }
        };

        {
            let mark = mark_stalled.clone();
            let mut writer = writer;
            thread::spawn(move || {
                for line in rx {
                    if let Err(e) = writer.write_all(line.as_bytes()).and_then(|_| writer.flush()) {
                        mark(format!("write failed: {e}"));
                        return;
                    }
                }
            });
        }
        {
            let tag = binding.tag.clone();
            let name = binding.name.clone();
            let cycle = cycle.clone();
            let mark = mark_stalled;
            thread::spawn(move || {
                let mut index = 0u64;
                for line in BufReader::new(reader).lines() {
                    let line = match line {
                        Ok(l) => l,
                        Err(e) => {
                            mark(format!("read failed: {e}"));
                            return;
                        }
                    };
                    if line.trim().is_empty() {
                        continue;
                    }
                    let at = cycle.load(Ordering::SeqCst);
                    let item = match parse_wire_prediction(&line, &tag, at) {
                        Ok(p) => QueuedItem::Prediction(p),
                        Err(reason) => QueuedItem::Malformed { raw: line, reason },
                    };
                    queue.push(Queued {
                        cycle: at,
                        predictor: name.clone(),
                        index,
                        item,
                    });
                    index += 1;
                }
                mark("connection closed".into());
            });
        }

        Ok(Self {
            name: binding.name.clone(),
            tag: binding.tag.clone(),
            tx: Some(tx),
            stalled,
            cycle,
            child,
        })
    }
}

impl Predictor for ExternalPredictor {
    fn name(&self) -> &Symbol {
        &self.name
    }

    fn tag(&self) -> &Symbol {
        &self.tag
    }

    fn deliver(&mut self, d: &Delivery) -> Result<Vec<Prediction>, PredictorError> {
        if self.is_stalled() {
            return Err(PredictorError::Stalled(self.name.clone()));
        }
        self.cycle.store(d.cycle, Ordering::SeqCst);
        let mut line = serde_json::to_string(&ContextMessage::from_delivery(d)).expect("context serializes");
        line.push('\n');
        let sent = self.tx.as_ref().is_some_and(|tx| tx.send(line).is_ok());
        if !sent {
            self.stalled.store(true, Ordering::SeqCst);
            return Err(PredictorError::Stalled(self.name.clone()));
        }
        Ok(Vec::new())
    }

    fn is_stalled(&self) -> bool {
        self.stalled.load(Ordering::SeqCst)
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        // Closing the channel ends the writer thread, which closes stdin.
        self.tx.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
