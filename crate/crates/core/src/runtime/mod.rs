//! The cycle scheduler.
//!
//! Each cycle runs the same fixed phases:
//!
//! 1. drain the ingestion queue (and scripted stimuli) into Middle Memory,
//!    or, in pipeline mode, straight into module buffers and inflow lists;
//! 2. sweep Middle Memory, refreshing activations and forgetting;
//! 3. step every shadow system (mm mode only);
//! 4. central match, resolve and fire;
//! 5. record which shadow deposits the central firing consumed;
//! 6. deliver rewards to the utility learner and propagate shadow credit;
//! 7. form and prune provisional retrieval productions;
//! 8. build the context vector and broadcast it to every predictor;
//! 9. advance the clock.
//!
//! Every step appends to a [`Trace`]; identical (model, seed, mode, cycles)
//! give byte-identical traces.

mod metrics;
mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

pub use metrics::{metrics, RunMetrics};
pub use trace::{
    ConflictEntry, EventKind, HaltReason, Mode, Trace, TraceError, TraceEvent, TraceHeader, TRACE_VERSION,
};

use crate::chunk::{Chunk, ChunkContent, IdGen, Query, Symbol};
use crate::codec::{Codebook, CodecError};
use crate::memory::{central, context_vector, BufferContent, MemoryError, MiddleMemory, Payload, WorkingMemory};
use crate::model::{Model, ModelError};
use crate::predictor::{Delivery, IngestionQueue, Predictor, PredictorBinding, PredictorError, QueuedItem};
use crate::production::{
    fire, form_retrieval_production, match_all, prune_provisional, resolve, Effect, MatchContext, NoMm, PlannedContent,
    Production, ProductionError, UtilityLearner, UtilityUpdate,
};
use crate::shadow::{shadow_step, Contribution, ContributionLedger, ShadowStep, ShadowSystem};
use crate::time::SimTime;

const STIMULUS: &str = "stimulus";
const INITIAL: &str = "initial";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Production(#[from] ProductionError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("the run has already halted")]
    Finished,
}

/// Simulated clock in whole milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clock {
    cycle: u64,
    cycle_length_ms: i64,
}

impl Clock {
    pub fn new(cycle_length_ms: i64) -> Self {
        assert!(cycle_length_ms > 0);
        Self {
            cycle: 0,
            cycle_length_ms,
        }
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn cycle_length_ms(&self) -> i64 {
        self.cycle_length_ms
    }

    pub fn now(&self) -> SimTime {
        SimTime::from_millis(self.cycle as i64 * self.cycle_length_ms)
    }

    fn advance(&mut self) {
        self.cycle += 1;
    }
}

/// Deterministically combine two seeds (splitmix64 finalizer).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A content item arriving in phase 1.
struct Arrival {
    origin: Symbol,
    tag: Symbol,
    chunk: Option<ChunkContent>,
    vector: Option<crate::codec::HoloVector>,
    salience: f64,
    module: Option<Symbol>,
}

pub struct Runtime {
    model: Model,
    mode: Mode,
    book: Codebook,
    roles: BTreeSet<Symbol>,
    clock: Clock,
    ids: IdGen,
    wm: WorkingMemory,
    mm: MiddleMemory,
    central: Vec<Production>,
    shadows: Vec<ShadowSystem>,
    learner: UtilityLearner,
    ledger: ContributionLedger,
    queue: IngestionQueue,
    predictors: Vec<(PredictorBinding, Box<dyn Predictor>)>,
    inflow: BTreeMap<Symbol, Vec<Chunk>>,
    trace: Trace,
    seq: u64,
    halt_requested: bool,
    finished: bool,
    warned: BTreeSet<Symbol>,
    shadow_order: Vec<usize>,
    last_conflict: Vec<Symbol>,
}

impl Runtime {
    /// Validate the model and set up the initial state. Initial working
    /// and middle memory contents are logged at cycle 0.
    pub fn new(model: Model, mode: Mode, seed: u64) -> Result<Self, RuntimeError> {
        model.check()?;
        let queue = IngestionQueue::new();
        let predictors = model
            .predictors
            .iter()
            .map(|b| Ok((b.clone(), b.build(&queue)?)))
            .collect::<Result<Vec<_>, PredictorError>>()?;
        let mut wm = WorkingMemory::new(model.memory.wm_capacity);
        for b in &model.buffers {
            wm.add_buffer(b.name.clone(), b.owner.clone())?;
        }
        let header = TraceHeader {
            version: TRACE_VERSION,
            seed,
            mode,
            cycle_length_ms: model.clock.cycle_length_ms,
        };
        let mut rt = Self {
            book: Codebook::new(model.codebook.dimension, mix_seed(model.codebook.seed, seed)),
            roles: BTreeSet::from([Symbol::isa()]),
            clock: Clock::new(model.clock.cycle_length_ms),
            ids: IdGen::new(),
            wm,
            mm: MiddleMemory::with_seed(model.memory.mm_params(), mix_seed(seed, 0x6d6d)),
            central: model.central_productions(),
            shadows: model.shadow_systems(),
            learner: UtilityLearner::from_params(&model.learning),
            ledger: ContributionLedger::new(),
            queue,
            predictors,
            inflow: BTreeMap::new(),
            trace: Trace::new(header),
            seq: 0,
            halt_requested: false,
            finished: false,
            warned: BTreeSet::new(),
            shadow_order: (0..model.shadow_systems.len()).collect(),
            last_conflict: Vec::new(),
            mode,
            model,
        };
        rt.collect_roles();
        rt.load_initial_state()?;
        Ok(rt)
    }

    fn collect_roles(&mut self) {
        let mut roles = BTreeSet::new();
        let mut add_query = |q: &Query| roles.extend(q.slots().iter().map(|(k, _)| k.clone()));
        for p in self
            .central
            .iter()
            .chain(self.shadows.iter().flat_map(|s| &s.productions))
        {
            for c in &p.conditions {
                add_query(&c.pattern);
            }
            for a in &p.actions {
                if let crate::production::Action::WriteBuffer { template, .. }
                | crate::production::Action::PostQuery { template, .. } = a
                {
                    add_query(template);
                }
            }
        }
        let m = &self.model;
        let contents = m
            .stimuli
            .iter()
            .map(|s| &s.chunk)
            .chain(m.initial_wm.iter().map(|w| &w.chunk))
            .chain(m.initial_mm.iter().map(|e| &e.chunk));
        for c in contents {
            roles.extend(c.slots().iter().map(|(k, _)| k.clone()));
        }
        roles.extend(m.predictors.iter().map(|p| p.emit.slot.clone()));
        self.roles.extend(roles);
    }

    fn note_roles(&mut self, c: &ChunkContent) {
        for (k, _) in c.slots() {
            if !self.roles.contains(k) {
                self.roles.insert(k.clone());
            }
        }
    }

    fn load_initial_state(&mut self) -> Result<(), RuntimeError> {
        for w in self.model.initial_wm.clone() {
            let owner = self.wm.get(&w.buffer).expect("validated buffer").owner().clone();
            let chunk = self.ids.chunk(w.chunk);
            let write = self.wm.write(&owner, &w.buffer, BufferContent::Chunk(chunk), false)?;
            self.emit(EventKind::WmWrite {
                writer: write.writer,
                buffer: write.buffer,
                content: write.content,
                urgent: false,
            });
        }
        // Presentations must go in time order across all entries.
        let mut presentations: Vec<(SimTime, usize)> = Vec::new();
        for (i, e) in self.model.initial_mm.iter().enumerate() {
            presentations.extend(e.ages_ms.iter().map(|a| (SimTime::from_millis(-a), i)));
        }
        presentations.sort();
        let mut entry_of = BTreeMap::new();
        let origin = Symbol::lit(INITIAL);
        for (t, i) in presentations {
            let e = self.model.initial_mm[i].clone();
            let d = self.mm.deposit(Payload::Chunk(e.chunk.clone()), e.tag.clone(), t)?;
            entry_of.insert(i, d.id);
            self.emit(EventKind::Deposit {
                entry: d.id,
                tag: e.tag,
                origin: origin.clone(),
                created: d.created,
                content: Some(e.chunk),
                salience: 1.0,
            });
        }
        for (a, b) in self.model.initial_links.clone() {
            self.mm.link(entry_of[&a], entry_of[&b])?;
        }
        Ok(())
    }

    fn emit(&mut self, kind: EventKind) {
        self.trace.events.push(TraceEvent {
            cycle: self.clock.cycle(),
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn wm(&self) -> &WorkingMemory {
        &self.wm
    }

    pub fn mm(&self) -> &MiddleMemory {
        &self.mm
    }

    pub fn codebook(&self) -> &Codebook {
        &self.book
    }

    pub fn central_productions(&self) -> &[Production] {
        &self.central
    }

    pub fn shadow_systems(&self) -> &[ShadowSystem] {
        &self.shadows
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Step shadow systems in this order instead of declaration order.
    /// Results must not depend on it.
    pub fn set_shadow_order(&mut self, order: Vec<usize>) {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..self.shadows.len()).collect::<Vec<_>>(), "not a permutation");
        self.shadow_order = order;
    }

    /// Run `cycles` cycles (fewer if a halt action fires), then close the
    /// trace.
    pub fn run(&mut self, cycles: u64) -> Result<(), RuntimeError> {
        for _ in 0..cycles {
            if self.finished {
                break;
            }
            self.step()?;
        }
        self.finish();
        Ok(())
    }

    /// Close the trace with a halt event if the run has not halted itself.
    pub fn finish(&mut self) {
        if !self.finished {
            self.emit(EventKind::Halt {
                reason: HaltReason::CyclesExhausted,
            });
            self.finished = true;
        }
    }

    /// Execute one cycle.
    pub fn step(&mut self) -> Result<(), RuntimeError> {
        if self.finished {
            return Err(RuntimeError::Finished);
        }
        let cycle = self.clock.cycle();
        let now = self.clock.now();

        self.phase_ingest(cycle, now)?;

        for f in self.mm.sweep(&self.wm, now)? {
            self.emit(EventKind::Forget {
                entry: f.id,
                tag: f.tag,
                activation: f.activation,
            });
        }

        let snapshot = self.wm.clone();
        if self.mode == Mode::Mm {
            self.phase_shadows(cycle, now, &snapshot)?;
        }

        let (rewards, matched) = self.phase_central(now, &snapshot)?;

        for c in self.ledger.record_consumption(&matched, cycle) {
            self.emit(EventKind::Consumption {
                system: c.system,
                production: c.production,
                buffer: c.buffer,
                chunk: c.chunk,
                deposit_cycle: c.cycle,
            });
        }

        let scheduled: Vec<f64> = self
            .model
            .rewards
            .iter()
            .filter(|r| r.cycle == cycle)
            .map(|r| r.amount)
            .collect();
        let all = rewards.into_iter().chain(scheduled.into_iter().map(|a| (a, None)));
        for (amount, production) in all.collect::<Vec<_>>() {
            self.deliver_reward(amount, production, now);
        }

        if self.mode == Mode::Mm {
            self.phase_formation(now);
        }

        self.phase_broadcast(cycle, now)?;

        self.clock.advance();
        if self.halt_requested {
            self.trace.events.push(TraceEvent {
                cycle,
                seq: self.seq,
                kind: EventKind::Halt {
                    reason: HaltReason::HaltAction,
                },
            });
            self.seq += 1;
            self.finished = true;
        }
        Ok(())
    }

    fn phase_ingest(&mut self, cycle: u64, now: SimTime) -> Result<(), RuntimeError> {
        let stamp = now - self.clock.cycle_length_ms();
        let mut arrivals = Vec::new();
        for q in self.queue.drain() {
            match q.item {
                QueuedItem::Prediction(p) => {
                    let module = self
                        .predictors
                        .iter()
                        .find(|(b, _)| b.name == q.predictor)
                        .map(|(b, _)| b.module.clone());
                    arrivals.push(Arrival {
                        origin: q.predictor,
                        tag: p.tag,
                        chunk: p.chunk,
                        vector: p.vector,
                        salience: p.salience,
                        module,
                    });
                }
                QueuedItem::Malformed { raw, reason } => self.emit(EventKind::Error {
                    message: format!("predictor {}: {reason}", q.predictor),
                    raw: Some(raw),
                }),
                QueuedItem::Stalled { reason } => self.warn_stalled(&q.predictor, &reason),
            }
        }
        for s in &self.model.stimuli {
            if s.fires_at(cycle) {
                arrivals.push(Arrival {
                    origin: Symbol::lit(STIMULUS),
                    tag: s.tag.clone(),
                    chunk: Some(s.chunk.clone()),
                    vector: None,
                    salience: s.salience,
                    module: s.module.clone(),
                });
            }
        }
        for a in arrivals {
            if let Some(c) = &a.chunk {
                self.note_roles(c);
            }
            if let Some(v) = &a.vector {
                if v.dim() != self.book.dim() {
                    self.emit(EventKind::Error {
                        message: format!(
                            "{}: vector of dimension {} dropped (codebook dimension {})",
                            a.origin,
                            v.dim(),
                            self.book.dim()
                        ),
                        raw: None,
                    });
                    continue;
                }
            }
            match (self.mode, &a.module, &a.chunk) {
                (Mode::Pipeline, Some(module), Some(content)) => {
                    let owner = self.wm.get(module).expect("validated module").owner().clone();
                    let chunk = self.ids.chunk(content.clone());
                    let list = self.inflow.entry(module.clone()).or_default();
                    list.push(chunk.clone());
                    let backlog = list.len();
                    self.emit(EventKind::Inflow {
                        buffer: module.clone(),
                        chunk: chunk.id(),
                        origin: a.origin.clone(),
                        tag: a.tag.clone(),
                        content: content.clone(),
                        salience: a.salience,
                        backlog,
                    });
                    let w = self.wm.write(&owner, module, BufferContent::Chunk(chunk), false)?;
                    self.ledger.discard_unconsumed(module);
                    self.emit(EventKind::WmWrite {
                        writer: w.writer,
                        buffer: w.buffer,
                        content: w.content,
                        urgent: false,
                    });
                }
                (Mode::Pipeline, Some(_), None) => self.emit(EventKind::Warning {
                    message: format!("{}: vector-only prediction cannot enter a buffer; dropped", a.origin),
                }),
                _ => {
                    let payload = match (a.vector, a.chunk.clone()) {
                        (Some(vector), decoded) => Payload::Vector { vector, decoded },
                        (None, Some(c)) => Payload::Chunk(c),
                        (None, None) => continue,
                    };
                    let d = self.mm.deposit(payload, a.tag.clone(), stamp)?;
                    self.emit(EventKind::Deposit {
                        entry: d.id,
                        tag: a.tag,
                        origin: a.origin,
                        created: d.created,
                        content: a.chunk,
                        salience: a.salience,
                    });
                }
            }
        }
        Ok(())
    }

    fn warn_stalled(&mut self, predictor: &Symbol, reason: &str) {
        if self.warned.insert(predictor.clone()) {
            self.emit(EventKind::Warning {
                message: format!("predictor {predictor} stalled: {reason}; skipping it from now on"),
            });
        }
    }

    fn phase_shadows(&mut self, cycle: u64, now: SimTime, snapshot: &WorkingMemory) -> Result<(), RuntimeError> {
        // Plan every system against the same snapshot; only a system's own
        // buffer changes between its repeated steps.
        let mut plans: Vec<Vec<ShadowStep>> = vec![Vec::new(); self.shadows.len()];
        let mut scratch_ids = IdGen::starting_at(u64::MAX / 2);
        for &i in &self.shadow_order.clone() {
            let sys = &mut self.shadows[i];
            let mut local = snapshot.clone();
            for _ in 0..sys.rate {
                let Some(step) = shadow_step(sys, &local, &self.mm, now)? else {
                    break;
                };
                apply_local(&mut local, sys, &step, &mut scratch_ids)?;
                plans[i].push(step);
            }
        }
        for (i, steps) in plans.into_iter().enumerate() {
            for step in steps {
                self.apply_shadow_step(i, cycle, now, step)?;
            }
        }
        Ok(())
    }

    fn apply_shadow_step(&mut self, i: usize, cycle: u64, now: SimTime, step: ShadowStep) -> Result<(), RuntimeError> {
        let system = self.shadows[i].name.clone();
        let buffer = self.shadows[i].buffer.clone();
        let (production, effects) = match step {
            ShadowStep::Answered { query, entry, content } => {
                self.emit(EventKind::QueryAnswer {
                    system: system.clone(),
                    query,
                    entry,
                });
                (
                    None,
                    vec![Effect::Write {
                        buffer: buffer.clone(),
                        content: PlannedContent::Chunk(content),
                        urgent: false,
                    }],
                )
            }
            ShadowStep::Fired { firing, conflict, .. } => {
                self.emit(EventKind::ShadowFire {
                    system: system.clone(),
                    production: firing.production.clone(),
                    conflict,
                });
                (Some(firing.production), firing.effects)
            }
        };
        for effect in effects {
            match effect {
                Effect::Write {
                    buffer: target,
                    content,
                    urgent,
                } => {
                    let content = self.realize(content);
                    let id = content.id();
                    let is_chunk = content.chunk().is_some();
                    let w = self.wm.write(&system, &target, content, urgent)?;
                    self.emit(EventKind::WmWrite {
                        writer: w.writer,
                        buffer: w.buffer,
                        content: w.content,
                        urgent,
                    });
                    match (&production, is_chunk) {
                        (Some(p), true) => self.ledger.record_deposit(Contribution {
                            system: system.clone(),
                            production: p.clone(),
                            buffer: target.clone(),
                            chunk: id,
                            cycle,
                            deposited_at: now,
                            consumed: None,
                        }),
                        _ => self.ledger.discard_unconsumed(&target),
                    }
                    if urgent {
                        self.emit(EventKind::Interrupt {
                            system: system.clone(),
                            buffer: target,
                            chunk: id,
                        });
                    }
                }
                Effect::Clear { buffer: target } => {
                    let w = self.wm.clear(&system, &target)?;
                    self.ledger.discard_unconsumed(&target);
                    self.emit(EventKind::WmWrite {
                        writer: w.writer,
                        buffer: w.buffer,
                        content: None,
                        urgent: false,
                    });
                }
                Effect::Reward(_) | Effect::Halt => {
                    self.emit(EventKind::Error {
                        message: format!("shadow system {system} may only act on its own buffer; action ignored"),
                        raw: None,
                    });
                }
            }
        }
        Ok(())
    }

    fn realize(&mut self, content: PlannedContent) -> BufferContent {
        match content {
            PlannedContent::Chunk(c) => {
                self.note_roles(&c);
                BufferContent::Chunk(self.ids.chunk(c))
            }
            PlannedContent::Query(pattern) => BufferContent::Query {
                id: self.ids.next_id(),
                pattern,
            },
        }
    }

    /// Returns rewards emitted by the firing and what it matched.
    #[allow(clippy::type_complexity)]
    fn phase_central(
        &mut self,
        now: SimTime,
        snapshot: &WorkingMemory,
    ) -> Result<(Vec<(f64, Option<Symbol>)>, Vec<crate::production::Matched>), RuntimeError> {
        let pipeline = self.mode == Mode::Pipeline;
        let view = if pipeline { &self.wm } else { snapshot };
        let ctx = MatchContext {
            inflow: pipeline.then_some(&self.inflow),
            ..MatchContext::new(view, &NoMm)
        };
        let outcome = match_all(&self.central, &ctx);
        self.last_conflict = outcome.conflict.iter().map(|i| i.production.clone()).collect();
        self.emit(EventKind::CentralMatch {
            candidates: outcome.candidates,
            conflict: outcome
                .conflict
                .iter()
                .map(|i| ConflictEntry {
                    production: i.production.clone(),
                    utility: i.utility,
                    matched: i.matched.clone(),
                })
                .collect(),
        });
        let Some(winner) = resolve(&outcome.conflict).cloned() else {
            self.emit(EventKind::Idle);
            return Ok((Vec::new(), Vec::new()));
        };
        let firing = fire(&mut self.central[winner.index], &winner, now)?;
        self.learner.record(firing.production.clone(), now);
        self.emit(EventKind::CentralFire {
            production: firing.production.clone(),
            bindings: firing.bindings.clone(),
            matched: winner.matched.clone(),
        });
        let writer = central();
        let mut rewards = Vec::new();
        for effect in firing.effects {
            match effect {
                Effect::Write {
                    buffer,
                    content,
                    urgent,
                } => {
                    let content = self.realize(content);
                    let w = self.wm.write(&writer, &buffer, content, urgent)?;
                    self.ledger.discard_unconsumed(&buffer);
                    self.emit(EventKind::WmWrite {
                        writer: w.writer,
                        buffer: w.buffer,
                        content: w.content,
                        urgent,
                    });
                }
                Effect::Clear { buffer } => {
                    let w = self.wm.clear(&writer, &buffer)?;
                    self.ledger.discard_unconsumed(&buffer);
                    self.emit(EventKind::WmWrite {
                        writer: w.writer,
                        buffer: w.buffer,
                        content: None,
                        urgent: false,
                    });
                }
                Effect::Reward(amount) => rewards.push((amount, Some(firing.production.clone()))),
                Effect::Halt => self.halt_requested = true,
            }
        }
        Ok((rewards, winner.matched))
    }

    fn deliver_reward(&mut self, amount: f64, production: Option<Symbol>, now: SimTime) {
        self.emit(EventKind::Reward { amount, production });
        let central_updates = self.learner.update(&mut self.central, amount, now);
        for u in central_updates {
            self.emit_update(u, central());
        }
        let shadow_updates = self
            .ledger
            .propagate_credit(&self.learner, &mut self.shadows, amount, now);
        for u in shadow_updates {
            let owner = self
                .shadows
                .iter()
                .find(|s| s.productions.iter().any(|p| p.name == u.production))
                .map(|s| s.name.clone())
                .expect("credited production exists");
            self.emit_update(u, owner);
        }
    }

    fn emit_update(&mut self, u: UtilityUpdate, owner: Symbol) {
        self.emit(EventKind::UtilityUpdate {
            production: u.production,
            owner,
            before: u.before,
            after: u.after,
            effective_reward: u.effective_reward,
            made_permanent: u.made_permanent,
        });
    }

    fn phase_formation(&mut self, now: SimTime) {
        let params = self.model.learning.clone();
        if params.formation {
            let mut formed = Vec::new();
            for entry in self.mm.entries() {
                let Some(si) = self.shadows.iter().position(|s| s.subscriptions.contains(entry.tag())) else {
                    continue;
                };
                let sys = &mut self.shadows[si];
                let activation = entry.cached_activation();
                if let Some(p) = form_retrieval_production(
                    entry,
                    activation,
                    &sys.name,
                    &sys.buffer,
                    &sys.productions,
                    params.formation_threshold,
                    now,
                ) {
                    formed.push(EventKind::ProductionFormed {
                        production: p.name.clone(),
                        owner: sys.name.clone(),
                        entry: entry.id(),
                        activation,
                    });
                    sys.productions.push(p);
                }
            }
            for e in formed {
                self.emit(e);
            }
        }
        let mut pruned = Vec::new();
        for sys in &mut self.shadows {
            for p in prune_provisional(&mut sys.productions, now, params.provisional_ttl_s) {
                pruned.push(EventKind::ProductionPruned {
                    production: p.name,
                    owner: p.owner,
                    utility: p.utility,
                });
            }
        }
        for e in pruned {
            self.emit(e);
        }
    }

    fn phase_broadcast(&mut self, cycle: u64, now: SimTime) -> Result<(), RuntimeError> {
        let ctx = context_vector(&self.wm, &self.mm, &self.book, now, self.model.context.wm_weight)?;
        let roles: Vec<Symbol> = self.roles.iter().cloned().collect();
        let symbols: Vec<Symbol> = self
            .book
            .decode_symbols(
                &ctx.vector,
                &roles,
                self.model.memory.cleanup_threshold,
                self.model.context.top_symbols,
            )?
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        self.emit(EventKind::Context {
            zero: ctx.zero,
            wm_sources: ctx.wm_sources,
            mm_sources: ctx.mm_sources,
            mm_size: self.mm.len(),
            symbols: symbols.clone(),
        });
        let delivery = Delivery {
            cycle,
            vector: &ctx.vector,
            zero: ctx.zero,
            symbols: &symbols,
        };
        let mut events = Vec::new();
        let mut stalled_now = Vec::new();
        for (binding, predictor) in &mut self.predictors {
            let stalled = match predictor.deliver(&delivery) {
                Ok(preds) => {
                    for (index, p) in preds.into_iter().enumerate() {
                        self.queue.push(crate::predictor::Queued {
                            cycle,
                            predictor: binding.name.clone(),
                            index: index as u64,
                            item: QueuedItem::Prediction(p),
                        });
                    }
                    false
                }
                Err(PredictorError::Stalled(_)) => {
                    stalled_now.push(binding.name.clone());
                    true
                }
                Err(e) => {
                    events.push(EventKind::Error {
                        message: e.to_string(),
                        raw: None,
                    });
                    false
                }
            };
            events.push(EventKind::Delivery {
                predictor: binding.name.clone(),
                stalled,
                zero: ctx.zero,
            });
        }
        for e in events {
            self.emit(e);
        }
        for name in stalled_now {
            self.warn_stalled(&name, "unreachable");
        }
        Ok(())
    }

    /// Human-readable state dump: buffers, the `k` most active MM entries,
    /// the last central conflict set and every utility.
    pub fn inspect(&self, k: usize) -> String {
        let mut out = String::new();
        let now = self.clock.now();
        let _ = writeln!(
            out,
            "model {}  mode {}  cycle {}  t={}",
            self.model.name,
            self.mode,
            self.clock.cycle(),
            now
        );
        let _ = writeln!(out, "working memory:");
        for b in self.wm.buffers() {
            let urgent = if b.is_urgent() { " urgent" } else { "" };
            let content = b.content().map_or("(empty)".to_string(), |c| c.to_string());
            let _ = writeln!(out, "  {} [{}]{}: {}", b.name(), b.owner(), urgent, content);
        }
        let mut ranked: Vec<_> = self
            .mm
            .entries()
            .filter_map(|e| self.mm.activation(e.id(), &self.wm, now).ok().map(|a| (e, a)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.id().cmp(&b.0.id())));
        let _ = writeln!(out, "middle memory (top {} of {}):", k.min(ranked.len()), ranked.len());
        for (e, a) in ranked.into_iter().take(k) {
            let content = e.chunk().map_or("(vector)".to_string(), |c| c.to_string());
            let _ = writeln!(out, "  {} {} A={:.4} {}", e.id(), e.tag(), a, content);
        }
        let conflict: Vec<&str> = self.last_conflict.iter().map(Symbol::as_str).collect();
        let _ = writeln!(
            out,
            "conflict set: {}",
            if conflict.is_empty() {
                "(none)".into()
            } else {
                conflict.join(", ")
            }
        );
        let _ = writeln!(out, "utilities:");
        for p in self
            .central
            .iter()
            .chain(self.shadows.iter().flat_map(|s| &s.productions))
        {
            let _ = writeln!(out, "  {p}");
        }
        out
    }
}

/// Apply a planned shadow step to a private copy of working memory so the
/// system's next step (when its rate exceeds one) sees its own output.
fn apply_local(
    local: &mut WorkingMemory,
    sys: &ShadowSystem,
    step: &ShadowStep,
    ids: &mut IdGen,
) -> Result<(), MemoryError> {
    if let ShadowStep::Fired { firing, .. } = step {
        if firing
            .effects
            .iter()
            .any(|e| matches!(e, Effect::Clear { buffer } if buffer == &sys.buffer))
        {
            local.clear(&sys.name, &sys.buffer)?;
        }
    }
    for (content, urgent) in step.writes(&sys.buffer) {
        let content = match content {
            PlannedContent::Chunk(c) => BufferContent::Chunk(ids.chunk(c)),
            PlannedContent::Query(pattern) => BufferContent::Query {
                id: ids.next_id(),
                pattern,
            },
        };
        local.write(&sys.name, &sys.buffer, content, urgent)?;
    }
    Ok(())
}

/// Load, run and return the trace.
pub fn run(model: Model, mode: Mode, seed: u64, cycles: u64) -> Result<Trace, RuntimeError> {
    let mut rt = Runtime::new(model, mode, seed)?;
    rt.run(cycles)?;
    Ok(rt.into_trace())
}
