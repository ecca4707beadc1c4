//! Model definition files: loading, validation and canonical writing.
//!
//! A model is a JSON document. Every section but `name` is optional and
//! filled with defaults; unknown keys are rejected. [`Model::validate`]
//! reports every violation at once, each with a path into the document such
//! as `shadow_systems[1].productions[2].actions[0]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{ChunkContent, Query, Symbol};
use crate::codec::{DEFAULT_CLEANUP_THRESHOLD, DEFAULT_DIMENSION};
use crate::memory::{MmParams, CENTRAL, DEFAULT_WM_CAPACITY};
use crate::predictor::{PredictorBinding, PredictorKind};
use crate::production::{Action, Condition, LearnerParams, Production, Source};
use crate::shadow::ShadowSystem;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid model:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    pub cycle_length_ms: i64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self { cycle_length_ms: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub decay: f64,
    pub spreading: f64,
    pub retrieval_threshold: f64,
    pub forgetting_threshold: f64,
    pub noise: f64,
    pub cleanup_threshold: f64,
    pub wm_capacity: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        let mm = MmParams::default();
        Self {
            decay: mm.decay,
            spreading: mm.spreading,
            retrieval_threshold: mm.retrieval_threshold,
            forgetting_threshold: mm.forgetting_threshold,
            noise: mm.noise,
            cleanup_threshold: DEFAULT_CLEANUP_THRESHOLD,
            wm_capacity: DEFAULT_WM_CAPACITY,
        }
    }
}

impl MemoryConfig {
    pub fn mm_params(&self) -> MmParams {
        MmParams {
            decay: self.decay,
            spreading: self.spreading,
            retrieval_threshold: self.retrieval_threshold,
            forgetting_threshold: self.forgetting_threshold,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextConfig {
    pub wm_weight: f64,
    /// Decoded symbols sent alongside the context vector.
    pub top_symbols: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            wm_weight: 1.0,
            top_symbols: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferDef {
    pub name: Symbol,
    pub owner: Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductionDef {
    pub name: Symbol,
    #[serde(default)]
    pub conditions: Vec<Condition>,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub utility: f64,
}

impl ProductionDef {
    pub fn to_production(&self, owner: &Symbol) -> Production {
        Production::new(
            self.name.clone(),
            owner.clone(),
            self.conditions.clone(),
            self.actions.clone(),
        )
        .with_utility(self.utility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShadowDef {
    pub name: Symbol,
    pub buffer: Symbol,
    pub subscriptions: Vec<Symbol>,
    #[serde(default = "one")]
    pub rate: u32,
    #[serde(default)]
    pub productions: Vec<ProductionDef>,
}

fn one() -> u32 {
    1
}

impl ShadowDef {
    pub fn to_system(&self) -> ShadowSystem {
        ShadowSystem {
            name: self.name.clone(),
            buffer: self.buffer.clone(),
            subscriptions: self.subscriptions.clone(),
            rate: self.rate,
            productions: self.productions.iter().map(|p| p.to_production(&self.name)).collect(),
        }
    }
}

/// Scripted content arriving as if from a predictor: at `cycle`, then every
/// `every` cycles up to and including `until`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub cycle: u64,
    pub tag: Symbol,
    pub chunk: ChunkContent,
    #[serde(default = "full_salience")]
    pub salience: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u64>,
    /// Buffer fed directly in pipeline mode; without one the stimulus goes
    /// to Middle Memory in both modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<Symbol>,
}

fn full_salience() -> f64 {
    1.0
}

impl Stimulus {
    pub fn fires_at(&self, cycle: u64) -> bool {
        if cycle < self.cycle {
            return false;
        }
        match self.every {
            None => cycle == self.cycle,
            Some(0) => false,
            Some(k) => (cycle - self.cycle).is_multiple_of(k) && self.until.is_none_or(|u| cycle <= u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardDef {
    pub cycle: u64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialWm {
    pub buffer: Symbol,
    pub chunk: ChunkContent,
}

/// An MM entry present before cycle 0; each age places one presentation
/// that many milliseconds before the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMm {
    pub tag: Symbol,
    pub chunk: ChunkContent,
    pub ages_ms: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub name: String,
    #[serde(default)]
    pub codebook: CodebookConfig,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
    #[serde(default)]
    pub learning: LearnerParams,
    #[serde(default)]
    pub context: ContextConfig,
    #[serde(default)]
    pub buffers: Vec<BufferDef>,
    #[serde(default)]
    pub shadow_systems: Vec<ShadowDef>,
    #[serde(default)]
    pub central_productions: Vec<ProductionDef>,
    #[serde(default)]
    pub predictors: Vec<PredictorBinding>,
    #[serde(default)]
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub rewards: Vec<RewardDef>,
    #[serde(default)]
    pub initial_wm: Vec<InitialWm>,
    #[serde(default)]
    pub initial_mm: Vec<InitialMm>,
    /// Index pairs into `initial_mm`.
    #[serde(default)]
    pub initial_links: Vec<(usize, usize)>,
}

impl Model {
    /// Parse without validating.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parse and validate.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let m = Self::from_json(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Canonical form: every default spelled out, fixed key order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }

    pub fn central_productions(&self) -> Vec<Production> {
        let owner = Symbol::lit(CENTRAL);
        self.central_productions
            .iter()
            .map(|p| p.to_production(&owner))
            .collect()
    }

    pub fn shadow_systems(&self) -> Vec<ShadowSystem> {
        self.shadow_systems.iter().map(ShadowDef::to_system).collect()
    }

    /// Every rule violation in the model, in document order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut err = |path: String, message: String| out.push(Violation { path, message });

        if self.name.trim().is_empty() {
            err("name".into(), "must not be empty".into());
        }
        if self.codebook.dimension == 0 {
            err("codebook.dimension".into(), "must be positive".into());
        }
        if self.clock.cycle_length_ms <= 0 {
            err("clock.cycle_length_ms".into(), "must be positive".into());
        }
        let m = &self.memory;
        for (field, value) in [
            ("decay", m.decay),
            ("spreading", m.spreading),
            ("retrieval_threshold", m.retrieval_threshold),
            ("forgetting_threshold", m.forgetting_threshold),
            ("noise", m.noise),
            ("cleanup_threshold", m.cleanup_threshold),
        ] {
            if !value.is_finite() {
                err(format!("memory.{field}"), "must be finite".into());
            }
        }
        if m.decay <= 0.0 {
            err("memory.decay".into(), "must be positive".into());
        }
        if m.noise < 0.0 {
            err("memory.noise".into(), "must not be negative".into());
        }
        let l = &self.learning;
        if !(l.alpha > 0.0 && l.alpha <= 1.0) {
            err("learning.alpha".into(), "must lie in (0, 1]".into());
        }
        if !l.time_cost.is_finite() || !l.formation_threshold.is_finite() {
            err(
                "learning".into(),
                "time_cost and formation_threshold must be finite".into(),
            );
        }
        if !(l.provisional_ttl_s > 0.0 && l.provisional_ttl_s.is_finite()) {
            err("learning.provisional_ttl_s".into(), "must be positive".into());
        }
        if !self.context.wm_weight.is_finite() || self.context.wm_weight < 0.0 {
            err("context.wm_weight".into(), "must be finite and not negative".into());
        }

        // Buffers and owners.
        let systems: BTreeMap<&Symbol, usize> = self
            .shadow_systems
            .iter()
            .enumerate()
            .map(|(i, s)| (&s.name, i))
            .collect();
        let mut buffers: BTreeMap<&Symbol, &Symbol> = BTreeMap::new();
        if self.buffers.len() > m.wm_capacity {
            err(
                "buffers".into(),
                format!(
                    "{} buffers exceed working memory capacity {}",
                    self.buffers.len(),
                    m.wm_capacity
                ),
            );
        }
        for (i, b) in self.buffers.iter().enumerate() {
            if buffers.insert(&b.name, &b.owner).is_some() {
                err(format!("buffers[{i}].name"), format!("duplicate buffer {}", b.name));
            }
            if b.owner.as_str() != CENTRAL && !systems.contains_key(&b.owner) {
                err(
                    format!("buffers[{i}].owner"),
                    format!("owner {} is neither central nor a declared shadow system", b.owner),
                );
            }
        }

        // Unique names.
        if self.shadow_systems.iter().any(|s| s.name.as_str() == CENTRAL) {
            err(
                "shadow_systems".into(),
                "a shadow system may not be named central".into(),
            );
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.shadow_systems.iter().enumerate() {
            if !seen.insert(&s.name) {
                err(
                    format!("shadow_systems[{i}].name"),
                    format!("duplicate shadow system {}", s.name),
                );
            }
        }
        let mut productions: BTreeSet<&Symbol> = BTreeSet::new();
        let all_productions = self
            .central_productions
            .iter()
            .enumerate()
            .map(|(j, p)| (format!("central_productions[{j}]"), p))
            .chain(self.shadow_systems.iter().enumerate().flat_map(|(i, s)| {
                s.productions
                    .iter()
                    .enumerate()
                    .map(move |(j, p)| (format!("shadow_systems[{i}].productions[{j}]"), p))
            }));
        for (path, p) in all_productions {
            if !productions.insert(&p.name) {
                err(format!("{path}.name"), format!("duplicate production {}", p.name));
            }
            if p.name.as_str().starts_with("retrieve-") {
                err(
                    format!("{path}.name"),
                    "names starting with retrieve- are reserved for formed productions".into(),
                );
            }
        }

        // Shadow systems.
        for (i, s) in self.shadow_systems.iter().enumerate() {
            let base = format!("shadow_systems[{i}]");
            match buffers.get(&s.buffer) {
                None => err(format!("{base}.buffer"), format!("unknown buffer {}", s.buffer)),
                Some(owner) if *owner != &s.name => err(
                    format!("{base}.buffer"),
                    format!("buffer {} is owned by {}, not {}", s.buffer, owner, s.name),
                ),
                Some(_) => {}
            }
            let owned = buffers.values().filter(|o| **o == &s.name).count();
            if owned != 1 {
                err(
                    base.to_string(),
                    format!("a shadow system owns exactly one buffer; {} owns {owned}", s.name),
                );
            }
            if s.subscriptions.is_empty() {
                err(format!("{base}.subscriptions"), "must not be empty".into());
            }
            for (j, p) in s.productions.iter().enumerate() {
                let pbase = format!("{base}.productions[{j}]");
                self.check_production(p, &pbase, &buffers, true, &mut err);
                for (k, a) in p.actions.iter().enumerate() {
                    let apath = format!("{pbase}.actions[{k}]");
                    match a.target() {
                        Some(t) if t != &s.buffer => err(
                            apath,
                            format!(
                                "shadow system {} writes only its own buffer {}, not {}",
                                s.name, s.buffer, t
                            ),
                        ),
                        Some(_) => {}
                        None => err(apath, "shadow productions may only act on their own buffer".into()),
                    }
                }
            }
        }
        for (j, p) in self.central_productions.iter().enumerate() {
            let pbase = format!("central_productions[{j}]");
            self.check_production(p, &pbase, &buffers, false, &mut err);
        }

        // Predictors.
        let mut names = BTreeSet::new();
        let mut tags = BTreeSet::new();
        for (i, p) in self.predictors.iter().enumerate() {
            let base = format!("predictors[{i}]");
            if !names.insert(&p.name) {
                err(format!("{base}.name"), format!("duplicate predictor {}", p.name));
            }
            if !tags.insert(&p.tag) {
                err(
                    format!("{base}.tag"),
                    format!("tag {} already used by another predictor", p.tag),
                );
            }
            if !buffers.contains_key(&p.module) {
                err(format!("{base}.module"), format!("unknown buffer {}", p.module));
            }
            if p.emit.slot == Symbol::isa() {
                err(format!("{base}.emit.slot"), "slot may not be isa".into());
            }
            match &p.kind {
                PredictorKind::Ngram { order, corpus } => {
                    if *order == 0 {
                        err(format!("{base}.kind.ngram.order"), "must be at least 1".into());
                    }
                    for (k, line) in corpus.iter().enumerate() {
                        if let Some(bad) = line.split_whitespace().find(|t| Symbol::new(t).is_err()) {
                            err(
                                format!("{base}.kind.ngram.corpus[{k}]"),
                                format!("invalid token {bad:?}"),
                            );
                        }
                    }
                }
                PredictorKind::Associative { .. } => {}
                PredictorKind::External(crate::predictor::Endpoint::Command(argv)) if argv.is_empty() => {
                    err(format!("{base}.kind.external.command"), "must name a program".into());
                }
                PredictorKind::External(_) => {}
            }
        }

        // Scripted content.
        for (i, s) in self.stimuli.iter().enumerate() {
            if s.every == Some(0) {
                err(format!("stimuli[{i}].every"), "must be positive".into());
            }
            if s.until.is_some() && s.every.is_none() {
                err(format!("stimuli[{i}].until"), "requires every".into());
            }
            if !(0.0..=1.0).contains(&s.salience) {
                err(format!("stimuli[{i}].salience"), "must lie in [0, 1]".into());
            }
            if let Some(m) = &s.module {
                if !buffers.contains_key(m) {
                    err(format!("stimuli[{i}].module"), format!("unknown buffer {m}"));
                }
            }
        }
        for (i, r) in self.rewards.iter().enumerate() {
            if !r.amount.is_finite() {
                err(format!("rewards[{i}].amount"), "must be finite".into());
            }
        }
        let mut filled = BTreeSet::new();
        for (i, w) in self.initial_wm.iter().enumerate() {
            if !buffers.contains_key(&w.buffer) {
                err(
                    format!("initial_wm[{i}].buffer"),
                    format!("unknown buffer {}", w.buffer),
                );
            }
            if !filled.insert(&w.buffer) {
                err(
                    format!("initial_wm[{i}].buffer"),
                    format!("buffer {} filled twice", w.buffer),
                );
            }
        }
        for (i, e) in self.initial_mm.iter().enumerate() {
            if e.ages_ms.is_empty() {
                err(
                    format!("initial_mm[{i}].ages_ms"),
                    "needs at least one presentation".into(),
                );
            }
            if e.ages_ms.iter().any(|a| *a < self.clock.cycle_length_ms) {
                err(
                    format!("initial_mm[{i}].ages_ms"),
                    "ages must be at least one cycle length so they precede the first drained batch".into(),
                );
            }
        }
        for (i, (a, b)) in self.initial_links.iter().enumerate() {
            if *a >= self.initial_mm.len() || *b >= self.initial_mm.len() {
                err(format!("initial_links[{i}]"), "index out of range of initial_mm".into());
            }
        }
        out
    }

    fn check_production(
        &self,
        p: &ProductionDef,
        base: &str,
        buffers: &BTreeMap<&Symbol, &Symbol>,
        shadow: bool,
        err: &mut impl FnMut(String, String),
    ) {
        if !p.utility.is_finite() {
            err(format!("{base}.utility"), "must be finite".into());
        }
        let mut bound: BTreeSet<&Symbol> = BTreeSet::new();
        for (k, c) in p.conditions.iter().enumerate() {
            let cpath = format!("{base}.conditions[{k}]");
            match &c.source {
                Source::Buffer(b) if !buffers.contains_key(b) => err(cpath, format!("unknown buffer {b}")),
                Source::Mm(_) if !shadow => err(cpath, "central productions match working memory buffers only".into()),
                _ => {}
            }
            if !c.negated {
                bound.extend(c.pattern.variables());
            }
        }
        for (k, a) in p.actions.iter().enumerate() {
            let apath = format!("{base}.actions[{k}]");
            if let Some(t) = a.target() {
                if !buffers.contains_key(t) {
                    err(apath.clone(), format!("unknown buffer {t}"));
                }
            }
            match a {
                Action::WriteBuffer { template, .. } => {
                    check_refs(template, &bound, &apath, err);
                }
                Action::EmitReward { amount } if !amount.is_finite() => {
                    err(apath, "reward must be finite".into());
                }
                _ => {}
            }
        }
    }
}

fn check_refs(template: &Query, bound: &BTreeSet<&Symbol>, path: &str, err: &mut impl FnMut(String, String)) {
    for v in template.variables() {
        if !bound.contains(v) {
            err(
                path.to_string(),
                format!("template refers to ?{v}, which no non-negated condition binds"),
            );
        }
    }
}
