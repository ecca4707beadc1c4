use std::collections::{BTreeMap, BTreeSet};

use super::{Delivery, EmitShape, Prediction, Predictor, PredictorBinding, PredictorError};
use crate::chunk::Symbol;

/// Emits the symbol that co-occurs most often with any context symbol.
/// Salience is that count over the cue's total co-occurrence count.
#[derive(Debug, Clone)]
pub struct AssociativePredictor {
    name: Symbol,
    tag: Symbol,
    emit: EmitShape,
    rate: u32,
    table: BTreeMap<Symbol, BTreeMap<Symbol, u64>>,
}

impl AssociativePredictor {
    pub fn new(binding: &PredictorBinding, pairs: &[(Symbol, Symbol, u64)]) -> Self {
        let mut table: BTreeMap<Symbol, BTreeMap<Symbol, u64>> = BTreeMap::new();
        for (a, b, n) in pairs {
            if a == b || *n == 0 {
                continue;
            }
            *table.entry(a.clone()).or_default().entry(b.clone()).or_default() += n;
            *table.entry(b.clone()).or_default().entry(a.clone()).or_default() += n;
        }
        Self {
            name: binding.name.clone(),
            tag: binding.tag.clone(),
            emit: binding.emit.clone(),
            rate: binding.rate,
            table,
        }
    }

    /// Best `n` associates of `cues`, excluding the cues themselves.
    pub fn predict(&self, cues: &[Symbol], n: usize) -> Vec<(Symbol, f64)> {
        let cue_set: BTreeSet<&Symbol> = cues.iter().collect();
        // symbol → (count, salience) keeping its strongest cue
        let mut best: BTreeMap<&Symbol, (u64, f64)> = BTreeMap::new();
        for cue in &cue_set {
            let Some(row) = self.table.get(*cue) else { continue };
            let total: u64 = row.values().sum();
            for (sym, &count) in row {
                if cue_set.contains(sym) {
                    continue;
                }
                let sal = count as f64 / total as f64;
                let e = best.entry(sym).or_insert((0, 0.0));
                if count > e.0 || (count == e.0 && sal > e.1) {
                    *e = (count, sal);
                }
            }
        }
        let mut ranked: Vec<_> = best.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(n)
            .map(|(s, (_, sal))| (s.clone(), sal))
            .collect()
    }
}

impl Predictor for AssociativePredictor {
    fn name(&self) -> &Symbol {
        &self.name
    }

    fn tag(&self) -> &Symbol {
        &self.tag
    }

    fn deliver(&mut self, d: &Delivery) -> Result<Vec<Prediction>, PredictorError> {
        Ok(self
            .predict(d.symbols, self.rate as usize)
            .into_iter()
            .map(|(sym, salience)| Prediction {
                tag: self.tag.clone(),
                vector: None,
                chunk: Some(self.emit.chunk(&sym)),
                salience,
                cycle: d.cycle,
            })
            .collect())
    }
}
