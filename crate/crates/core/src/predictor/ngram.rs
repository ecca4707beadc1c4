use std::collections::BTreeMap;

use super::{top_n, Delivery, EmitShape, Prediction, Predictor, PredictorBinding, PredictorError};
use crate::chunk::Symbol;

/// Count-based order-k next-symbol model with backoff to shorter histories.
///
/// Context symbols arrive as an unordered salience ranking, so the history
/// is built from the known symbols among them, least salient first; the
/// most salient known symbol plays the part of the most recent token.
#[derive(Debug, Clone)]
pub struct NgramPredictor {
    name: Symbol,
    tag: Symbol,
    emit: EmitShape,
    rate: u32,
    order: usize,
    /// history (length 0..order-1) → next symbol → count
    table: BTreeMap<Vec<Symbol>, BTreeMap<Symbol, u64>>,
}

impl NgramPredictor {
    pub fn train(binding: &PredictorBinding, order: usize, corpus: &[String]) -> Result<Self, PredictorError> {
        if order == 0 {
            return Err(PredictorError::Config {
                name: binding.name.clone(),
                reason: "n-gram order must be at least 1".into(),
            });
        }
        let mut table: BTreeMap<Vec<Symbol>, BTreeMap<Symbol, u64>> = BTreeMap::new();
        for line in corpus {
            let tokens = line
                .split_whitespace()
                .map(Symbol::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PredictorError::Config {
                    name: binding.name.clone(),
                    reason: e.to_string(),
                })?;
            for i in 0..tokens.len() {
                for h in 0..order.min(i + 1) {
                    let history = tokens[i - h..i].to_vec();
                    *table.entry(history).or_default().entry(tokens[i].clone()).or_default() += 1;
                }
            }
        }
        Ok(Self {
            name: binding.name.clone(),
            tag: binding.tag.clone(),
            emit: binding.emit.clone(),
            rate: binding.rate,
            order,
            table,
        })
    }

    pub fn is_known(&self, s: &Symbol) -> bool {
        self.table.get(&[][..]).is_some_and(|u| u.contains_key(s))
    }

    /// Up to `n` most probable next symbols after `history` (oldest first)
    /// from the longest suffix seen in training, with their conditional
    /// probabilities.
    pub fn predict(&self, history: &[Symbol], n: usize) -> Vec<(Symbol, f64)> {
        let longest = history.len().min(self.order - 1);
        for len in (0..=longest).rev() {
            let suffix = &history[history.len() - len..];
            if let Some(next) = self.table.get(suffix) {
                let total: u64 = next.values().sum();
                let scored = next
                    .iter()
                    .map(|(s, c)| (s.clone(), *c as f64 / total as f64))
                    .collect();
                return top_n(scored, n);
            }
        }
        Vec::new()
    }
}

impl Predictor for NgramPredictor {
    fn name(&self) -> &Symbol {
        &self.name
    }

    fn tag(&self) -> &Symbol {
        &self.tag
    }

    fn deliver(&mut self, d: &Delivery) -> Result<Vec<Prediction>, PredictorError> {
        let mut history: Vec<Symbol> = d.symbols.iter().filter(|s| self.is_known(s)).cloned().collect();
        history.reverse();
        Ok(self
            .predict(&history, self.rate as usize)
            .into_iter()
            .map(|(sym, p)| Prediction {
                tag: self.tag.clone(),
                vector: None,
                chunk: Some(self.emit.chunk(&sym)),
                salience: p,
                cycle: d.cycle,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::HoloVector;
    use crate::predictor::PredictorKind;

    fn s(x: &str) -> Symbol {
        Symbol::lit(x)
    }

    fn binding(rate: u32) -> PredictorBinding {
        PredictorBinding {
            name: s("lm"),
            tag: s("language"),
            kind: PredictorKind::Ngram {
                order: 2,
                corpus: vec![],
            },
            rate,
            seed: 0,
            module: s("language"),
            emit: EmitShape {
                isa: s("word"),
                slot: s("form"),
            },
        }
    }

    fn model(order: usize, corpus: &[&str]) -> NgramPredictor {
        let corpus: Vec<String> = corpus.iter().map(|c| c.to_string()).collect();
        NgramPredictor::train(&binding(1), order, &corpus).unwrap()
    }

    /// Straight counting over the token list, no tables.
    fn oracle_bigram(tokens: &[&str], prev: &str) -> Option<(String, f64)> {
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for w in tokens.windows(2) {
            if w[0] == prev {
                *counts.entry(w[1]).or_default() += 1;
            }
        }
        let total: u32 = counts.values().sum();
        let best = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
        Some((best.0.to_string(), *best.1 as f64 / total as f64))
    }

    #[test]
    fn bigram_after_a_is_b() {
        let m = model(2, &["a b a b a"]);
        let (want, p) = oracle_bigram(&["a", "b", "a", "b", "a"], "a").unwrap();
        assert_eq!(want, "b");
        assert_eq!(m.predict(&[s("a")], 1), vec![(s("b"), p)]);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn unseen_history_backs_off_to_unigram() {
        let m = model(2, &["a b a b a"]);
        // unigram counts: a 3, b 2
        assert_eq!(m.predict(&[s("zzz")], 1), vec![(s("a"), 0.6)]);
        assert_eq!(m.predict(&[], 1), vec![(s("a"), 0.6)]);
    }

    #[test]
    fn ties_go_to_smaller_symbol() {
        let m = model(2, &["x q", "x p"]);
        assert_eq!(m.predict(&[s("x")], 2), vec![(s("p"), 0.5), (s("q"), 0.5)]);
    }

    #[test]
    fn trigram_uses_longest_suffix() {
        let m = model(3, &["the cat sat", "a cat ran", "a cat ran"]);
        assert_eq!(m.predict(&[s("the"), s("cat")], 1)[0].0, s("sat"));
        assert_eq!(m.predict(&[s("cat")], 1)[0].0, s("ran"));
    }

    #[test]
    fn empty_model_emits_nothing() {
        let mut m = model(2, &[]);
        let v = HoloVector::zeros(8);
        let d = Delivery {
            cycle: 0,
            vector: &v,
            zero: true,
            symbols: &[],
        };
        assert!(m.deliver(&d).unwrap().is_empty());
    }

    #[test]
    fn deliver_uses_most_salient_known_symbol_as_latest() {
        let mut m = model(2, &["the dog barks", "the cat meows"]);
        let v = HoloVector::zeros(8);
        let symbols = [s("cat"), s("word"), s("dog")];
        let out = m
            .deliver(&Delivery {
                cycle: 4,
                vector: &v,
                zero: false,
                symbols: &symbols,
            })
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].chunk.as_ref().unwrap().to_string(), "isa:word form:meows");
        assert_eq!(out[0].cycle, 4);
        assert_eq!(out[0].tag, s("language"));
    }

    #[test]
    fn rejects_zero_order() {
        assert!(NgramPredictor::train(&binding(1), 0, &[]).is_err());
    }
}
