use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::trace::{EventKind, Trace};
use crate::chunk::{ChunkId, Symbol};
use crate::production::Matched;

/// Summary statistics computed purely from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cycles: u64,
    pub candidates_mean: f64,
    pub candidates_max: u64,
    pub candidates_per_cycle: Vec<u64>,
    pub central_firings: u64,
    pub idle_cycles: u64,
    /// Cycles between an urgent shadow write and the first central conflict
    /// set that matched it.
    pub interrupt_latencies: Vec<u64>,
    /// Urgent writes no central conflict set ever matched.
    pub interrupts_unmatched: u64,
    pub mm_size: Vec<usize>,
    /// `(cycle, utility after)` per production.
    pub utilities: BTreeMap<Symbol, Vec<(u64, f64)>>,
    pub consumptions: BTreeMap<Symbol, u64>,
    /// Cycles with more than one central firing.
    pub seriality_violations: u64,
}

pub fn metrics(trace: &Trace) -> RunMetrics {
    let mut candidates: BTreeMap<u64, u64> = BTreeMap::new();
    let mut fires: BTreeMap<u64, u64> = BTreeMap::new();
    let mut idle = 0;
    let mut mm_size = Vec::new();
    let mut utilities: BTreeMap<Symbol, Vec<(u64, f64)>> = BTreeMap::new();
    let mut consumptions: BTreeMap<Symbol, u64> = BTreeMap::new();
    let mut open: Vec<(u64, Symbol, ChunkId)> = Vec::new();
    let mut latencies = Vec::new();
    let mut last_cycle = None;

    for e in &trace.events {
        match &e.kind {
            EventKind::CentralMatch {
                candidates: n,
                conflict,
            } => {
                *candidates.entry(e.cycle).or_default() += n;
                open.retain(|(at, buffer, chunk)| {
                    let hit = conflict.iter().any(|c| {
                        c.matched
                            .iter()
                            .any(|m| matches!(m, Matched::Buffer { buffer: b, chunk: k } if b == buffer && k == chunk))
                    });
                    if hit {
                        latencies.push(e.cycle - at);
                    }
                    !hit
                });
            }
            EventKind::CentralFire { .. } => *fires.entry(e.cycle).or_default() += 1,
            EventKind::Idle => idle += 1,
            EventKind::Context { mm_size: n, .. } => mm_size.push(*n),
            EventKind::UtilityUpdate { production, after, .. } => {
                utilities.entry(production.clone()).or_default().push((e.cycle, *after))
            }
            EventKind::Consumption { system, .. } => *consumptions.entry(system.clone()).or_default() += 1,
            EventKind::Interrupt { buffer, chunk, .. } => open.push((e.cycle, buffer.clone(), *chunk)),
            _ => {}
        }
        if !matches!(e.kind, EventKind::Halt { .. }) {
            last_cycle = Some(e.cycle);
        }
    }

    let per_cycle: Vec<u64> = candidates.values().copied().collect();
    let total: u64 = per_cycle.iter().sum();
    RunMetrics {
        cycles: last_cycle.map_or(0, |c| c + 1),
        candidates_mean: if per_cycle.is_empty() {
            0.0
        } else {
            total as f64 / per_cycle.len() as f64
        },
        candidates_max: per_cycle.iter().copied().max().unwrap_or(0),
        candidates_per_cycle: per_cycle,
        central_firings: fires.values().sum(),
        idle_cycles: idle,
        interrupt_latencies: latencies,
        interrupts_unmatched: open.len() as u64,
        mm_size,
        utilities,
        consumptions,
        seriality_violations: fires.values().filter(|n| **n > 1).count() as u64,
    }
}
