//! Energy-guided, sequence-level mutation of drivers that stopped finding
//! new coverage.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::{CoverageLedger, SequenceHistory};
use crate::metainfo::LibraryModel;
use crate::oracle::GenerationOracle;
use crate::sequence::{CompatibilityGraph, SequencePool};
use crate::synth::{generate_driver, FuzzDriver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnergy {
    pub api: String,
    pub cov: f64,
    pub freq: f64,
    pub potential: usize,
    pub energy: f64,
}

pub fn energy(cov: f64, freq: f64, potential: usize) -> f64 {
    (1.0 - cov) * (1.0 - freq) * potential as f64
}

/// Energy of every API in the ledger. `freq` counts executed drivers whose
/// sequence calls the API.
pub fn compute_energy(
    ledger: &CoverageLedger,
    history: &SequenceHistory,
    pool: &SequencePool,
) -> BTreeMap<String, ApiEnergy> {
    let n = history.len();
    let invoking = history.invocation_counts();
    ledger
        .per_api
        .iter()
        .map(|(api, c)| {
            let cov = c.ratio();
            let freq = if n == 0 { 0.0 } else { invoking.get(api).copied().unwrap_or(0) as f64 / n as f64 };
            let potential = pool.potential(api);
            (api.clone(), ApiEnergy { api: api.clone(), cov, freq, potential, energy: energy(cov, freq, potential) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Insert,
    Replace,
    Combine,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Insert, Strategy::Replace, Strategy::Combine];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Splice before position `boundary` of the parent sequence.
    Insert { boundary: usize },
    /// Substitute `len` calls starting at `start`.
    Replace { start: usize, len: usize },
    Combine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub driver_id: String,
    pub strategy: Strategy,
    pub pivot_api: String,
    pub injected_sequence: String,
    pub injected_apis: Vec<String>,
    pub placement: Placement,
}

pub fn apply_sequence(seq: &[String], injected: &[String], placement: Placement) -> Vec<String> {
    match placement {
        Placement::Insert { boundary } => {
            let b = boundary.min(seq.len());
            let mut out = seq[..b].to_vec();
            out.extend_from_slice(injected);
            out.extend_from_slice(&seq[b..]);
            out
        }
        Placement::Replace { start, len } => {
            let s = start.min(seq.len());
            let e = (s + len).min(seq.len());
            let mut out = seq[..s].to_vec();
            out.extend_from_slice(injected);
            out.extend_from_slice(&seq[e..]);
            out
        }
        Placement::Combine => {
            let mut out = seq.to_vec();
            out.extend_from_slice(injected);
            out
        }
    }
}

/// Just after the first call that precedes `first` in the compatibility
/// graph or a semantic relation; 0 when there is none.
pub fn insert_boundary(
    seq: &[String],
    first: &str,
    graph: &CompatibilityGraph,
    sem_edges: &BTreeSet<(String, String)>,
) -> usize {
    seq.iter()
        .position(|p| graph.has_edge(p, first) || sem_edges.contains(&(p.clone(), first.to_string())))
        .map(|i| i + 1)
        .unwrap_or(0)
}

/// Pivot is the highest-energy API with an unused sequence (ties go to the
/// smaller name); the injected sequence is the longest unused one containing
/// it. `None` when no API has an unused sequence.
pub fn plan_mutation<R: Rng>(
    driver_id: &str,
    driver_seq: &[String],
    energies: &BTreeMap<String, ApiEnergy>,
    pool: &SequencePool,
    graph: &CompatibilityGraph,
    sem_edges: &BTreeSet<(String, String)>,
    rng: &mut R,
) -> Option<MutationPlan> {
    let pivot = energies
        .values()
        .filter(|e| pool.has_unused_for(&e.api))
        .fold(None::<&ApiEnergy>, |best, e| match best {
            Some(b) if b.energy > e.energy || (b.energy == e.energy && b.api <= e.api) => Some(b),
            _ => Some(e),
        })?;
    let injected = pool.longest_unused(&pivot.api, &crate::sequence::Dimension::ALL)?;
    let strategy = Strategy::ALL[rng.random_range(0..3)];
    let placement = match strategy {
        Strategy::Insert => Placement::Insert {
            boundary: insert_boundary(driver_seq, &injected.apis[0], graph, sem_edges),
        },
        Strategy::Replace => {
            let n = driver_seq.len();
            if n == 0 {
                Placement::Replace { start: 0, len: 0 }
            } else {
                // uniform over the n(n+1)/2 non-empty spans
                let mut k = rng.random_range(0..n * (n + 1) / 2);
                let mut start = 0;
                while k >= n - start {
                    k -= n - start;
                    start += 1;
                }
                Placement::Replace { start, len: k + 1 }
            }
        }
        Strategy::Combine => Placement::Combine,
    };
    Some(MutationPlan {
        driver_id: driver_id.into(),
        strategy,
        pivot_api: pivot.api.clone(),
        injected_sequence: injected.id.clone(),
        injected_apis: injected.apis.clone(),
        placement,
    })
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MutationError {
    #[error("injected sequence {0} is unknown or already used")]
    SequenceUnavailable(String),
}

/// Consumes the injected sequence and regenerates a child realizing the
/// mutated sequence. A child that fails generation comes back retired.
pub fn apply_mutation(
    parent: &FuzzDriver,
    parent_seq: &[String],
    plan: &MutationPlan,
    child_id: &str,
    pool: &mut SequencePool,
    model: &LibraryModel,
    oracle: &dyn GenerationOracle,
) -> Result<(FuzzDriver, Vec<String>), MutationError> {
    let dim = pool
        .get(&plan.injected_sequence)
        .filter(|s| !s.used)
        .map(|s| s.dimension)
        .ok_or_else(|| MutationError::SequenceUnavailable(plan.injected_sequence.clone()))?;
    pool.mark_used(&plan.injected_sequence).map_err(|_| MutationError::SequenceUnavailable(plan.injected_sequence.clone()))?;
    let target_seq = apply_sequence(parent_seq, &plan.injected_apis, plan.placement);
    let g = generate_driver(child_id, None, &target_seq, &parent.target_api, model, oracle, Some(&parent.source), true);
    let mut child = g.driver;
    child.lineage = Some(parent.id.clone());
    child.sequences_used = parent.sequences_used.clone();
    child.sequences_used.insert(dim, plan.injected_sequence.clone());
    if let Some(why) = g.rejection {
        child.retire(format!("regeneration failed: {why}"));
    }
    Ok((child, target_seq))
}
