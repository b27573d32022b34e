//! Deterministic stand-in for fuzzing: coverage revealed along monotone
//! time curves, crashes planted at fixed cumulative times.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_budget, CoverageExport, DriverExecutor, ExecutionResult, ExecutorError};
use crate::metainfo::LibraryModel;
use crate::synth::{is_subsequence, FuzzDriver};
use crate::triage::RawCrash;

pub const SIMSPEC_SCHEMA: &str = "masfuzz.simspec/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Driver-local cumulative seconds.
    pub at: f64,
    pub branches: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCrash {
    pub at: f64,
    /// Hex-encoded reproducing input.
    #[serde(default)]
    pub input: String,
    pub report: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimDriver {
    #[serde(default)]
    pub curve: Vec<CurvePoint>,
    #[serde(default)]
    pub crashes: Vec<SimCrash>,
}

/// A crash planted for every driver whose call sequence contains `apis`
/// in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiTrigger {
    pub apis: Vec<String>,
    #[serde(flatten)]
    pub crash: SimCrash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub drivers: BTreeMap<String, SimDriver>,
    /// Derive curves for drivers without an entry from the APIs they call.
    #[serde(default = "yes")]
    pub procedural: bool,
    #[serde(default)]
    pub api_triggers: Vec<ApiTrigger>,
    /// Simulated executions per second.
    #[serde(default = "default_rate")]
    pub exec_rate: f64,
}

fn default_schema() -> String {
    SIMSPEC_SCHEMA.into()
}
fn yes() -> bool {
    true
}
fn default_rate() -> f64 {
    1000.0
}

impl SimSpec {
    pub fn procedural(rng_seed: u64) -> Self {
        Self {
            schema: default_schema(),
            rng_seed,
            drivers: BTreeMap::new(),
            procedural: true,
            api_triggers: Vec::new(),
            exec_rate: default_rate(),
        }
    }
}

fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

pub struct SimExecutor {
    pub spec: SimSpec,
    model: Option<LibraryModel>,
    elapsed: BTreeMap<String, f64>,
    revealed: BTreeMap<String, BTreeSet<String>>,
}

impl SimExecutor {
    pub fn new(spec: SimSpec, model: Option<LibraryModel>) -> Self {
        Self { spec, model, elapsed: BTreeMap::new(), revealed: BTreeMap::new() }
    }

    /// Per API: reachable fraction depends on the preceding call, the rate
    /// on the API alone.
    fn procedural_branches(&self, model: &LibraryModel, driver: &FuzzDriver, t: f64) -> BTreeSet<String> {
        let seed = self.spec.rng_seed.to_string();
        let seq = driver.effective_sequence(&model.api_names());
        let mut best: BTreeMap<&str, u32> = BTreeMap::new();
        for (p, a) in seq.iter().enumerate() {
            let Some(api) = model.api(a) else { continue };
            let total = model.branch_totals.get(a).copied().unwrap_or(0);
            if total == 0 || api.body_span.is_none() {
                continue;
            }
            let prev = if p == 0 { "^" } else { seq[p - 1].as_str() };
            let reach = 0.3 + 0.7 * unit_hash(&[&seed, "reach", a, prev]);
            let tau = 5.0 + 55.0 * unit_hash(&[&seed, "tau", a]);
            let n = (total as f64 * reach * (1.0 - (-t / tau).exp())).floor() as u32;
            let e = best.entry(a.as_str()).or_insert(0);
            *e = (*e).max(n.min(total));
        }
        let mut out = BTreeSet::new();
        for (a, n) in best {
            let span = model.api(a).and_then(|m| m.body_span.as_ref()).expect("checked above");
            for k in 0..n {
                out.insert(format!("{}:{}:{k}", span.file, span.start_line));
            }
        }
        out
    }

    fn curve_branches(d: &SimDriver, t: f64) -> BTreeSet<String> {
        d.curve.iter().filter(|p| p.at <= t).flat_map(|p| p.branches.iter().cloned()).collect()
    }
}

impl DriverExecutor for SimExecutor {
    fn execute(&mut self, driver: &FuzzDriver, budget_secs: f64) -> Result<ExecutionResult, ExecutorError> {
        check_budget(budget_secs)?;
        let before = self.elapsed.get(&driver.id).copied().unwrap_or(0.0);
        let after = before + budget_secs;
        let mut planted: Vec<&SimCrash> = Vec::new();
        let branches = match self.spec.drivers.get(&driver.id) {
            Some(d) => {
                planted.extend(&d.crashes);
                Self::curve_branches(d, after)
            }
            None => match (&self.model, self.spec.procedural) {
                (Some(m), true) => self.procedural_branches(m, driver, after),
                _ => return Err(ExecutorError::UnknownDriver(driver.id.clone())),
            },
        };
        if let Some(m) = &self.model {
            let seq = driver.effective_sequence(&m.api_names());
            planted.extend(self.spec.api_triggers.iter().filter(|t| is_subsequence(&t.apis, &seq)).map(|t| &t.crash));
        }
        let crashes = planted
            .into_iter()
            .filter(|c| c.at > before && c.at <= after)
            .map(|c| RawCrash {
                driver_id: driver.id.clone(),
                input: hex::decode(&c.input).unwrap_or_else(|_| c.input.as_bytes().to_vec()),
                report: c.report.clone(),
            })
            .collect();
        let seen = self.revealed.entry(driver.id.clone()).or_default();
        let fresh: BTreeSet<String> = branches.difference(seen).cloned().collect();
        seen.extend(fresh.iter().cloned());
        self.elapsed.insert(driver.id.clone(), after);
        let executions = ((budget_secs * self.spec.exec_rate).round() as u64).max(1);
        Ok(ExecutionResult {
            driver_id: driver.id.clone(),
            t_actual: budget_secs,
            coverage: Some(CoverageExport { branches: fresh, path: None }),
            crashes,
            executions,
        })
    }

    fn grace_secs(&self) -> f64 {
        0.0
    }
}
