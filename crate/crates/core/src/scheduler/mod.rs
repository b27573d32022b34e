//! Coverage-guided time scheduling: skip saturated drivers, size each
//! driver's slot from an annealing coefficient, coverage and novelty, and
//! mutate drivers whose run found nothing new.

use serde::{Deserialize, Serialize};

use crate::coverage::{avg_cov, novelty, CoverageLedger, DimensionWeights, SequenceHistory, Token};
use crate::executor::DriverExecutor;
use crate::mutation::MutationPlan;
use crate::synth::{DriverState, FuzzDriver, RunStat};
use crate::triage::RawCrash;

pub const SCHEDULE_SCHEMA: &str = "masfuzz.schedule/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub theta: f64,
    pub beta: f64,
    pub base: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub total_budget_secs: f64,
    /// Smallest slot handed to a driver whose assigned time is positive.
    pub quantum_secs: f64,
    /// Stop once this many distinct library bugs are confirmed.
    pub stop_after_bugs: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            theta: 0.9,
            beta: 0.2,
            base: 2.0,
            alpha_min: 0.5,
            alpha_max: 2.0,
            total_budget_secs: 3600.0,
            quantum_secs: 1.0,
            stop_after_bugs: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchedulerError {
    #[error("invalid scheduler configuration: {0}")]
    Config(String),
    #[error("campaign budget exhausted")]
    Exhausted,
    #[error("driver {0}: {1}")]
    Driver(String, String),
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |m: &str| Err(SchedulerError::Config(m.into()));
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must lie in (0, 1]");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.base > 0.0) {
            return bad("base must be positive");
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max) {
            return bad("need 0 < alpha_min <= alpha_max");
        }
        if !(self.total_budget_secs > 0.0 && self.total_budget_secs.is_finite()) {
            return bad("total budget must be positive");
        }
        if !(self.quantum_secs >= 0.0) {
            return bad("quantum must be non-negative");
        }
        Ok(())
    }
}

/// clamp(base^(i/n - 1), alpha_min, alpha_max)
pub fn time_coefficient(i: usize, n: usize, cfg: &SchedulerConfig) -> f64 {
    let x = i as f64 / n.max(1) as f64 - 1.0;
    cfg.base.powf(x).clamp(cfg.alpha_min, cfg.alpha_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Skip,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub driver_id: String,
    pub index: usize,
    pub action: Action,
    pub avg_cov: f64,
    pub alpha_t: f64,
    pub base_time: f64,
    pub omega_novelty: f64,
    pub assigned_time: f64,
}

/// The slot formula on precomputed coverage and novelty.
pub fn decide(
    driver_id: &str,
    index: usize,
    n: usize,
    avg: f64,
    omega: f64,
    remaining: f64,
    cfg: &SchedulerConfig,
) -> Result<ScheduleDecision, SchedulerError> {
    if remaining <= 0.0 {
        return Err(SchedulerError::Exhausted);
    }
    let alpha_t = time_coefficient(index, n, cfg);
    let base_time = cfg.total_budget_secs / n.max(1) as f64 * alpha_t;
    let skip = avg > cfg.theta;
    let assigned_time = if skip {
        0.0
    } else {
        let raw = base_time / avg.max(cfg.beta) * omega;
        if raw > 0.0 {
            raw.min(remaining).max(cfg.quantum_secs).min(remaining)
        } else {
            0.0
        }
    };
    Ok(ScheduleDecision {
        driver_id: driver_id.into(),
        index,
        action: if skip { Action::Skip } else { Action::Execute },
        avg_cov: avg,
        alpha_t,
        base_time,
        omega_novelty: omega,
        assigned_time,
    })
}

/// Read-only view of the campaign a decision depends on.
pub struct CampaignView<'a> {
    pub ledger: &'a CoverageLedger,
    pub history: &'a SequenceHistory,
    pub remaining: f64,
    pub driver_count: usize,
    pub weights: &'a DimensionWeights,
}

pub fn assign_time(
    driver_id: &str,
    sequence: &[Token],
    index: usize,
    view: &CampaignView<'_>,
    cfg: &SchedulerConfig,
) -> Result<ScheduleDecision, SchedulerError> {
    let apis: Vec<&str> = sequence.iter().map(|t| t.api.as_str()).collect();
    let avg = avg_cov(&apis, view.ledger).map_err(|e| SchedulerError::Driver(driver_id.into(), e.to_string()))?;
    let omega = novelty(sequence, view.history, view.weights);
    decide(driver_id, index, view.driver_count, avg, omega, view.remaining, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub driver_id: String,
    pub budget: f64,
    pub t_actual: f64,
    pub new_branches: usize,
    pub executions: u64,
    pub crashes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub parent: String,
    pub plan: Option<MutationPlan>,
    pub child: Option<String>,
    pub target_sequence: Vec<String>,
    pub child_state: Option<DriverState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSchedule {
    pub decision: ScheduleDecision,
    pub runs: Vec<RunRecord>,
    pub mutation: Option<MutationRecord>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    /// Consumed campaign seconds.
    pub time: f64,
    pub branches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CampaignStatus {
    Running,
    Completed,
    BudgetExhausted,
    Stopped,
}

/// Everything the loop mutates; serialized as the scheduler checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub schema: String,
    pub initial_budget: f64,
    pub remaining: f64,
    pub consumed: f64,
    pub next_index: usize,
    pub drivers: Vec<FuzzDriver>,
    pub children: Vec<FuzzDriver>,
    pub ledger: CoverageLedger,
    pub history: SequenceHistory,
    pub schedule: Vec<DriverSchedule>,
    pub curve: Vec<CurveSample>,
    pub status: CampaignStatus,
}

impl ScheduleState {
    pub fn new(drivers: Vec<FuzzDriver>, ledger: CoverageLedger, cfg: &SchedulerConfig) -> Self {
        Self {
            schema: SCHEDULE_SCHEMA.into(),
            initial_budget: cfg.total_budget_secs,
            remaining: cfg.total_budget_secs,
            consumed: 0.0,
            next_index: 0,
            drivers,
            children: Vec::new(),
            ledger,
            history: SequenceHistory::default(),
            schedule: Vec::new(),
            curve: vec![CurveSample { time: 0.0, branches: 0 }],
            status: CampaignStatus::Running,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

pub struct MutationOutcome {
    pub record: MutationRecord,
    /// The regenerated child, compiled or retired.
    pub child: Option<FuzzDriver>,
}

/// Stage callbacks the loop delegates to.
pub trait CampaignHooks {
    /// The driver's call sequence with dimension tags.
    fn sequence_of(&self, driver: &FuzzDriver) -> Vec<Token>;
    /// One mutation of a stagnant driver; `None` when no plan exists.
    fn mutate(&mut self, driver: &FuzzDriver, ledger: &CoverageLedger, history: &SequenceHistory) -> Option<MutationOutcome>;
    fn crashes(&mut self, driver: &FuzzDriver, crashes: &[RawCrash]) -> Flow;
    fn checkpoint(&mut self, _state: &ScheduleState) {}
}

fn run_once(
    exec: &mut dyn DriverExecutor,
    driver: &mut FuzzDriver,
    budget: f64,
    state: &mut ScheduleState,
    hooks: &mut dyn CampaignHooks,
) -> Result<(RunRecord, Flow), String> {
    let r = exec.execute(driver, budget).map_err(|e| e.to_string())?;
    let _ = driver.transition(DriverState::Executed);
    state.consumed += r.t_actual;
    let new = state.ledger.ingest(&r.branches(), &driver.id, state.consumed);
    state.curve.push(CurveSample { time: state.consumed, branches: state.ledger.global_branches.len() });
    driver.runs.push(RunStat {
        budget_secs: budget,
        t_actual_secs: r.t_actual,
        new_branches: new.len(),
        executions: r.executions,
    });
    let flow = if r.crashes.is_empty() { Flow::Continue } else { hooks.crashes(driver, &r.crashes) };
    Ok((
        RunRecord {
            driver_id: driver.id.clone(),
            budget,
            t_actual: r.t_actual,
            new_branches: new.len(),
            executions: r.executions,
            crashes: r.crashes.len(),
        },
        flow,
    ))
}

/// Continues the loop from `state.next_index` until the list ends, the
/// budget runs out, or a hook asks to stop.
pub fn run_campaign(
    mut state: ScheduleState,
    executor: &mut dyn DriverExecutor,
    hooks: &mut dyn CampaignHooks,
    weights: &DimensionWeights,
    cfg: &SchedulerConfig,
) -> Result<ScheduleState, SchedulerError> {
    cfg.validate()?;
    let n = state.drivers.len();
    state.status = CampaignStatus::Running;
    while state.next_index < n {
        let i = state.next_index;
        if state.drivers[i].state != DriverState::Compiled {
            state.next_index += 1;
            continue;
        }
        if state.remaining <= 0.0 {
            state.status = CampaignStatus::BudgetExhausted;
            break;
        }
        let tokens = hooks.sequence_of(&state.drivers[i]);
        let view = CampaignView {
            ledger: &state.ledger,
            history: &state.history,
            remaining: state.remaining,
            driver_count: n,
            weights,
        };
        let decision = match assign_time(&state.drivers[i].id, &tokens, i, &view, cfg) {
            Ok(d) => d,
            Err(SchedulerError::Exhausted) => {
                state.status = CampaignStatus::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut entry = DriverSchedule { decision: decision.clone(), runs: Vec::new(), mutation: None, note: None };
        state.next_index += 1;
        if decision.action == Action::Skip {
            entry.note = Some("coverage above threshold".into());
            state.schedule.push(entry);
            hooks.checkpoint(&state);
            continue;
        }
        if decision.assigned_time <= 0.0 {
            entry.note = Some("no time assigned".into());
            state.schedule.push(entry);
            hooks.checkpoint(&state);
            continue;
        }

        let mut driver = state.drivers[i].clone();
        let assigned = decision.assigned_time;
        let mut flow = Flow::Continue;
        let mut spent = 0.0;
        match run_once(executor, &mut driver, assigned, &mut state, hooks) {
            Err(e) => {
                driver.retire(format!("executor failure: {e}"));
                entry.note = Some(format!("executor failure: {e}"));
            }
            Ok((rec, f)) => {
                spent += rec.t_actual;
                flow = f;
                let stagnant = rec.new_branches == 0;
                entry.runs.push(rec);
                if stagnant && flow == Flow::Continue {
                    match hooks.mutate(&driver, &state.ledger, &state.history) {
                        None => {
                            driver.retire("no mutation plan: every sequence is used");
                            entry.mutation = Some(MutationRecord {
                                parent: driver.id.clone(),
                                plan: None,
                                child: None,
                                target_sequence: Vec::new(),
                                child_state: None,
                            });
                        }
                        Some(outcome) => {
                            let mut record = outcome.record;
                            if let Some(mut child) = outcome.child {
                                if child.state == DriverState::Compiled {
                                    let _ = driver.transition(DriverState::Mutated);
                                    let budget2 = assigned.min(state.remaining - spent);
                                    if budget2 > 0.0 {
                                        match run_once(executor, &mut child, budget2, &mut state, hooks) {
                                            Ok((rec2, f2)) => {
                                                spent += rec2.t_actual;
                                                flow = f2;
                                                entry.runs.push(rec2);
                                                let child_tokens = hooks.sequence_of(&child);
                                                state.history.add(&child.id, child_tokens);
                                            }
                                            Err(e) => child.retire(format!("executor failure: {e}")),
                                        }
                                    }
                                } else {
                                    driver.retire(format!("mutation child {} was not usable", child.id));
                                }
                                record.child_state = Some(child.state);
                                state.children.push(child);
                            }
                            entry.mutation = Some(record);
                        }
                    }
                }
            }
        }
        state.remaining -= spent;
        state.history.add(&driver.id, tokens);
        state.drivers[i] = driver;
        state.schedule.push(entry);
        hooks.checkpoint(&state);
        if flow == Flow::Stop {
            state.status = CampaignStatus::Stopped;
            return Ok(state);
        }
    }
    if state.status == CampaignStatus::Running {
        state.status = if state.remaining <= 0.0 { CampaignStatus::BudgetExhausted } else { CampaignStatus::Completed };
    }
    Ok(state)
}
