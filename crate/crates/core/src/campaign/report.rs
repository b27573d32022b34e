use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{CampaignConfig, CrashBook, DriversCheckpoint, MiningCheckpoint, ScheduleCheckpoint};
use crate::coverage::ApiCoverage;
use crate::metainfo::LibraryModel;
use crate::scheduler::{Action, CampaignStatus, CurveSample, DriverSchedule};
use crate::sequence::{Dimension, SequencePool};
use crate::synth::{DriverState, FuzzDriver};
use crate::triage::{summarize, Classification, SanitizerKind, TriageSummary};

pub const REPORT_SCHEMA: &str = "masfuzz.report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub sequences: usize,
    pub used: usize,
    pub mean_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverSummary {
    pub id: String,
    pub target_api: String,
    pub state: DriverState,
    pub lineage: Option<String>,
    pub sequences_used: BTreeMap<Dimension, String>,
    pub repair_attempts: u32,
    pub misuse_repairs: u32,
    pub runs: usize,
    pub note: Option<String>,
}

impl DriverSummary {
    fn of(d: &FuzzDriver) -> Self {
        Self {
            id: d.id.clone(),
            target_api: d.target_api.clone(),
            state: d.state,
            lineage: d.lineage.clone(),
            sequences_used: d.sequences_used.clone(),
            repair_attempts: d.repair_attempts,
            misuse_repairs: d.misuse_repairs,
            runs: d.runs.len(),
            note: d.note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub initial: f64,
    pub consumed: f64,
    pub remaining: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashSummary {
    pub dedup_key: String,
    pub driver_id: String,
    pub sanitizer_kind: SanitizerKind,
    pub classification: Classification,
    pub summary: String,
    pub rationale: String,
    pub alternates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema: String,
    /// Directory name of the library root.
    pub library: String,
    pub status: CampaignStatus,
    pub rng_seed: u64,
    pub simulated: bool,
    /// Wall-clock seconds per stage; absent for simulated campaigns.
    pub stage_timings: BTreeMap<String, f64>,
    pub pool: BTreeMap<Dimension, PoolStats>,
    pub drivers: Vec<DriverSummary>,
    pub schedule: Vec<DriverSchedule>,
    pub curve: Vec<CurveSample>,
    pub budget: BudgetSummary,
    pub global_branches: usize,
    pub per_api: BTreeMap<String, ApiCoverage>,
    pub triage: TriageSummary,
    pub crashes: Vec<CrashSummary>,
}

fn pool_stats(pool: &SequencePool) -> BTreeMap<Dimension, PoolStats> {
    Dimension::ALL
        .iter()
        .map(|&d| {
            let seqs: Vec<_> = pool.by_dimension(d).collect();
            let total: usize = seqs.iter().map(|s| s.apis.len()).sum();
            let stats = PoolStats {
                sequences: seqs.len(),
                used: seqs.iter().filter(|s| s.used).count(),
                mean_len: if seqs.is_empty() { 0.0 } else { total as f64 / seqs.len() as f64 },
            };
            (d, stats)
        })
        .collect()
}

pub fn build_report(
    cfg: &CampaignConfig,
    model: &LibraryModel,
    mining: &MiningCheckpoint,
    drivers: &DriversCheckpoint,
    sched: &ScheduleCheckpoint,
    book: &CrashBook,
) -> CampaignReport {
    let st = &sched.state;
    let mut stage_timings = BTreeMap::new();
    for (name, t) in [("mine", mining.wall_secs), ("generate", drivers.wall_secs), ("schedule", sched.wall_secs)] {
        if let Some(t) = t {
            stage_timings.insert(name.to_string(), t);
        }
    }
    let all = st.drivers.iter().chain(&st.children).chain(&book.repaired);
    CampaignReport {
        schema: REPORT_SCHEMA.into(),
        library: model.root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        status: st.status,
        rng_seed: cfg.rng_seed,
        simulated: cfg.simulate.is_some(),
        stage_timings,
        pool: pool_stats(&sched.pool),
        drivers: all.map(DriverSummary::of).collect(),
        schedule: st.schedule.clone(),
        curve: st.curve.clone(),
        budget: BudgetSummary { initial: st.initial_budget, consumed: st.consumed, remaining: st.remaining },
        global_branches: st.ledger.global_branches.len(),
        per_api: st.ledger.per_api.clone(),
        triage: summarize(book.records.values()),
        crashes: book
            .records
            .values()
            .map(|r| CrashSummary {
                dedup_key: r.dedup_key.clone(),
                driver_id: r.driver_id.clone(),
                sanitizer_kind: r.sanitizer_kind,
                classification: r.classification,
                summary: r.summary.clone(),
                rationale: r.rationale.clone(),
                alternates: r.alternates.len(),
            })
            .collect(),
    }
}

fn status_word(s: CampaignStatus) -> &'static str {
    match s {
        CampaignStatus::Running => "running",
        CampaignStatus::Completed => "completed",
        CampaignStatus::BudgetExhausted => "budget exhausted",
        CampaignStatus::Stopped => "stopped",
    }
}

fn class_word(c: Classification) -> &'static str {
    match c {
        Classification::Unclassified => "unclassified",
        Classification::ApiMisuse => "api_misuse",
        Classification::LibraryBug => "library_bug",
    }
}

pub fn render_text(r: &CampaignReport) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "campaign on {} (seed {}): {}", r.library, r.rng_seed, status_word(r.status));
    let _ = writeln!(
        o,
        "budget {:.1}s, consumed {:.1}s, remaining {:.1}s",
        r.budget.initial, r.budget.consumed, r.budget.remaining
    );
    for (stage, t) in &r.stage_timings {
        let _ = writeln!(o, "  {stage:<9} {t:.2}s");
    }
    let _ = writeln!(o, "\nsequence pool");
    for (d, p) in &r.pool {
        let _ = writeln!(o, "  {:<4} {:>5} sequences, {:>5} used, mean length {:.2}", d.to_string(), p.sequences, p.used, p.mean_len);
    }
    let compiled = r.drivers.iter().filter(|d| d.state != DriverState::CompileFailed).count();
    let _ = writeln!(o, "\ndrivers: {} total, {} compiled at least once", r.drivers.len(), compiled);
    let _ = writeln!(o, "\nschedule");
    let _ = writeln!(
        o,
        "  {:<10} {:>6} {:>6} {:>6} {:>9} {:>9} {:>6}  note",
        "driver", "avg", "alpha", "omega", "assigned", "actual", "new"
    );
    for e in &r.schedule {
        let d = &e.decision;
        let actual = e.runs.iter().fold(0.0, |a, x| a + x.t_actual);
        let new: usize = e.runs.iter().map(|x| x.new_branches).sum();
        let mut note = e.note.clone().unwrap_or_default();
        if d.action == Action::Skip && note.is_empty() {
            note = "skipped".into();
        }
        if let Some(m) = &e.mutation {
            let what = match (&m.child, &m.plan) {
                (Some(c), Some(p)) => format!("mutated -> {c} ({:?} {})", p.strategy, p.injected_sequence),
                _ => "no mutation available".into(),
            };
            note = if note.is_empty() { what } else { format!("{note}; {what}") };
        }
        let _ = writeln!(
            o,
            "  {:<10} {:>6.3} {:>6.3} {:>6.3} {:>8.1}s {:>8.1}s {:>6}  {}",
            d.driver_id, d.avg_cov, d.alpha_t, d.omega_novelty, d.assigned_time, actual, new, note
        );
    }
    let _ = writeln!(o, "\ncoverage: {} branches", r.global_branches);
    for (api, c) in &r.per_api {
        let _ = writeln!(o, "  {api:<32} {:>5}/{:<5} {:>6.1}%", c.covered, c.total, 100.0 * c.ratio());
    }
    let t = &r.triage;
    let _ = writeln!(
        o,
        "\ncrashes: {} unique ({} library bugs, {} api misuse, {} unclassified)",
        t.unique_crashes, t.library_bugs, t.api_misuse, t.unclassified
    );
    for c in &r.crashes {
        let _ = writeln!(o, "  {} [{}] {} via {}: {}", c.dedup_key, class_word(c.classification), c.sanitizer_kind.as_str(), c.driver_id, c.summary);
    }
    o
}

/// `time,branches` rows of the cumulative coverage curve.
pub fn curve_csv(r: &CampaignReport) -> String {
    let mut o = String::from("time_secs,branches\n");
    for s in &r.curve {
        let _ = writeln!(o, "{},{}", s.time, s.branches);
    }
    o
}
