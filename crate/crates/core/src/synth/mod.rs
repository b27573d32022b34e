//! Driver synthesis: prompt bundles from the sequence pool, driver
//! generation and validation, compile repair, and seed corpora.

pub mod compile;
pub mod seeds;
pub mod template;

pub use compile::{CheckCompiler, ClangCompiler, CompileOutcome, CompilerConfig, DriverCompiler, ScriptedCompiler};
pub use seeds::{build_seed_corpus, Seed, SeedCorpus};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cparse;
use crate::metainfo::LibraryModel;
use crate::oracle::{GenerationOracle, GenerationRequest, RepairKind, RepairRequest};
use crate::sequence::{ApiSequence, Dimension, Provenance, SequencePool};

pub const MAX_REPAIR_ATTEMPTS: u32 = 3;
pub const ENTRY_POINT: &str = "LLVMFuzzerTestOneInput";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverState {
    Generated,
    Compiled,
    CompileFailed,
    Executed,
    Mutated,
    Retired,
}

impl DriverState {
    pub fn can_become(self, next: DriverState) -> bool {
        use DriverState::*;
        matches!(
            (self, next),
            (Generated, Compiled | CompileFailed | Retired)
                | (CompileFailed, Compiled | CompileFailed | Retired)
                | (Compiled, Executed | Retired)
                | (Executed, Mutated | Retired)
        )
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("driver {id}: illegal state transition {from:?} -> {to:?}")]
    IllegalTransition { id: String, from: DriverState, to: DriverState },
    #[error("driver {id}: repair requires state compile_failed with fewer than {MAX_REPAIR_ATTEMPTS} attempts (state {state:?}, attempts {attempts})")]
    RepairPrecondition { id: String, state: DriverState, attempts: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStat {
    pub budget_secs: f64,
    pub t_actual_secs: f64,
    pub new_branches: usize,
    pub executions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzDriver {
    pub id: String,
    pub target_api: String,
    pub source: String,
    /// Path of the source file relative to the working directory.
    pub file: String,
    pub sequences_used: BTreeMap<Dimension, String>,
    pub state: DriverState,
    pub repair_attempts: u32,
    pub lineage: Option<String>,
    /// Call order requested from the generation oracle.
    pub plan: Vec<String>,
    pub misuse_repairs: u32,
    pub runs: Vec<RunStat>,
    /// Why the driver was retired, when it was.
    pub note: Option<String>,
}

impl FuzzDriver {
    pub fn new(id: &str, target_api: &str, source: String, plan: Vec<String>) -> Self {
        Self {
            id: id.to_string(),
            target_api: target_api.to_string(),
            source,
            file: driver_file(id, target_api),
            sequences_used: BTreeMap::new(),
            state: DriverState::Generated,
            repair_attempts: 0,
            lineage: None,
            plan,
            misuse_repairs: 0,
            runs: Vec::new(),
            note: None,
        }
    }

    pub fn transition(&mut self, next: DriverState) -> Result<(), SynthError> {
        if !self.state.can_become(next) {
            return Err(SynthError::IllegalTransition { id: self.id.clone(), from: self.state, to: next });
        }
        self.state = next;
        Ok(())
    }

    pub fn retire(&mut self, why: impl Into<String>) {
        self.note = Some(why.into());
        if self.state != DriverState::Retired {
            // retirement is reachable from every live state except mutated
            if self.state.can_become(DriverState::Retired) {
                self.state = DriverState::Retired;
            }
        }
    }

    /// Public-API calls in the source, in evaluation order.
    pub fn effective_sequence(&self, public: &BTreeSet<String>) -> Vec<String> {
        effective_sequence(&self.source, public)
    }
}

pub fn driver_file(id: &str, target: &str) -> String {
    format!("drivers/{id}_{target}.c")
}

pub fn effective_sequence(source: &str, public: &BTreeSet<String>) -> Vec<String> {
    let parsed = cparse::parse_source(source, &cparse::ParseOptions::default());
    parsed
        .functions
        .iter()
        .filter_map(|f| f.body.as_ref())
        .flat_map(|b| cparse::calls_in_order(&b.tokens))
        .map(|c| c.name)
        .filter(|n| public.contains(n))
        .collect()
}

/// `needle` appears in order (not necessarily contiguously) in `hay`.
pub fn is_subsequence(needle: &[String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Exactly one entry point definition and no `main`.
pub fn validate_source(source: &str) -> Result<(), String> {
    let parsed = cparse::parse_source(source, &cparse::ParseOptions::default());
    let defs = |name: &str| parsed.functions.iter().filter(|f| f.body.is_some() && f.name == name).count();
    match defs(ENTRY_POINT) {
        1 => {}
        0 => return Err(format!("no {ENTRY_POINT} definition")),
        n => return Err(format!("{n} {ENTRY_POINT} definitions")),
    }
    if defs("main") > 0 {
        return Err("driver defines its own main".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiContext {
    pub signature: String,
    pub header: String,
    pub doc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub target_api: String,
    pub backbone: Option<ApiSequence>,
    pub extension: Option<ApiSequence>,
    pub complement: Option<ApiSequence>,
    pub api_contexts: BTreeMap<String, ApiContext>,
}

impl PromptBundle {
    pub fn sequences(&self) -> impl Iterator<Item = &ApiSequence> {
        [&self.backbone, &self.extension, &self.complement].into_iter().flatten()
    }

    pub fn sequences_used(&self) -> BTreeMap<Dimension, String> {
        self.sequences().map(|s| (s.dimension, s.id.clone())).collect()
    }
}

pub const FALLBACK_ID: &str = "fallback";

/// Per dimension, the longest unused sequence containing `target`, marked
/// used. With nothing available a singleton SEM sequence stands in.
pub fn select_sequences(target: &str, pool: &mut SequencePool, model: &LibraryModel) -> PromptBundle {
    let mut pick = |d: Dimension| {
        let seq = pool.longest_unused(target, &[d]).cloned()?;
        pool.mark_used(&seq.id).ok()?;
        let mut seq = seq;
        seq.used = true;
        Some(seq)
    };
    let backbone = pick(Dimension::Ue);
    let extension = pick(Dimension::Mp);
    let mut complement = pick(Dimension::Sem);
    if backbone.is_none() && extension.is_none() && complement.is_none() {
        complement = Some(ApiSequence {
            id: FALLBACK_ID.into(),
            apis: vec![target.to_string()],
            dimension: Dimension::Sem,
            provenance: Provenance::Fallback,
            used: true,
        });
    }
    let mut bundle = PromptBundle {
        target_api: target.to_string(),
        backbone,
        extension,
        complement,
        api_contexts: BTreeMap::new(),
    };
    let mentioned: BTreeSet<String> =
        bundle.sequences().flat_map(|s| s.apis.iter().cloned()).chain([target.to_string()]).collect();
    for name in mentioned {
        if let Some(api) = model.api(&name) {
            bundle.api_contexts.insert(
                name,
                ApiContext { signature: api.signature(), header: api.header.clone(), doc: api.doc.clone() },
            );
        }
    }
    bundle
}

/// Inserts `seq` into `merged` keeping both orders: elements already present
/// (at or after the cursor) are matched, missing ones are inserted at the
/// cursor.
pub fn merge_into(merged: &mut Vec<String>, seq: &[String]) {
    let mut cursor = 0;
    for e in seq {
        if let Some(p) = merged[cursor..].iter().position(|m| m == e) {
            cursor += p + 1;
        } else {
            merged.insert(cursor, e.clone());
            cursor += 1;
        }
    }
}

/// Call order realizing a bundle: the UE backbone, extended with the MP path
/// and then the SEM chain.
pub fn plan_calls(bundle: &PromptBundle) -> Vec<String> {
    let mut merged = bundle.backbone.as_ref().map(|s| s.apis.clone()).unwrap_or_default();
    for s in [&bundle.extension, &bundle.complement].into_iter().flatten() {
        merge_into(&mut merged, &s.apis);
    }
    if !merged.iter().any(|m| m == &bundle.target_api) {
        merged.push(bundle.target_api.clone());
    }
    merged
}

/// Generation outcome before compilation.
pub struct Generated {
    pub driver: FuzzDriver,
    pub attempts: u32,
    pub rejection: Option<String>,
}

/// Asks the oracle for a driver; output without a unique entry point, with a
/// `main`, or (when `enforce_plan`) not realizing the plan is rejected and
/// regenerated once. A second rejection leaves the driver compile_failed.
pub fn generate_driver(
    id: &str,
    bundle: Option<&PromptBundle>,
    plan: &[String],
    target: &str,
    model: &LibraryModel,
    oracle: &dyn GenerationOracle,
    parent_source: Option<&str>,
    enforce_plan: bool,
) -> Generated {
    let public = model.api_names();
    let mut feedback: Option<String> = None;
    let mut last_source = String::new();
    for attempt in 1..=2 {
        let req = GenerationRequest {
            driver_id: id,
            target_api: target,
            plan,
            bundle,
            model,
            parent_source,
            feedback: feedback.as_deref(),
        };
        let verdict = match oracle.generate(&req) {
            Ok(src) => {
                last_source = src;
                validate_source(&last_source).and_then(|()| {
                    let seq = effective_sequence(&last_source, &public);
                    if enforce_plan && !is_subsequence(plan, &seq) {
                        Err(format!("calls {seq:?} do not realize the planned sequence {plan:?}"))
                    } else {
                        Ok(())
                    }
                })
            }
            Err(e) => Err(e.to_string()),
        };
        match verdict {
            Ok(()) => {
                let mut driver = FuzzDriver::new(id, target, last_source, plan.to_vec());
                if let Some(b) = bundle {
                    driver.sequences_used = b.sequences_used();
                }
                return Generated { driver, attempts: attempt, rejection: None };
            }
            Err(why) => {
                tracing::debug!(driver = id, attempt, reason = %why, "generated driver rejected");
                feedback = Some(why);
            }
        }
    }
    let mut driver = FuzzDriver::new(id, target, last_source, plan.to_vec());
    if let Some(b) = bundle {
        driver.sequences_used = b.sequences_used();
    }
    driver.state = DriverState::CompileFailed;
    driver.note = feedback.clone();
    Generated { driver, attempts: 2, rejection: feedback }
}

/// One repair round: the oracle rewrites the source from the diagnostics.
/// An oracle failure still consumes the attempt.
pub fn repair_driver(
    driver: &FuzzDriver,
    diagnostics: &str,
    model: &LibraryModel,
    oracle: &dyn GenerationOracle,
) -> Result<FuzzDriver, SynthError> {
    if driver.state != DriverState::CompileFailed || driver.repair_attempts >= MAX_REPAIR_ATTEMPTS {
        return Err(SynthError::RepairPrecondition {
            id: driver.id.clone(),
            state: driver.state,
            attempts: driver.repair_attempts,
        });
    }
    let mut out = driver.clone();
    out.repair_attempts += 1;
    let req = RepairRequest { driver, kind: RepairKind::Compile { diagnostics }, model };
    match oracle.repair(&req) {
        Ok(src) => out.source = src,
        Err(e) => tracing::warn!(driver = %driver.id, error = %e, "repair oracle failed"),
    }
    Ok(out)
}

/// Compiles a driver, running up to three repair rounds on failure. Ends
/// compiled, or retired once the third repaired version still fails.
pub fn compile_with_repair(
    mut driver: FuzzDriver,
    compiler: &dyn DriverCompiler,
    model: &LibraryModel,
    oracle: &dyn GenerationOracle,
) -> (FuzzDriver, Option<CompileOutcome>) {
    if driver.state == DriverState::Generated {
        let outcome = compiler.compile(&driver, model);
        if outcome.ok {
            let _ = driver.transition(DriverState::Compiled);
            return (driver, Some(outcome));
        }
        let _ = driver.transition(DriverState::CompileFailed);
        driver.note = Some(outcome.diagnostics.clone());
    }
    let mut diagnostics = driver.note.clone().unwrap_or_default();
    while driver.state == DriverState::CompileFailed && driver.repair_attempts < MAX_REPAIR_ATTEMPTS {
        driver = match repair_driver(&driver, &diagnostics, model, oracle) {
            Ok(d) => d,
            Err(_) => break,
        };
        let ok_source = validate_source(&driver.source);
        let outcome = match ok_source {
            Ok(()) => compiler.compile(&driver, model),
            Err(why) => CompileOutcome::failed(why),
        };
        if outcome.ok {
            let _ = driver.transition(DriverState::Compiled);
            driver.note = None;
            return (driver, Some(outcome));
        }
        let _ = driver.transition(DriverState::CompileFailed);
        diagnostics = outcome.diagnostics;
    }
    driver.retire(format!("still failing after {} repair attempts: {}", driver.repair_attempts, first_line(&diagnostics)));
    (driver, None)
}

fn first_line(s: &str) -> &str {
    s.lines().find(|l| l.contains("error")).or_else(|| s.lines().next()).unwrap_or("")
}

/// Generation order: descending potential, then name.
pub fn target_order(model: &LibraryModel, pool: &SequencePool) -> Vec<String> {
    let mut names: Vec<(usize, String)> = model.apis.iter().map(|a| (pool.potential(&a.name), a.name.clone())).collect();
    names.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    names.into_iter().map(|(_, n)| n).collect()
}
