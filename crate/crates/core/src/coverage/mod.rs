//! Branch-coverage accounting per API and globally, coverage report
//! parsing, and sequence novelty.

pub mod novelty;

pub use novelty::{
    levenshtein, novelty, tag_sequence, weighted_levenshtein, DimensionWeights, SequenceHistory, Token,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::metainfo::{LibraryModel, SourceSpan};

pub const LEDGER_SCHEMA: &str = "masfuzz.ledger/1";
pub const SIMCOV_SCHEMA: &str = "masfuzz.simcov/1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("unknown API {0} (ledger has no entry)")]
    UnknownApi(String),
    #[error("malformed coverage report: {reason}; excerpt: {excerpt}")]
    Malformed { reason: String, excerpt: String },
}

fn malformed(reason: impl Into<String>, raw: &str) -> CoverageError {
    CoverageError::Malformed { reason: reason.into(), excerpt: raw.chars().take(160).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCoverage {
    pub covered: u32,
    pub total: u32,
}

impl ApiCoverage {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub driver_id: String,
    pub new_branches: usize,
    /// Cumulative campaign time at ingestion, seconds.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageLedger {
    pub schema: String,
    pub per_api: BTreeMap<String, ApiCoverage>,
    pub global_branches: BTreeSet<String>,
    pub history: Vec<HistoryEntry>,
    spans: BTreeMap<String, SourceSpan>,
    /// Branch ids attributed to each API so far.
    attributed: BTreeMap<String, BTreeSet<String>>,
}

/// Splits `file:line:index` into (file, line); files may contain colons.
pub fn split_branch_id(id: &str) -> Option<(&str, u32)> {
    let mut it = id.rsplitn(3, ':');
    let _index = it.next()?;
    let line = it.next()?.parse().ok()?;
    let file = it.next()?;
    Some((file, line))
}

impl CoverageLedger {
    /// covered = 0 and static totals for every public API.
    pub fn new(model: &LibraryModel) -> Self {
        let mut per_api = BTreeMap::new();
        let mut spans = BTreeMap::new();
        for a in &model.apis {
            let total = model.branch_totals.get(&a.name).copied().unwrap_or(0);
            per_api.insert(a.name.clone(), ApiCoverage { covered: 0, total });
            if let Some(s) = &a.body_span {
                spans.insert(a.name.clone(), s.clone());
            }
        }
        Self::from_parts(per_api, spans)
    }

    pub fn from_parts(per_api: BTreeMap<String, ApiCoverage>, spans: BTreeMap<String, SourceSpan>) -> Self {
        Self {
            schema: LEDGER_SCHEMA.into(),
            per_api,
            global_branches: BTreeSet::new(),
            history: Vec::new(),
            spans,
            attributed: BTreeMap::new(),
        }
    }

    pub fn cov(&self, api: &str) -> Result<f64, CoverageError> {
        self.per_api.get(api).map(ApiCoverage::ratio).ok_or_else(|| CoverageError::UnknownApi(api.into()))
    }

    /// Merges a run's branch set; returns the branches never seen before.
    /// Covered counts grow by the distinct new branches inside each API
    /// body, capped at the static total.
    pub fn ingest(&mut self, branches: &BTreeSet<String>, driver_id: &str, timestamp: f64) -> BTreeSet<String> {
        let new: BTreeSet<String> = branches.difference(&self.global_branches).cloned().collect();
        for b in &new {
            self.global_branches.insert(b.clone());
            let Some((file, line)) = split_branch_id(b) else { continue };
            for (api, span) in &self.spans {
                if span.contains(file, line) {
                    let set = self.attributed.entry(api.clone()).or_default();
                    set.insert(b.clone());
                    if let Some(c) = self.per_api.get_mut(api) {
                        c.covered = (set.len() as u32).min(c.total);
                    }
                }
            }
        }
        self.history.push(HistoryEntry { driver_id: driver_id.into(), new_branches: new.len(), timestamp });
        new
    }
}

/// Σ covered / Σ total over the distinct APIs; 0 when the totals sum to 0.
pub fn avg_cov<S: AsRef<str>>(apis: &[S], ledger: &CoverageLedger) -> Result<f64, CoverageError> {
    let unique: BTreeSet<&str> = apis.iter().map(AsRef::as_ref).collect();
    let (mut c, mut t) = (0u64, 0u64);
    for a in unique {
        let e = ledger.per_api.get(a).ok_or_else(|| CoverageError::UnknownApi(a.into()))?;
        c += e.covered as u64;
        t += e.total as u64;
    }
    Ok(if t == 0 { 0.0 } else { c as f64 / t as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    /// `llvm-cov export -format=text` JSON.
    LlvmExport,
    /// `{"schema": "masfuzz.simcov/1", "branches": [...]}`.
    SimNative,
    /// libFuzzer `-print_coverage=1` output.
    LibFuzzerText,
}

fn rel_path(file: &str, root: &Path) -> String {
    let p = Path::new(file);
    let canon = root.canonicalize().ok();
    for r in canon.iter().map(|c| c.as_path()).chain([root]) {
        if let Ok(rel) = p.strip_prefix(r) {
            return rel.to_string_lossy().into_owned();
        }
    }
    file.to_string()
}

fn parse_llvm_export(text: &str, root: &Path) -> Result<BTreeSet<String>, CoverageError> {
    let v: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string(), text))?;
    let data = v.get("data").and_then(Value::as_array).ok_or_else(|| malformed("missing data array", text))?;
    let mut out = BTreeSet::new();
    for unit in data {
        let files = unit.get("files").and_then(Value::as_array).ok_or_else(|| malformed("missing files", text))?;
        for f in files {
            let name = f.get("filename").and_then(Value::as_str).ok_or_else(|| malformed("file without name", text))?;
            let file = rel_path(name, root);
            let mut per_line: BTreeMap<u64, u32> = BTreeMap::new();
            let branches = f.get("branches").and_then(Value::as_array);
            if let Some(branches) = branches.filter(|b| !b.is_empty()) {
                // [line, col, end_line, end_col, true_count, false_count, ...]
                for b in branches {
                    let a = b.as_array().ok_or_else(|| malformed("branch is not an array", text))?;
                    let num = |k: usize| a.get(k).and_then(Value::as_u64).ok_or_else(|| malformed("short branch record", text));
                    let (line, t, fl) = (num(0)?, num(4)?, num(5)?);
                    let idx = per_line.entry(line).or_insert(0);
                    if t > 0 {
                        out.insert(format!("{file}:{line}:{}", *idx));
                    }
                    if fl > 0 {
                        out.insert(format!("{file}:{line}:{}", *idx + 1));
                    }
                    *idx += 2;
                }
            } else if let Some(segs) = f.get("segments").and_then(Value::as_array) {
                // [line, col, count, has_count, is_region_entry, ...]
                for s in segs {
                    let a = s.as_array().ok_or_else(|| malformed("segment is not an array", text))?;
                    let line = a.first().and_then(Value::as_u64).ok_or_else(|| malformed("short segment", text))?;
                    let count = a.get(2).and_then(Value::as_u64).unwrap_or(0);
                    let has = a.get(3).and_then(Value::as_bool).unwrap_or(false);
                    let entry = a.get(4).and_then(Value::as_bool).unwrap_or(false);
                    if has && entry {
                        let idx = per_line.entry(line).or_insert(0);
                        if count > 0 {
                            out.insert(format!("{file}:{line}:{}", *idx));
                        }
                        *idx += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

fn parse_sim_native(text: &str) -> Result<BTreeSet<String>, CoverageError> {
    #[derive(Deserialize)]
    struct Sim {
        schema: String,
        branches: BTreeSet<String>,
    }
    let s: Sim = serde_json::from_str(text).map_err(|e| malformed(e.to_string(), text))?;
    if s.schema != SIMCOV_SCHEMA {
        return Err(malformed(format!("unexpected schema {}", s.schema), text));
    }
    if let Some(bad) = s.branches.iter().find(|b| split_branch_id(b).is_none()) {
        return Err(malformed(format!("bad branch id {bad}"), text));
    }
    Ok(s.branches)
}

/// `COVERED_FUNC: hits: H edges: C/T NAME FILE:LINE` lines; each covered
/// edge becomes `FILE:LINE:k` for k < C, keyed at the function's line.
fn parse_libfuzzer_text(text: &str, root: &Path) -> Result<BTreeSet<String>, CoverageError> {
    if !text.contains("COVERAGE:") {
        return Err(malformed("no COVERAGE section", text));
    }
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let Some(rest) = line.trim().strip_prefix("COVERED_FUNC:") else { continue };
        let toks: Vec<&str> = rest.split_whitespace().collect();
        let edges = toks.iter().position(|t| *t == "edges:").and_then(|k| toks.get(k + 1));
        let Some((covered, _)) = edges.and_then(|e| e.split_once('/')) else {
            return Err(malformed("COVERED_FUNC without edges", line));
        };
        let covered: u32 = covered.parse().map_err(|_| malformed("bad edge count", line))?;
        let Some(loc) = toks.last() else { continue };
        let Some((file, fline)) = loc.rsplit_once(':') else { continue };
        if fline.parse::<u32>().is_err() {
            continue;
        }
        let file = rel_path(file, root);
        for k in 0..covered {
            out.insert(format!("{file}:{fline}:{k}"));
        }
    }
    Ok(out)
}

/// Branch identifiers (`file:line:index`, paths relative to `root` when
/// inside it) exercised according to a report.
pub fn parse_report(text: &str, format: ReportFormat, root: &Path) -> Result<BTreeSet<String>, CoverageError> {
    match format {
        ReportFormat::LlvmExport => parse_llvm_export(text, root),
        ReportFormat::SimNative => parse_sim_native(text),
        ReportFormat::LibFuzzerText => parse_libfuzzer_text(text, root),
    }
}

pub fn sim_report(branches: &BTreeSet<String>) -> String {
    serde_json::json!({"schema": SIMCOV_SCHEMA, "branches": branches}).to_string()
}

/// Parses then ingests; the ledger is untouched when parsing fails.
pub fn ingest_coverage(
    text: &str,
    format: ReportFormat,
    root: &Path,
    ledger: &mut CoverageLedger,
    driver_id: &str,
    timestamp: f64,
) -> Result<BTreeSet<String>, CoverageError> {
    let branches = parse_report(text, format, root)?;
    Ok(ledger.ingest(&branches, driver_id, timestamp))
}
