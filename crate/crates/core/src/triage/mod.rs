//! Crash deduplication and misuse/bug classification.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::metainfo::LibraryModel;
use crate::oracle::{AnalysisOracle, AnalysisRequest, Verdict};
use crate::synth::FuzzDriver;

pub const TRIAGE_SCHEMA: &str = "masfuzz.triage/1";
pub const DEDUP_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SanitizerKind {
    AddrViolation,
    UninitRead,
    Leak,
    Assertion,
    Timeout,
    Other,
}

impl SanitizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SanitizerKind::AddrViolation => "addr-violation",
            SanitizerKind::UninitRead => "uninit-read",
            SanitizerKind::Leak => "leak",
            SanitizerKind::Assertion => "assertion",
            SanitizerKind::Timeout => "timeout",
            SanitizerKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Unclassified,
    ApiMisuse,
    LibraryBug,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub symbol: String,
    pub file: Option<String>,
    pub line: Option<u32>,
}

impl Frame {
    fn key(&self) -> String {
        match (&self.file, self.line) {
            (Some(f), Some(l)) => format!("{}@{f}:{l}", self.symbol),
            (Some(f), None) => format!("{}@{f}", self.symbol),
            _ => self.symbol.clone(),
        }
    }
}

/// One crash as reported by an executor, before deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCrash {
    pub driver_id: String,
    #[serde(with = "hex_bytes")]
    pub input: Vec<u8>,
    pub report: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternate {
    pub driver_id: String,
    #[serde(with = "hex_bytes")]
    pub input: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub driver_id: String,
    #[serde(with = "hex_bytes")]
    pub input: Vec<u8>,
    pub sanitizer_kind: SanitizerKind,
    /// Innermost frame first; paths relative to the library root when
    /// they lie inside it.
    pub stack: Vec<Frame>,
    pub dedup_key: String,
    pub classification: Classification,
    pub rationale: String,
    /// Set when the analysis oracle failed and the record stays unclassified.
    pub needs_review: bool,
    /// Sanitizer description line, e.g. `SEGV on unknown address 0x000000000000`.
    pub summary: String,
    pub alternates: Vec<Alternate>,
    pub report: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TriageError {
    #[error("crash {0} is already classified")]
    AlreadyClassified(String),
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReport {
    pub kind: SanitizerKind,
    pub summary: String,
    pub frames: Vec<Frame>,
}

fn kind_of(desc: &str) -> SanitizerKind {
    let d = desc.to_ascii_lowercase();
    if d.contains("leak") {
        SanitizerKind::Leak
    } else if d.contains("use-of-uninitialized-value") || d.contains("uninitialized") {
        SanitizerKind::UninitRead
    } else if d.contains("timeout") || d.contains("alarm") {
        SanitizerKind::Timeout
    } else if d.contains("assert") || d.contains("abort") {
        SanitizerKind::Assertion
    } else if d.contains("segv")
        || d.contains("overflow")
        || d.contains("use-after")
        || d.contains("double-free")
        || d.contains("bad-free")
        || d.contains("invalid-free")
        || d.contains("bus")
        || d.contains("attempting free")
    {
        SanitizerKind::AddrViolation
    } else {
        SanitizerKind::Other
    }
}

/// Parses `#N 0xADDR in SYMBOL FILE:LINE[:COL]` frames.
fn parse_frame(line: &str) -> Option<Frame> {
    let t = line.trim_start();
    let rest = t.strip_prefix('#')?;
    let (idx, rest) = rest.split_once(' ')?;
    idx.parse::<u32>().ok()?;
    let rest = rest.trim_start();
    let rest = match rest.split_once(" in ") {
        Some((addr, r)) if addr.starts_with("0x") => r,
        _ if rest.starts_with("0x") => return None,
        _ => rest,
    };
    // symbol may contain spaces (C++ signatures); the location is the last token
    let (symbol, loc) = match rest.rsplit_once(' ') {
        Some((s, l)) => (s.trim().to_string(), l.trim()),
        None => (rest.trim().to_string(), ""),
    };
    if loc.starts_with('(') || loc.is_empty() || loc.starts_with(":?") || loc.starts_with("??") {
        return Some(Frame { symbol, file: None, line: None });
    }
    let mut parts: Vec<&str> = loc.split(':').collect();
    let mut nums = Vec::new();
    while let Some(last) = parts.last() {
        match last.parse::<u32>() {
            Ok(n) if parts.len() > 1 => {
                nums.push(n);
                parts.pop();
            }
            _ => break,
        }
    }
    let file = parts.join(":");
    let line = nums.last().copied();
    Some(Frame {
        symbol,
        file: if file.is_empty() || file == "?" { None } else { Some(file) },
        line: line.filter(|l| *l > 0),
    })
}

/// Extracts kind, description and the first stack of a sanitizer or engine
/// report. Reports without a recognizable header are kind `other`.
pub fn parse_report(text: &str) -> ParsedReport {
    let mut kind = SanitizerKind::Other;
    let mut summary = String::new();
    let mut frames = Vec::new();
    let mut in_stack = false;
    let mut stack_done = false;
    for line in text.lines() {
        let t = line.trim();
        if summary.is_empty() {
            if let Some(pos) = t.find("ERROR: ") {
                let desc = &t[pos + "ERROR: ".len()..];
                let desc = desc.split_once(": ").map(|(_, d)| d).unwrap_or(desc);
                // register values differ between runs of the same bug
                let cut = [" (pc 0x", " at pc 0x"].iter().filter_map(|m| desc.find(m)).min().unwrap_or(desc.len());
                summary = desc[..cut].trim_end().to_string();
                kind = kind_of(desc);
                continue;
            }
            if t.starts_with("ALARM:") || t.contains("ERROR: libFuzzer: timeout") {
                summary = t.to_string();
                kind = SanitizerKind::Timeout;
                continue;
            }
            if t.contains("Assertion") && t.contains("failed") {
                summary = t.to_string();
                kind = SanitizerKind::Assertion;
                continue;
            }
        }
        if stack_done {
            continue;
        }
        match parse_frame(line) {
            Some(f) => {
                in_stack = true;
                frames.push(f);
            }
            None if in_stack => stack_done = true,
            None => {}
        }
    }
    if summary.is_empty() {
        summary = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
    }
    ParsedReport { kind, summary, frames }
}

const RUNTIME_PREFIXES: [&str; 9] = [
    "__asan", "__msan", "__lsan", "__sanitizer", "__interceptor", "__GI_", "fuzzer::", "__libc", "_start",
];

fn is_runtime_frame(f: &Frame) -> bool {
    RUNTIME_PREFIXES.iter().any(|p| f.symbol.starts_with(p))
        || matches!(f.symbol.as_str(), "abort" | "raise" | "malloc" | "free" | "calloc" | "realloc" | "main")
        || f.file.as_deref().is_some_and(|p| p.contains("compiler-rt") || p.contains("sysdeps"))
}

/// Rewrites frame paths below `root` as root-relative.
pub fn relativize(frames: &mut [Frame], root: &Path) {
    let root_abs = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    for f in frames {
        let Some(file) = &f.file else { continue };
        let p = Path::new(file);
        for r in [&root_abs, &root.to_path_buf()] {
            if let Ok(rel) = p.strip_prefix(r) {
                f.file = Some(rel.to_string_lossy().into_owned());
                break;
            }
        }
    }
}

pub fn in_library_frames<'a>(stack: &'a [Frame], library_files: &BTreeSet<String>) -> Vec<&'a Frame> {
    stack.iter().filter(|f| f.file.as_ref().is_some_and(|p| library_files.contains(p))).collect()
}

/// Pure function of the kind and the top in-library frames. Stacks with no
/// library frame fall back to their top non-runtime frames.
pub fn dedup_key(kind: SanitizerKind, stack: &[Frame], library_files: &BTreeSet<String>) -> String {
    let mut top: Vec<&Frame> = in_library_frames(stack, library_files);
    if top.is_empty() {
        top = stack.iter().filter(|f| !is_runtime_frame(f)).collect();
    }
    let mut h = Sha256::new();
    h.update(kind.as_str().as_bytes());
    for f in top.iter().take(DEDUP_FRAMES) {
        h.update(b"\n");
        h.update(f.key().as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn library_file_set(model: &LibraryModel) -> BTreeSet<String> {
    model.library_files.iter().cloned().collect()
}

pub fn to_record(raw: &RawCrash, model: &LibraryModel) -> CrashRecord {
    let parsed = parse_report(&raw.report);
    let mut stack = parsed.frames;
    relativize(&mut stack, &model.root);
    let key = dedup_key(parsed.kind, &stack, &library_file_set(model));
    CrashRecord {
        driver_id: raw.driver_id.clone(),
        input: raw.input.clone(),
        sanitizer_kind: parsed.kind,
        stack,
        dedup_key: key,
        classification: Classification::Unclassified,
        rationale: String::new(),
        needs_review: false,
        summary: parsed.summary,
        alternates: Vec::new(),
        report: raw.report.clone(),
    }
}

/// Adds `rec` to `records` unless its key is present; a duplicate keeps
/// its input as an alternate. Returns true for a new key.
pub fn merge_record(records: &mut BTreeMap<String, CrashRecord>, rec: CrashRecord) -> bool {
    match records.get_mut(&rec.dedup_key) {
        Some(existing) => {
            let mut incoming = vec![Alternate { driver_id: rec.driver_id, input: rec.input }];
            incoming.extend(rec.alternates);
            for alt in incoming {
                let dup = (existing.driver_id == alt.driver_id && existing.input == alt.input)
                    || existing.alternates.contains(&alt);
                if !dup {
                    existing.alternates.push(alt);
                }
            }
            false
        }
        None => {
            records.insert(rec.dedup_key.clone(), rec);
            true
        }
    }
}

pub fn dedup(crashes: impl IntoIterator<Item = RawCrash>, model: &LibraryModel) -> BTreeMap<String, CrashRecord> {
    let mut out = BTreeMap::new();
    for c in crashes {
        merge_record(&mut out, to_record(&c, model));
    }
    out
}

/// Re-merges already deduplicated records (idempotent).
pub fn dedup_records(records: impl IntoIterator<Item = CrashRecord>) -> BTreeMap<String, CrashRecord> {
    let mut out = BTreeMap::new();
    for r in records {
        merge_record(&mut out, r);
    }
    out
}

/// Doc comments of APIs on the stack and of APIs the driver calls.
pub fn implicated_docs(record: &CrashRecord, driver: &FuzzDriver, model: &LibraryModel) -> BTreeMap<String, String> {
    let names = model.api_names();
    let mut apis: BTreeSet<String> =
        record.stack.iter().filter(|f| names.contains(&f.symbol)).map(|f| f.symbol.clone()).collect();
    apis.extend(driver.effective_sequence(&names));
    apis.into_iter()
        .filter_map(|a| model.api(&a).and_then(|m| m.doc.clone()).map(|d| (a, d)))
        .collect()
}

pub fn classify(
    record: &CrashRecord,
    driver: &FuzzDriver,
    model: &LibraryModel,
    oracle: &dyn AnalysisOracle,
) -> Result<CrashRecord, TriageError> {
    if record.classification != Classification::Unclassified {
        return Err(TriageError::AlreadyClassified(record.dedup_key.clone()));
    }
    let req = AnalysisRequest { record, driver, docs: implicated_docs(record, driver, model), model };
    let mut out = record.clone();
    match oracle.classify(&req) {
        Ok(v) if v.classification != Classification::Unclassified => {
            out.classification = v.classification;
            out.rationale = v.rationale;
            out.needs_review = false;
        }
        Ok(v) => {
            out.rationale = v.rationale;
            out.needs_review = true;
        }
        Err(e) => {
            out.rationale = format!("analysis oracle failed: {e}");
            out.needs_review = true;
        }
    }
    Ok(out)
}

/// Crash category words and the doc keywords stating a matching precondition.
fn precondition_keywords(record: &CrashRecord) -> (&'static str, &'static [&'static str]) {
    let s = record.summary.to_ascii_lowercase();
    let report = record.report.to_ascii_lowercase();
    match record.sanitizer_kind {
        SanitizerKind::AddrViolation
            if s.contains("segv") && (s.contains("0x000000000") || report.contains("zero page")) =>
        {
            ("null dereference", &["must not be null", "non-null", "cannot be null", "must be non-null", "not null"])
        }
        SanitizerKind::AddrViolation if s.contains("overflow") => (
            "out-of-bounds access",
            &["at least", "must be large enough", "buffer size", "must not exceed", "length must", "size must"],
        ),
        SanitizerKind::AddrViolation if s.contains("use-after-free") || s.contains("double-free") => (
            "use of released memory",
            &["must not be used after", "only once", "after free", "after calling", "must not be freed"],
        ),
        SanitizerKind::UninitRead => ("uninitialized read", &["must be initialized", "before calling", "must be called before"]),
        SanitizerKind::Leak => ("leak", &["caller must free", "must be freed", "must be released", "caller owns"]),
        _ => ("fault", &["must ", "precondition"]),
    }
}

fn is_driver_file(path: &str, driver: &FuzzDriver) -> bool {
    let base = Path::new(&driver.file).file_name().map(|b| b.to_string_lossy().into_owned());
    path == driver.file || base.is_some_and(|b| path.ends_with(&b))
}

/// Deterministic rule: misuse iff the faulting frame is driver code, or the
/// innermost public API on the stack documents a precondition matching the
/// crash category.
pub fn stub_verdict(req: &AnalysisRequest<'_>) -> Verdict {
    let rec = req.record;
    let fault = rec.stack.iter().find(|f| !is_runtime_frame(f));
    if let Some(f) = fault {
        if f.file.as_deref().is_some_and(|p| is_driver_file(p, req.driver)) || f.symbol == crate::synth::ENTRY_POINT {
            return Verdict {
                classification: Classification::ApiMisuse,
                rationale: format!("faulting frame {} is in driver code", f.symbol),
            };
        }
    }
    let names = req.model.api_names();
    let api = rec.stack.iter().find(|f| names.contains(&f.symbol)).map(|f| f.symbol.as_str());
    let (category, keywords) = precondition_keywords(rec);
    if let Some(api) = api {
        let doc = req.docs.get(api).cloned().or_else(|| req.model.api(api).and_then(|m| m.doc.clone()));
        if let Some(doc) = doc {
            let flat = doc.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
            if let Some(k) = keywords.iter().find(|k| flat.contains(*k)) {
                return Verdict {
                    classification: Classification::ApiMisuse,
                    rationale: format!("{category} in {api}, whose documentation states a precondition (\"{}\")", k.trim()),
                };
            }
        }
        return Verdict {
            classification: Classification::LibraryBug,
            rationale: format!("{category} inside library code reached through {api}; no documented precondition covers it"),
        };
    }
    Verdict {
        classification: Classification::LibraryBug,
        rationale: format!(
            "{category} at {} outside driver code",
            fault.map(|f| f.symbol.as_str()).unwrap_or("unknown location")
        ),
    }
}

#[derive(Serialize)]
struct TriageFile<'a> {
    schema: &'static str,
    #[serde(flatten)]
    record: &'a CrashRecord,
}

/// `<dir>/<dedup_key>/{input.bin, report.txt, triage.json}`.
pub fn write_artifacts(record: &CrashRecord, dir: &Path) -> std::io::Result<()> {
    let d = dir.join(&record.dedup_key);
    std::fs::create_dir_all(&d)?;
    std::fs::write(d.join("input.bin"), &record.input)?;
    std::fs::write(d.join("report.txt"), &record.report)?;
    let json = serde_json::to_string_pretty(&TriageFile { schema: TRIAGE_SCHEMA, record })
        .map_err(std::io::Error::other)?;
    std::fs::write(d.join("triage.json"), json + "\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageSummary {
    pub unique_crashes: usize,
    pub api_misuse: usize,
    pub library_bugs: usize,
    pub unclassified: usize,
}

pub fn summarize<'a>(records: impl IntoIterator<Item = &'a CrashRecord>) -> TriageSummary {
    let mut s = TriageSummary::default();
    for r in records {
        s.unique_crashes += 1;
        match r.classification {
            Classification::ApiMisuse => s.api_misuse += 1,
            Classification::LibraryBug => s.library_bugs += 1,
            Classification::Unclassified => s.unclassified += 1,
        }
    }
    s
}
