//! The full pipeline over a working directory: mine, generate (with compile
//! repair and seeds), schedule (with mutation and triage), report. Every
//! stage reads its inputs from and writes its outputs to JSON checkpoints.

pub mod config;
pub mod report;

pub use config::{CampaignConfig, ConfigError, LibraryConfig};
pub use report::{build_report, curve_csv, render_text, CampaignReport, REPORT_SCHEMA};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coverage::{tag_sequence, CoverageLedger, SequenceHistory, Token};
use crate::executor::{DriverExecutor, LibFuzzerExecutor, SimExecutor, SimSpec};
use crate::metainfo::{normalize_type, scan_library, LibraryModel, MetainfoError, Param};
use crate::mutation::{apply_mutation, compute_energy, plan_mutation};
use crate::oracle::{OracleError, Oracles, RepairKind, RepairRequest};
use crate::scheduler::{
    assign_time, run_campaign, CampaignHooks, CampaignStatus, CampaignView, Flow, MutationOutcome, MutationRecord,
    ScheduleDecision, ScheduleState, SchedulerError,
};
use crate::sequence::{
    build_compat_graph, extract_all, infer_relations, mine_mp_sequences, mine_usage_sequences,
    synthesize_sem_sequences, CompatibilityGraph, SemanticDescription, SemanticRelation, SequencePool,
};
use crate::synth::{
    build_seed_corpus, compile_with_repair, generate_driver, plan_calls, select_sequences, target_order,
    CheckCompiler, ClangCompiler, DriverCompiler, DriverState, FuzzDriver,
};
use crate::triage::{classify, merge_record, to_record, write_artifacts, Classification, CrashRecord, RawCrash};

pub const MINING_SCHEMA: &str = "masfuzz.mining/1";
pub const DRIVERS_SCHEMA: &str = "masfuzz.drivers/1";
pub const CHECKPOINT_SCHEMA: &str = "masfuzz.checkpoint/1";
pub const CRASHES_SCHEMA: &str = "masfuzz.crashes/1";

pub const MODEL_FILE: &str = "model.json";
pub const SEQUENCES_FILE: &str = "sequences.json";
pub const DRIVERS_FILE: &str = "drivers.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CRASHES_FILE: &str = "crashes.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metainfo(#[from] MetainfoError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("{file} not found in the working directory; run the `{stage}` stage first")]
    MissingCheckpoint { file: String, stage: &'static str },
    #[error("checkpoint {file} is unusable: {reason}")]
    Checkpoint { file: String, reason: String },
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("simulation spec: {0}")]
    SimSpec(String),
}

pub type Result<T> = std::result::Result<T, CampaignError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io { path: path.into(), source }
}

pub struct Workdir {
    pub root: PathBuf,
}

#[derive(Deserialize)]
struct SchemaOnly {
    schema: String,
}

impl Workdir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self { root: root.into() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn write_json<T: Serialize>(&self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name);
        let text = serde_json::to_string_pretty(v)
            .map_err(|e| CampaignError::Checkpoint { file: name.into(), reason: e.to_string() })?;
        // write-then-rename so an interrupted write keeps the previous checkpoint
        let tmp = self.path(&format!(".{name}.tmp"));
        std::fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &p).map_err(io_err(&p))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str, schema: &str) -> Result<T> {
        let p = self.path(name);
        if !p.is_file() {
            return Err(CampaignError::MissingCheckpoint { file: name.into(), stage });
        }
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        let bad = |reason: String| CampaignError::Checkpoint { file: name.into(), reason };
        let tag: SchemaOnly = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if tag.schema != schema {
            return Err(bad(format!("schema {} where {schema} was expected", tag.schema)));
        }
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d).map_err(io_err(d))?;
        }
        std::fs::write(&p, text).map_err(io_err(&p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningCheckpoint {
    pub schema: String,
    pub pool: SequencePool,
    pub descriptions: BTreeMap<String, SemanticDescription>,
    pub relations: BTreeSet<SemanticRelation>,
    pub sem_transcript: Option<String>,
    pub compat: CompatibilityGraph,
    pub wall_secs: Option<f64>,
}

impl MiningCheckpoint {
    pub fn sem_edges(&self) -> BTreeSet<(String, String)> {
        self.relations.iter().map(|r| (r.predecessor.clone(), r.successor.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub driver_id: String,
    pub target_api: String,
    pub generation_attempts: u32,
    pub repair_attempts: u32,
    pub state: DriverState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriversCheckpoint {
    pub schema: String,
    pub drivers: Vec<FuzzDriver>,
    /// Pool after generation consumed its sequences.
    pub pool: SequencePool,
    pub records: Vec<GenerationRecord>,
    pub wall_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashBook {
    pub schema: String,
    pub records: BTreeMap<String, CrashRecord>,
    /// Drivers regenerated after an API-misuse verdict.
    pub repaired: Vec<FuzzDriver>,
}

impl Default for CrashBook {
    fn default() -> Self {
        Self { schema: CRASHES_SCHEMA.into(), records: BTreeMap::new(), repaired: Vec::new() }
    }
}

impl CrashBook {
    pub fn library_bugs(&self) -> usize {
        self.records.values().filter(|r| r.classification == Classification::LibraryBug).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCheckpoint {
    pub schema: String,
    pub state: ScheduleState,
    /// Pool after mutations consumed their sequences.
    pub pool: SequencePool,
    pub wall_secs: Option<f64>,
}

fn seed_for(base: u64, key: &str) -> u64 {
    let d = Sha256::digest(key.as_bytes());
    base ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Resolves declarations the parser could not type, using the semantic
/// oracle's signature proposal when it normalizes cleanly.
fn resolve_with_oracle(model: &mut LibraryModel, oracles: &Oracles) {
    for i in 0..model.apis.len() {
        if !model.apis[i].needs_oracle {
            continue;
        }
        let sig = match oracles.semantic.resolve_signature(&model.apis[i]) {
            Ok(Some(s)) => s,
            Ok(None) => continue,
            Err(e) => {
                tracing::warn!(api = %model.apis[i].name, error = %e, "signature resolution failed");
                continue;
            }
        };
        let ret = normalize_type(&sig.return_type, &model.types);
        let mut params = Vec::new();
        let mut ok = ret.is_ok();
        for (name, ty) in &sig.params {
            match normalize_type(ty, &model.types) {
                Ok(t) => params.push(Param { name: name.clone(), ty: t }),
                Err(_) => ok = false,
            }
        }
        if sig.variadic {
            params.push(Param { name: String::new(), ty: crate::metainfo::NormalizedType::variadic() });
        }
        if let (true, Ok(ret)) = (ok, ret) {
            let api = &mut model.apis[i];
            api.return_type = ret;
            api.params = params;
            api.needs_oracle = false;
        }
    }
}

pub struct Pipeline {
    pub cfg: CampaignConfig,
    pub oracles: Oracles,
    pub work: Workdir,
}

impl Pipeline {
    pub fn new(cfg: CampaignConfig, oracles: Oracles) -> Result<Self> {
        cfg.validate()?;
        let work = Workdir::create(&cfg.workdir)?;
        Ok(Self { cfg, oracles, work })
    }

    /// Oracles per the configuration's backends.
    pub fn from_config(cfg: CampaignConfig) -> Result<Self> {
        cfg.validate()?;
        let oracles = Oracles::from_config(&cfg.oracles)?;
        Self::new(cfg, oracles)
    }

    pub fn simulated(&self) -> bool {
        self.cfg.simulate.is_some()
    }

    fn timed<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
        let t = Instant::now();
        let v = f()?;
        // wall time would make simulated reports irreproducible
        Ok((v, (!self.simulated()).then(|| t.elapsed().as_secs_f64())))
    }

    pub fn load_model(&self) -> Result<LibraryModel> {
        self.work.read_json(MODEL_FILE, "mine", crate::metainfo::MODEL_SCHEMA)
    }

    pub fn load_mining(&self) -> Result<MiningCheckpoint> {
        self.work.read_json(SEQUENCES_FILE, "mine", MINING_SCHEMA)
    }

    pub fn load_drivers(&self) -> Result<DriversCheckpoint> {
        self.work.read_json(DRIVERS_FILE, "generate", DRIVERS_SCHEMA)
    }

    pub fn load_schedule(&self) -> Result<ScheduleCheckpoint> {
        self.work.read_json(CHECKPOINT_FILE, "schedule", CHECKPOINT_SCHEMA)
    }

    pub fn load_crashes(&self) -> Result<CrashBook> {
        if self.work.exists(CRASHES_FILE) {
            self.work.read_json(CRASHES_FILE, "schedule", CRASHES_SCHEMA)
        } else {
            Ok(CrashBook::default())
        }
    }

    /// Stage 1: scan the library and mine UE, MP and SEM sequences.
    pub fn mine(&self) -> Result<(LibraryModel, MiningCheckpoint)> {
        let ((model, ckpt), wall) = self.timed(|| {
            let mut model = scan_library(&self.cfg.library.root, &self.cfg.library.scan)?;
            resolve_with_oracle(&mut model, &self.oracles);
            let mut pool = SequencePool::new();
            pool.extend(mine_usage_sequences(&model));
            let graph = build_compat_graph(&model);
            pool.extend(mine_mp_sequences(&graph, &self.cfg.miner));
            let descriptions = extract_all(&model, self.oracles.semantic.as_ref(), self.cfg.miner.sem_batch_size);
            let descs: Vec<SemanticDescription> = descriptions.values().cloned().collect();
            let (relations, transcript) = infer_relations(&descs, self.oracles.semantic.as_ref());
            pool.extend(synthesize_sem_sequences(&relations, &self.cfg.miner, transcript.as_deref().unwrap_or("")));
            let ckpt = MiningCheckpoint {
                schema: MINING_SCHEMA.into(),
                pool,
                descriptions,
                relations,
                sem_transcript: transcript,
                compat: graph,
                wall_secs: None,
            };
            Ok((model, ckpt))
        })?;
        let ckpt = MiningCheckpoint { wall_secs: wall, ..ckpt };
        self.work.write_json(MODEL_FILE, &model)?;
        self.work.write_json(SEQUENCES_FILE, &ckpt)?;
        Ok((model, ckpt))
    }

    fn compiler(&self) -> Box<dyn DriverCompiler> {
        if self.simulated() {
            Box::new(CheckCompiler)
        } else {
            Box::new(ClangCompiler::new(self.cfg.compiler.clone(), &self.work.root))
        }
    }

    fn save_source(&self, d: &FuzzDriver) -> Result<()> {
        self.work.write_text(&d.file, &d.source)
    }

    fn seed_corpus(&self, d: &FuzzDriver, model: &LibraryModel) -> Result<()> {
        let corpus = build_seed_corpus(d, model, self.oracles.generation.as_ref());
        let dir = self.work.path("corpus").join(&d.id);
        corpus.write_to(&dir).map_err(io_err(&dir))
    }

    /// Stage 2: one driver per public API per round, compiled with up to
    /// three repairs, plus its seed corpus.
    pub fn generate(&self) -> Result<DriversCheckpoint> {
        let model = self.load_model()?;
        let mining = self.load_mining()?;
        let compiler = self.compiler();
        let gen = self.oracles.generation.as_ref();
        let (ckpt, wall) = self.timed(|| {
            let mut pool = mining.pool.clone();
            let mut drivers = Vec::new();
            let mut records = Vec::new();
            for _round in 0..self.cfg.rounds {
                for target in target_order(&model, &pool) {
                    let id = format!("d{:03}", drivers.len());
                    let bundle = select_sequences(&target, &mut pool, &model);
                    let plan = plan_calls(&bundle);
                    let g = generate_driver(&id, Some(&bundle), &plan, &target, &model, gen, None, true);
                    let (driver, _) = compile_with_repair(g.driver, compiler.as_ref(), &model, gen);
                    self.save_source(&driver)?;
                    if driver.state == DriverState::Compiled {
                        self.seed_corpus(&driver, &model)?;
                    }
                    tracing::info!(driver = %driver.id, target = %target, state = ?driver.state, "generated");
                    records.push(GenerationRecord {
                        driver_id: id,
                        target_api: target,
                        generation_attempts: g.attempts,
                        repair_attempts: driver.repair_attempts,
                        state: driver.state,
                    });
                    drivers.push(driver);
                }
            }
            Ok(DriversCheckpoint { schema: DRIVERS_SCHEMA.into(), drivers, pool, records, wall_secs: None })
        })?;
        let ckpt = DriversCheckpoint { wall_secs: wall, ..ckpt };
        self.work.write_json(DRIVERS_FILE, &ckpt)?;
        Ok(ckpt)
    }

    fn executor(&self, model: &LibraryModel) -> Result<Box<dyn DriverExecutor>> {
        match &self.cfg.simulate {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                let spec: SimSpec = serde_json::from_str(&text).map_err(|e| CampaignError::SimSpec(e.to_string()))?;
                if spec.schema != crate::executor::sim::SIMSPEC_SCHEMA {
                    return Err(CampaignError::SimSpec(format!("unexpected schema {}", spec.schema)));
                }
                Ok(Box::new(SimExecutor::new(spec, Some(model.clone()))))
            }
            None => Ok(Box::new(LibFuzzerExecutor::new(
                self.cfg.executor.clone(),
                &self.work.root,
                &model.root,
                self.cfg.rng_seed,
            ))),
        }
    }

    fn initial_state(&self, model: &LibraryModel, drivers: &DriversCheckpoint) -> ScheduleState {
        ScheduleState::new(drivers.drivers.clone(), CoverageLedger::new(model), &self.cfg.scheduler)
    }

    /// Decisions for every compiled driver against the initial state,
    /// without executing anything.
    pub fn dry_run(&self) -> Result<Vec<ScheduleDecision>> {
        let model = self.load_model()?;
        let drivers = self.load_drivers()?;
        let state = self.initial_state(&model, &drivers);
        let public = model.api_names();
        let n = state.drivers.len();
        let view = CampaignView {
            ledger: &state.ledger,
            history: &state.history,
            remaining: state.remaining,
            driver_count: n,
            weights: &self.cfg.weights,
        };
        let mut out = Vec::new();
        for (i, d) in state.drivers.iter().enumerate().filter(|(_, d)| d.state == DriverState::Compiled) {
            let tokens = tag_sequence(&d.effective_sequence(&public), &d.sequences_used, &drivers.pool);
            out.push(assign_time(&d.id, &tokens, i, &view, &self.cfg.scheduler)?);
        }
        Ok(out)
    }

    /// Stage 3: the scheduling loop with mutation and triage. With `resume`,
    /// an unfinished checkpoint is continued.
    pub fn schedule(&self, resume: bool) -> Result<ScheduleCheckpoint> {
        let model = self.load_model()?;
        let mining = self.load_mining()?;
        let drivers = self.load_drivers()?;
        let mut executor = self.executor(&model)?;
        let (state, pool, book) = match (resume, self.work.exists(CHECKPOINT_FILE)) {
            (true, true) => {
                let c = self.load_schedule()?;
                if c.state.status != CampaignStatus::Running {
                    return Ok(c);
                }
                (c.state, c.pool, self.load_crashes()?)
            }
            _ => (self.initial_state(&model, &drivers), drivers.pool.clone(), CrashBook::default()),
        };
        let compiler = self.compiler();
        let mut hooks = PipelineHooks {
            pipeline: self,
            model: &model,
            compiler: compiler.as_ref(),
            public: model.api_names(),
            pool,
            graph: mining.compat.clone(),
            sem_edges: mining.sem_edges(),
            book,
            error: None,
        };
        let start = Instant::now();
        let mut state = state;
        state.status = CampaignStatus::Running;
        let final_state = run_campaign(state, executor.as_mut(), &mut hooks, &self.cfg.weights, &self.cfg.scheduler)?;
        if let Some(e) = hooks.error.take() {
            return Err(e);
        }
        let ckpt = ScheduleCheckpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            state: final_state,
            pool: hooks.pool.clone(),
            wall_secs: (!self.simulated()).then(|| start.elapsed().as_secs_f64()),
        };
        self.work.write_json(CHECKPOINT_FILE, &ckpt)?;
        self.work.write_json(CRASHES_FILE, &hooks.book)?;
        Ok(ckpt)
    }

    /// Classifies records left unclassified (e.g. after an oracle outage)
    /// and rewrites their artifacts.
    pub fn triage(&self) -> Result<CrashBook> {
        let model = self.load_model()?;
        let sched = self.load_schedule()?;
        let mut book = self.load_crashes()?;
        let all: Vec<&FuzzDriver> =
            sched.state.drivers.iter().chain(&sched.state.children).chain(&book.repaired).collect();
        let mut updated = BTreeMap::new();
        for (key, rec) in &book.records {
            if rec.classification != Classification::Unclassified {
                continue;
            }
            let Some(driver) = all.iter().find(|d| d.id == rec.driver_id) else { continue };
            if let Ok(r) = classify(rec, driver, &model, self.oracles.analysis.as_ref()) {
                updated.insert(key.clone(), r);
            }
        }
        book.records.extend(updated);
        let dir = self.work.path("crashes");
        for r in book.records.values() {
            write_artifacts(r, &dir).map_err(io_err(&dir))?;
        }
        self.work.write_json(CRASHES_FILE, &book)?;
        Ok(book)
    }

    /// Builds the report from the checkpoints and writes `report.json`,
    /// `report.txt` and `coverage_curve.csv`.
    pub fn report(&self) -> Result<CampaignReport> {
        let sched = self.load_schedule()?;
        let model = self.load_model()?;
        let mining = self.load_mining()?;
        let drivers = self.load_drivers()?;
        let book = self.load_crashes()?;
        let r = build_report(&self.cfg, &model, &mining, &drivers, &sched, &book);
        self.work.write_json(REPORT_FILE, &r)?;
        self.work.write_text("report.txt", &render_text(&r))?;
        self.work.write_text("coverage_curve.csv", &curve_csv(&r))?;
        Ok(r)
    }

    /// All stages; with `resume`, completed stages are loaded from their
    /// checkpoints instead of re-run.
    pub fn run(&self, resume: bool) -> Result<CampaignReport> {
        if !(resume && self.work.exists(MODEL_FILE) && self.work.exists(SEQUENCES_FILE)) {
            self.mine()?;
        }
        if !(resume && self.work.exists(DRIVERS_FILE)) {
            self.generate()?;
        }
        self.schedule(resume)?;
        self.report()
    }
}

struct PipelineHooks<'a> {
    pipeline: &'a Pipeline,
    model: &'a LibraryModel,
    compiler: &'a dyn DriverCompiler,
    public: BTreeSet<String>,
    pool: SequencePool,
    graph: CompatibilityGraph,
    sem_edges: BTreeSet<(String, String)>,
    book: CrashBook,
    /// First persistence failure; the loop cannot propagate it.
    error: Option<CampaignError>,
}

impl PipelineHooks<'_> {
    fn keep(&mut self, r: Result<()>) {
        if let Err(e) = r {
            tracing::error!(error = %e, "campaign persistence failed");
            self.error.get_or_insert(e);
        }
    }

    fn repair_misuse(&mut self, driver: &FuzzDriver, rec: &CrashRecord) {
        let already = driver.misuse_repairs > 0 || self.book.repaired.iter().any(|r| r.lineage.as_deref() == Some(&driver.id));
        if already {
            return;
        }
        let gen = self.pipeline.oracles.generation.as_ref();
        let req = RepairRequest {
            driver,
            kind: RepairKind::Misuse { report: &rec.report, input: &rec.input },
            model: self.model,
        };
        let source = match gen.repair(&req) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(driver = %driver.id, error = %e, "misuse repair failed");
                return;
            }
        };
        let mut fixed = FuzzDriver::new(&format!("{}-r", driver.id), &driver.target_api, source, driver.plan.clone());
        fixed.lineage = Some(driver.id.clone());
        fixed.sequences_used = driver.sequences_used.clone();
        fixed.misuse_repairs = 1;
        let (fixed, _) = compile_with_repair(fixed, self.compiler, self.model, gen);
        let saved = self.pipeline.save_source(&fixed);
        self.keep(saved);
        self.book.repaired.push(fixed);
    }
}

impl CampaignHooks for PipelineHooks<'_> {
    fn sequence_of(&self, driver: &FuzzDriver) -> Vec<Token> {
        tag_sequence(&driver.effective_sequence(&self.public), &driver.sequences_used, &self.pool)
    }

    fn mutate(&mut self, driver: &FuzzDriver, ledger: &CoverageLedger, history: &SequenceHistory) -> Option<MutationOutcome> {
        let energies = compute_energy(ledger, history, &self.pool);
        let seq = driver.effective_sequence(&self.public);
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.pipeline.cfg.rng_seed, &driver.id));
        let plan = plan_mutation(&driver.id, &seq, &energies, &self.pool, &self.graph, &self.sem_edges, &mut rng)?;
        let gen = self.pipeline.oracles.generation.as_ref();
        let child_id = format!("{}-m", driver.id);
        let (child, target) = apply_mutation(driver, &seq, &plan, &child_id, &mut self.pool, self.model, gen).ok()?;
        let child = if child.state == DriverState::Retired {
            child
        } else {
            compile_with_repair(child, self.compiler, self.model, gen).0
        };
        let saved = self.pipeline.save_source(&child);
        self.keep(saved);
        if child.state == DriverState::Compiled {
            let seeded = self.pipeline.seed_corpus(&child, self.model);
            self.keep(seeded);
        }
        Some(MutationOutcome {
            record: MutationRecord {
                parent: driver.id.clone(),
                plan: Some(plan),
                child: Some(child.id.clone()),
                target_sequence: target,
                child_state: Some(child.state),
            },
            child: Some(child),
        })
    }

    fn crashes(&mut self, driver: &FuzzDriver, crashes: &[RawCrash]) -> Flow {
        let dir = self.pipeline.work.path("crashes");
        for raw in crashes {
            let rec = to_record(raw, self.model);
            let key = rec.dedup_key.clone();
            if self.book.records.contains_key(&key) {
                merge_record(&mut self.book.records, rec);
            } else {
                let analysis = self.pipeline.oracles.analysis.as_ref();
                let rec = classify(&rec, driver, self.model, analysis).unwrap_or(rec);
                tracing::info!(driver = %driver.id, key = %key, class = ?rec.classification, "new crash");
                if rec.classification == Classification::ApiMisuse {
                    self.repair_misuse(driver, &rec);
                }
                self.book.records.insert(key.clone(), rec);
            }
            let written = write_artifacts(&self.book.records[&key], &dir).map_err(io_err(&dir));
            self.keep(written);
        }
        match self.pipeline.cfg.scheduler.stop_after_bugs {
            Some(n) if self.book.library_bugs() >= n => Flow::Stop,
            _ => Flow::Continue,
        }
    }

    fn checkpoint(&mut self, state: &ScheduleState) {
        let ckpt = ScheduleCheckpoint {
            schema: CHECKPOINT_SCHEMA.into(),
            state: state.clone(),
            pool: self.pool.clone(),
            wall_secs: None,
        };
        let a = self.pipeline.work.write_json(CHECKPOINT_FILE, &ckpt);
        self.keep(a);
        let b = self.pipeline.work.write_json(CRASHES_FILE, &self.book);
        self.keep(b);
    }
}
