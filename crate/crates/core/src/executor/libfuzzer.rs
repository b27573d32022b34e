use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::{check_budget, CoverageExport, DriverExecutor, ExecutionResult, ExecutorError};
use crate::coverage::{parse_report, sim_report, split_branch_id, ReportFormat};
use crate::synth::FuzzDriver;
use crate::triage::RawCrash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LibFuzzerConfig {
    /// Time allowed after the graceful stop signal before a hard kill.
    pub grace_secs: f64,
    /// Per-input timeout passed as `-timeout`.
    pub input_timeout_secs: u32,
    pub rss_limit_mb: u32,
    pub max_len: Option<usize>,
    /// Symbolizer for sanitizer stacks; `llvm-symbolizer` or `addr2line`
    /// found on PATH when unset.
    pub symbolizer: Option<PathBuf>,
    pub extra_args: Vec<String>,
}

impl Default for LibFuzzerConfig {
    fn default() -> Self {
        Self {
            grace_secs: 1.0,
            input_timeout_secs: 10,
            rss_limit_mb: 2048,
            max_len: None,
            symbolizer: None,
            extra_args: Vec::new(),
        }
    }
}

fn find_on_path(names: &[&str]) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    for name in names {
        for dir in std::env::split_paths(&path) {
            let p = dir.join(name);
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// Runs `<workdir>/bin/<id>` on `<workdir>/corpus/<id>`. New inputs land in
/// the corpus directory, so corpora evolve across a driver's runs.
pub struct LibFuzzerExecutor {
    pub config: LibFuzzerConfig,
    pub workdir: PathBuf,
    /// Library root; coverage paths below it become relative.
    pub root: PathBuf,
    pub seed: u64,
    runs: BTreeMap<String, u32>,
}

impl LibFuzzerExecutor {
    pub fn new(config: LibFuzzerConfig, workdir: &Path, root: &Path, seed: u64) -> Self {
        Self { config, workdir: workdir.into(), root: root.into(), seed, runs: BTreeMap::new() }
    }

    pub fn binary(&self, driver: &FuzzDriver) -> PathBuf {
        self.workdir.join("bin").join(&driver.id)
    }

    /// Edges in driver sources or outside the library root are not library
    /// coverage.
    fn is_library_branch(&self, id: &str) -> bool {
        let Some((file, _)) = split_branch_id(id) else { return false };
        let p = Path::new(file);
        if p.is_absolute() {
            return false;
        }
        let abs = self.root.join(p);
        let work = self.workdir.canonicalize().unwrap_or_else(|_| self.workdir.clone());
        let abs = abs.canonicalize().unwrap_or(abs);
        !abs.starts_with(&work)
    }

    fn symbolizer(&self) -> Option<PathBuf> {
        self.config.symbolizer.clone().or_else(|| {
            find_on_path(&["llvm-symbolizer", "llvm-symbolizer-18", "llvm-symbolizer-14", "addr2line"])
        })
    }
}

fn io(e: std::io::Error) -> ExecutorError {
    ExecutorError::Io(e.to_string())
}

fn stop_gracefully(pid: u32) {
    // libFuzzer treats SIGUSR1 as a request to finish and still prints
    // coverage and final stats
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGUSR1);
    }
}

fn executed_units(log: &str) -> Option<u64> {
    let from_stats = log
        .lines()
        .find_map(|l| l.trim().strip_prefix("stat::number_of_executed_units:").and_then(|v| v.trim().parse().ok()));
    from_stats.or_else(|| {
        log.lines().rev().find_map(|l| {
            let l = l.trim();
            l.strip_prefix("Done ").and_then(|r| r.split_whitespace().next()).and_then(|n| n.parse().ok())
        })
    })
}

const ARTIFACT_PREFIXES: [&str; 5] = ["crash-", "leak-", "timeout-", "oom-", "slow-unit-"];

/// The part of the log describing the failure.
fn failure_excerpt(log: &str) -> String {
    let start = ["==ERROR", "ERROR: ", "ALARM:", "==WARNING: MemorySanitizer", "AddressSanitizer:DEADLYSIGNAL", "deadly signal"]
        .iter()
        .filter_map(|m| log.find(m))
        .min()
        .map(|i| log[..i].rfind('\n').map(|n| n + 1).unwrap_or(0))
        .unwrap_or(0);
    let end = log.find("\nCOVERAGE:").unwrap_or(log.len());
    log[start..end.max(start)].to_string()
}

impl DriverExecutor for LibFuzzerExecutor {
    fn execute(&mut self, driver: &FuzzDriver, budget_secs: f64) -> Result<ExecutionResult, ExecutorError> {
        check_budget(budget_secs)?;
        let bin = self.binary(driver);
        if !bin.is_file() {
            return Err(ExecutorError::Launch { driver: driver.id.clone(), reason: format!("{} not found", bin.display()) });
        }
        let run = {
            let n = self.runs.entry(driver.id.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let corpus = self.workdir.join("corpus").join(&driver.id);
        let artifacts = self.workdir.join("artifacts").join(&driver.id).join(format!("run{run}"));
        let logs = self.workdir.join("logs");
        let covdir = self.workdir.join("coverage");
        for d in [&corpus, &artifacts, &logs, &covdir] {
            std::fs::create_dir_all(d).map_err(io)?;
        }
        let log_path = logs.join(format!("{}-{run}.log", driver.id));
        let log_file = File::create(&log_path).map_err(io)?;

        let mut cmd = Command::new(&bin);
        cmd.arg(&corpus)
            .arg(format!("-artifact_prefix={}/", artifacts.display()))
            // backstop only: the run is stopped by signal at the budget
            .arg(format!("-max_total_time={}", budget_secs.ceil() as u64 + 2))
            .arg("-print_coverage=1")
            .arg("-print_final_stats=1")
            .arg("-detect_leaks=0")
            .arg(format!("-seed={}", (self.seed.wrapping_add(run as u64) % (u32::MAX as u64 - 1)) + 1))
            .arg(format!("-timeout={}", self.config.input_timeout_secs))
            .arg(format!("-rss_limit_mb={}", self.config.rss_limit_mb));
        if let Some(m) = self.config.max_len {
            cmd.arg(format!("-max_len={m}"));
        }
        cmd.args(&self.config.extra_args);
        if let Some(s) = self.symbolizer() {
            cmd.env("ASAN_SYMBOLIZER_PATH", &s).env("MSAN_SYMBOLIZER_PATH", &s);
        }
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::from(log_file));

        let start = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| ExecutorError::Launch { driver: driver.id.clone(), reason: e.to_string() })?;
        let budget = Duration::from_secs_f64(budget_secs);
        let grace = Duration::from_secs_f64(self.config.grace_secs.max(0.0));
        let status = match child.wait_timeout(budget).map_err(io)? {
            Some(s) => Some(s),
            None => {
                stop_gracefully(child.id());
                match child.wait_timeout(grace).map_err(io)? {
                    Some(s) => Some(s),
                    None => {
                        let _ = child.kill();
                        let _ = child.wait();
                        None
                    }
                }
            }
        };
        let t_actual = start.elapsed().as_secs_f64();
        let log = String::from_utf8_lossy(&std::fs::read(&log_path).map_err(io)?).into_owned();

        if executed_units(&log).is_none() && !log.contains("INFO: Seed:") {
            return Err(ExecutorError::Launch {
                driver: driver.id.clone(),
                reason: format!("engine did not start (status {status:?}): {}", log.lines().take(5).collect::<Vec<_>>().join(" | ")),
            });
        }

        let mut crashes = Vec::new();
        let mut names: Vec<PathBuf> = std::fs::read_dir(&artifacts)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.file_name().is_some_and(|n| ARTIFACT_PREFIXES.iter().any(|pre| n.to_string_lossy().starts_with(pre)))
            })
            .collect();
        names.sort();
        let excerpt = failure_excerpt(&log);
        for p in names {
            crashes.push(RawCrash { driver_id: driver.id.clone(), input: std::fs::read(&p).map_err(io)?, report: excerpt.clone() });
        }
        let failed = status.is_some_and(|s| !s.success());
        if crashes.is_empty() && failed {
            crashes.push(RawCrash {
                driver_id: driver.id.clone(),
                input: Vec::new(),
                report: format!("engine exited with {status:?} without a crash artifact\n{excerpt}"),
            });
        }

        let executions = executed_units(&log).unwrap_or(0);
        let coverage = if executions > 0 {
            let mut branches = parse_report(&log, ReportFormat::LibFuzzerText, &self.root).unwrap_or_default();
            branches.retain(|b| self.is_library_branch(b));
            let path = covdir.join(format!("{}-{run}.json", driver.id));
            std::fs::write(&path, sim_report(&branches)).map_err(io)?;
            Some(CoverageExport { branches, path: Some(path) })
        } else {
            None
        };
        Ok(ExecutionResult { driver_id: driver.id.clone(), t_actual, coverage, crashes, executions })
    }

    fn grace_secs(&self) -> f64 {
        self.config.grace_secs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_counts() {
        assert_eq!(executed_units("Done 12 runs in 1 second(s)\n"), Some(12));
        assert_eq!(executed_units("stat::number_of_executed_units: 77\nDone 12 runs"), Some(77));
        assert_eq!(executed_units("nothing"), None);
    }

    #[test]
    fn excerpt_starts_at_error() {
        let log = "INFO: x\n==1==ERROR: AddressSanitizer: SEGV\n    #0 0x1 in f a.c:1\nCOVERAGE:\nCOVERED_FUNC: x";
        let e = failure_excerpt(log);
        assert!(e.starts_with("==1==ERROR"));
        assert!(!e.contains("COVERAGE"));
    }
}
