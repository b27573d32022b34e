use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{validate_source, FuzzDriver, ENTRY_POINT};
use crate::cparse;
use crate::metainfo::LibraryModel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub ok: bool,
    pub binary: Option<PathBuf>,
    pub diagnostics: String,
}

impl CompileOutcome {
    pub fn failed(diagnostics: impl Into<String>) -> Self {
        Self { ok: false, binary: None, diagnostics: diagnostics.into() }
    }
}

pub trait DriverCompiler: Send + Sync {
    fn compile(&self, driver: &FuzzDriver, model: &LibraryModel) -> CompileOutcome;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompilerConfig {
    pub cc: String,
    pub cflags: Vec<String>,
    /// `address` or `memory`; combined with `fuzzer`.
    pub sanitizers: Vec<String>,
    /// Library implementation files compiled into each driver, relative to
    /// the library root. `None` means every library file found by the scan.
    pub library_sources: Option<Vec<String>>,
    pub include_dirs: Vec<PathBuf>,
    pub link_flags: Vec<String>,
}

impl Default for CompilerConfig {
    fn default() -> Self {
        Self {
            cc: "clang".into(),
            cflags: vec![
                "-gdwarf-4".into(),
                "-O1".into(),
                "-fno-omit-frame-pointer".into(),
                "-Werror=implicit-function-declaration".into(),
            ],
            sanitizers: vec!["address".into()],
            library_sources: None,
            include_dirs: Vec::new(),
            link_flags: Vec::new(),
        }
    }
}

/// Directories containing the library headers, and their parents up to the
/// root, so both `"x.h"` and `<lib/x.h>` spellings resolve.
pub fn header_include_dirs(model: &LibraryModel) -> Vec<PathBuf> {
    let mut dirs = BTreeSet::new();
    for h in &model.headers {
        let mut p = Path::new(h).parent();
        while let Some(d) = p {
            if d.as_os_str().is_empty() {
                break;
            }
            dirs.insert(model.root.join(d));
            p = d.parent();
        }
    }
    dirs.insert(model.root.clone());
    dirs.into_iter().collect()
}

/// Real compilation with the fuzzing engine and sanitizers linked in.
pub struct ClangCompiler {
    pub config: CompilerConfig,
    /// Drivers are written to `<workdir>/drivers`, binaries to `<workdir>/bin`.
    pub workdir: PathBuf,
}

impl ClangCompiler {
    pub fn new(config: CompilerConfig, workdir: &Path) -> Self {
        Self { config, workdir: workdir.to_path_buf() }
    }

    pub fn command(&self, driver: &FuzzDriver, model: &LibraryModel, out: &Path) -> Command {
        let c = &self.config;
        let mut cmd = Command::new(&c.cc);
        cmd.args(&c.cflags);
        let mut san = vec!["fuzzer".to_string()];
        san.extend(c.sanitizers.iter().cloned());
        cmd.arg(format!("-fsanitize={}", san.join(",")));
        for d in header_include_dirs(model).iter().chain(&c.include_dirs) {
            cmd.arg("-I").arg(d);
        }
        cmd.arg(self.workdir.join(&driver.file));
        let sources = c.library_sources.clone().unwrap_or_else(|| model.library_files.clone());
        for s in sources {
            cmd.arg(model.root.join(s));
        }
        cmd.arg("-o").arg(out);
        cmd.args(&c.link_flags);
        cmd
    }
}

impl DriverCompiler for ClangCompiler {
    fn compile(&self, driver: &FuzzDriver, model: &LibraryModel) -> CompileOutcome {
        let src = self.workdir.join(&driver.file);
        let bin = self.workdir.join("bin").join(&driver.id);
        for dir in [src.parent(), bin.parent()].into_iter().flatten() {
            if let Err(e) = std::fs::create_dir_all(dir) {
                return CompileOutcome::failed(format!("cannot create {}: {e}", dir.display()));
            }
        }
        if let Err(e) = std::fs::write(&src, &driver.source) {
            return CompileOutcome::failed(format!("cannot write {}: {e}", src.display()));
        }
        let mut cmd = self.command(driver, model, &bin);
        tracing::debug!(driver = %driver.id, cmd = ?cmd, "compiling");
        match cmd.output() {
            Ok(out) => {
                let diagnostics = String::from_utf8_lossy(&out.stderr).into_owned();
                if out.status.success() {
                    CompileOutcome { ok: true, binary: Some(bin), diagnostics }
                } else {
                    CompileOutcome::failed(diagnostics)
                }
            }
            Err(e) => CompileOutcome::failed(format!("cannot run {}: {e}", self.config.cc)),
        }
    }
}

/// Functions a driver may call without a library header.
const LIBC: [&str; 32] = [
    "malloc", "calloc", "realloc", "free", "memcpy", "memmove", "memset", "memcmp", "strlen",
    "strcmp", "strncmp", "strcpy", "strncpy", "strdup", "strndup", "strchr", "strstr", "printf",
    "fprintf", "snprintf", "sprintf", "puts", "fopen", "fclose", "fwrite", "fread", "abort",
    "exit", "assert", "atoi", "strtol", "sizeof",
];

/// Static stand-in for a compiler: checks the entry point and that every
/// called function is declared by an included library header, defined in
/// the driver, or a common libc function. Diagnostics mimic clang's.
pub struct CheckCompiler;

impl CheckCompiler {
    fn included_headers(source: &str) -> Vec<String> {
        let re = Regex::new(r#"(?m)^\s*#\s*include\s*[<"]([^>"]+)[>"]"#).expect("static regex");
        re.captures_iter(source).map(|c| c[1].to_string()).collect()
    }

    pub fn check(source: &str, file: &str, model: &LibraryModel) -> Result<(), String> {
        validate_source(source).map_err(|e| format!("{file}:1:1: error: {e}"))?;
        let includes = Self::included_headers(source);
        let visible_header = |h: &str| {
            includes.iter().any(|inc| h == inc || h.ends_with(&format!("/{inc}")))
        };
        let parsed = cparse::parse_source(source, &cparse::ParseOptions::default());
        let local: BTreeSet<&str> = parsed.functions.iter().map(|f| f.name.as_str()).collect();
        let mut errors = Vec::new();
        for f in &parsed.functions {
            let Some(body) = &f.body else { continue };
            for call in cparse::calls_in_order(&body.tokens) {
                let name = call.name.as_str();
                if local.contains(name) || LIBC.contains(&name) || name == ENTRY_POINT {
                    continue;
                }
                let declared = match model.api(name) {
                    Some(api) => visible_header(&api.header),
                    None => false,
                };
                if !declared {
                    errors.push(format!(
                        "{file}:{}:1: error: call to undeclared function '{name}'; ISO C99 and later do not support implicit function declarations",
                        call.line
                    ));
                }
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            errors.push(format!("{} errors generated.", errors.len()));
            Err(errors.join("\n"))
        }
    }
}

impl DriverCompiler for CheckCompiler {
    fn compile(&self, driver: &FuzzDriver, model: &LibraryModel) -> CompileOutcome {
        match Self::check(&driver.source, &driver.file, model) {
            Ok(()) => CompileOutcome { ok: true, binary: None, diagnostics: String::new() },
            Err(d) => CompileOutcome::failed(d),
        }
    }
}

/// Replays a fixed list of outcomes (then repeats the last one); for tests.
pub struct ScriptedCompiler {
    script: Vec<bool>,
    calls: Mutex<usize>,
}

impl ScriptedCompiler {
    pub fn new(script: Vec<bool>) -> Self {
        Self { script, calls: Mutex::new(0) }
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().expect("poisoned")
    }
}

impl DriverCompiler for ScriptedCompiler {
    fn compile(&self, driver: &FuzzDriver, _model: &LibraryModel) -> CompileOutcome {
        let mut n = self.calls.lock().expect("poisoned");
        let ok = self.script.get(*n).or(self.script.last()).copied().unwrap_or(true);
        *n += 1;
        if ok {
            CompileOutcome { ok: true, binary: None, diagnostics: String::new() }
        } else {
            CompileOutcome::failed(format!("{}:1:1: error: scripted failure {}", driver.file, *n))
        }
    }
}
