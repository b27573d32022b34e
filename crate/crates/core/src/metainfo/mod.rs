//! Library scanning: public API surface, per-function metainfo and static
//! branch totals.

mod types;

pub use types::{
    is_primitive_name, normalize_type, NormalizedType, Qualifier, TypeError, TypeTable,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::cparse::{self, FunctionDecl, ParseOptions, ParsedFile};

pub const MODEL_SCHEMA: &str = "masfuzz.model/1";

#[derive(Debug, thiserror::Error)]
pub enum MetainfoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("no public APIs found under {root} (public header globs: {globs:?})")]
    EmptyModel { root: PathBuf, globs: Vec<String> },
    #[error("invalid glob `{pattern}`: {source}")]
    Glob {
        pattern: String,
        #[source]
        source: globset::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Headers whose declarations form the public API.
    pub public_headers: Vec<String>,
    /// Files under these globs are usage files even without an entry point.
    pub usage_globs: Vec<String>,
    pub exclude: Vec<String>,
    /// Identifiers stripped from declarations (export/visibility macros).
    pub attribute_macros: Vec<String>,
    /// Function-like macros wrapping a return type, e.g. `CJSON_PUBLIC(type)`.
    pub wrapper_macros: Vec<String>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            public_headers: vec!["include/**/*.h".into()],
            usage_globs: vec![
                "examples/**".into(),
                "example/**".into(),
                "test/**".into(),
                "tests/**".into(),
                "fuzz/**".into(),
            ],
            exclude: Vec::new(),
            attribute_macros: Vec::new(),
            wrapper_macros: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: NormalizedType,
}

/// Inclusive line range of a function definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
}

impl SourceSpan {
    pub fn contains(&self, file: &str, line: u32) -> bool {
        self.file == file && (self.start_line..=self.end_line).contains(&line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiMetainfo {
    pub name: String,
    /// A variadic tail appears as a final `...` parameter.
    pub params: Vec<Param>,
    pub return_type: NormalizedType,
    /// Path relative to the scanned root, `/`-separated.
    pub file: String,
    pub line: u32,
    pub doc: Option<String>,
    pub body: Option<String>,
    pub is_public: bool,
    /// Header carrying the public declaration.
    pub header: String,
    pub body_span: Option<SourceSpan>,
    pub needs_oracle: bool,
    pub raw_signature: String,
}

impl ApiMetainfo {
    pub fn is_variadic(&self) -> bool {
        self.params.last().is_some_and(|p| p.ty.is_variadic())
    }

    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                if p.ty.is_variadic() {
                    "...".to_string()
                } else {
                    format!("{} {}", p.ty.render(), p.name)
                }
            })
            .collect();
        let params = if params.is_empty() { "void".to_string() } else { params.join(", ") };
        format!("{} {}({})", self.return_type.render(), self.name, params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryModel {
    pub schema: String,
    pub root: PathBuf,
    /// Ordered by file, then line.
    pub apis: Vec<ApiMetainfo>,
    pub headers: Vec<String>,
    pub usage_files: Vec<String>,
    /// `.c` files that are neither usage files nor excluded.
    pub library_files: Vec<String>,
    pub branch_totals: BTreeMap<String, u32>,
    pub types: TypeTable,
    /// Aggregate types whose definition is visible in a public header, so a
    /// driver can declare an instance.
    #[serde(default)]
    pub complete_types: BTreeSet<String>,
    pub scan: ScanConfig,
}

impl LibraryModel {
    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            attribute_macros: self.scan.attribute_macros.clone(),
            wrapper_macros: self.scan.wrapper_macros.clone(),
        }
    }

    pub fn api(&self, name: &str) -> Option<&ApiMetainfo> {
        self.apis.iter().find(|a| a.name == name)
    }

    pub fn api_names(&self) -> BTreeSet<String> {
        self.apis.iter().map(|a| a.name.clone()).collect()
    }

    pub fn is_library_file(&self, rel: &str) -> bool {
        self.library_files.iter().any(|f| f == rel)
    }
}

/// Static branch count of one API body.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchCount {
    pub edges: u32,
    pub declaration_only: bool,
}

/// Conditional edges in the API body; 0 with `declaration_only` when there is
/// no body.
pub fn count_branches(api: &ApiMetainfo) -> BranchCount {
    match &api.body {
        Some(body) => BranchCount {
            edges: cparse::count_branch_edges(&cparse::lex(body).tokens),
            declaration_only: false,
        },
        None => BranchCount { edges: 0, declaration_only: true },
    }
}

/// Branch total used by the coverage ledger: the conditional edges plus the
/// function-entry edge, so every defined API has a non-zero total.
pub fn branch_total(api: &ApiMetainfo) -> u32 {
    let c = count_branches(api);
    if c.declaration_only {
        0
    } else {
        c.edges + 1
    }
}

fn globset(patterns: &[String]) -> Result<GlobSet, MetainfoError> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        let g = Glob::new(p).map_err(|source| MetainfoError::Glob { pattern: p.clone(), source })?;
        b.add(g);
    }
    b.build().map_err(|source| MetainfoError::Glob { pattern: patterns.join(","), source })
}

fn rel_path(root: &Path, p: &Path) -> String {
    let rel = p.strip_prefix(root).unwrap_or(p);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

struct SourceFile {
    rel: String,
    parsed: ParsedFile,
}

fn defines_entry_point(parsed: &ParsedFile) -> bool {
    parsed
        .functions
        .iter()
        .any(|f| f.body.is_some() && matches!(f.name.as_str(), "main" | "LLVMFuzzerTestOneInput"))
}

pub fn scan_library(root: &Path, config: &ScanConfig) -> Result<LibraryModel, MetainfoError> {
    let meta = std::fs::metadata(root)
        .map_err(|source| MetainfoError::Io { path: root.to_path_buf(), source })?;
    if !meta.is_dir() {
        return Err(MetainfoError::NotADirectory(root.to_path_buf()));
    }
    let public = globset(&config.public_headers)?;
    let usage = globset(&config.usage_globs)?;
    let exclude = globset(&config.exclude)?;
    let opts = ParseOptions {
        attribute_macros: config.attribute_macros.clone(),
        wrapper_macros: config.wrapper_macros.clone(),
    };

    let mut headers = Vec::new();
    let mut sources = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map_or_else(|| root.to_path_buf(), Path::to_path_buf);
            MetainfoError::Io { path, source: e.into() }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = rel_path(root, entry.path());
        if exclude.is_match(&rel) {
            continue;
        }
        let is_header = rel.ends_with(".h");
        if !is_header && !rel.ends_with(".c") {
            continue;
        }
        let bytes = std::fs::read(entry.path())
            .map_err(|source| MetainfoError::Io { path: entry.path().to_path_buf(), source })?;
        let text = String::from_utf8_lossy(&bytes);
        let parsed = cparse::parse_source(&text, &opts);
        let file = SourceFile { rel, parsed };
        if is_header {
            headers.push(file);
        } else {
            sources.push(file);
        }
    }

    let types = TypeTable::from_decls(headers.iter().flat_map(|h| h.parsed.typedefs.iter()));

    let mut usage_files = Vec::new();
    let mut library_files = Vec::new();
    let mut library_sources = Vec::new();
    for s in &sources {
        if defines_entry_point(&s.parsed) || usage.is_match(&s.rel) {
            usage_files.push(s.rel.clone());
        } else {
            library_files.push(s.rel.clone());
            library_sources.push(s);
        }
    }

    // Definitions in implementation files; any file-local definition
    // disqualifies the name.
    let mut definitions: BTreeMap<&str, (&str, &FunctionDecl)> = BTreeMap::new();
    let mut file_local: BTreeSet<&str> = BTreeSet::new();
    for s in &library_sources {
        for f in &s.parsed.functions {
            if f.body.is_none() {
                continue;
            }
            if f.is_static {
                file_local.insert(&f.name);
            } else {
                definitions.entry(&f.name).or_insert((&s.rel, f));
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut apis = Vec::new();
    for h in headers.iter().filter(|h| public.is_match(&h.rel)) {
        for decl in &h.parsed.functions {
            if decl.is_static || file_local.contains(decl.name.as_str()) {
                continue;
            }
            if !seen.insert(decl.name.clone()) {
                continue;
            }
            // inline definitions in the header count as their own definition
            let def = definitions
                .get(decl.name.as_str())
                .copied()
                .or_else(|| decl.body.as_ref().map(|_| (h.rel.as_str(), decl)));
            apis.push(build_api(&h.rel, decl, def, &types));
        }
    }
    if apis.is_empty() {
        return Err(MetainfoError::EmptyModel {
            root: root.to_path_buf(),
            globs: config.public_headers.clone(),
        });
    }
    apis.sort_by(|a, b| (&a.file, a.line, &a.name).cmp(&(&b.file, b.line, &b.name)));
    let branch_totals = apis.iter().map(|a| (a.name.clone(), branch_total(a))).collect();

    Ok(LibraryModel {
        schema: MODEL_SCHEMA.into(),
        root: root.to_path_buf(),
        apis,
        headers: headers.iter().map(|h| h.rel.clone()).collect(),
        usage_files,
        library_files,
        branch_totals,
        types,
        complete_types: headers
            .iter()
            .filter(|h| public.is_match(&h.rel))
            .flat_map(|h| h.parsed.complete_types.iter().cloned())
            .collect(),
        scan: config.clone(),
    })
}

fn build_api(
    header: &str,
    decl: &FunctionDecl,
    def: Option<(&str, &FunctionDecl)>,
    types: &TypeTable,
) -> ApiMetainfo {
    // prefer the header signature; fall back to the definition when the
    // header is obscured by macros
    let sig = if decl.unresolved { def.map(|d| d.1).filter(|d| !d.unresolved) } else { Some(decl) };
    let resolved = sig.and_then(|s| resolve_signature(s, def.map(|d| d.1), types));
    let needs_oracle = resolved.is_none();
    let (params, return_type) = resolved.unwrap_or_else(|| (Vec::new(), NormalizedType::void()));

    let (file, line) = match def {
        Some((f, d)) => (f.to_string(), d.start_line),
        None => (header.to_string(), decl.start_line),
    };
    let body_span = def.and_then(|(f, d)| {
        d.body.as_ref().map(|b| SourceSpan { file: f.to_string(), start_line: d.start_line, end_line: b.end_line })
    });
    ApiMetainfo {
        name: decl.name.clone(),
        params,
        return_type,
        file,
        line: line.max(1),
        doc: decl.doc.clone().or_else(|| def.and_then(|d| d.1.doc.clone())),
        body: def.and_then(|d| d.1.body.as_ref().map(|b| b.text.clone())),
        is_public: true,
        header: header.to_string(),
        body_span,
        needs_oracle,
        raw_signature: decl.raw_signature.clone(),
    }
}

fn resolve_signature(
    sig: &FunctionDecl,
    def: Option<&FunctionDecl>,
    types: &TypeTable,
) -> Option<(Vec<Param>, NormalizedType)> {
    let return_type = normalize_type(&sig.return_type, types).ok()?;
    let mut params = Vec::with_capacity(sig.params.len() + 1);
    for (k, p) in sig.params.iter().enumerate() {
        let ty = normalize_type(&p.ty, types).ok()?;
        let name = p
            .name
            .clone()
            .or_else(|| {
                def.filter(|d| d.params.len() == sig.params.len())
                    .and_then(|d| d.params[k].name.clone())
            })
            .unwrap_or_else(|| format!("arg{k}"));
        params.push(Param { name, ty });
    }
    if sig.variadic {
        params.push(Param { name: "...".into(), ty: NormalizedType::variadic() });
    }
    Some((params, return_type))
}
