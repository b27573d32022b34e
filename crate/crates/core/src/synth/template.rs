//! Template driver rendering for the stub generation oracle.
//!
//! Handles returned by one call feed compatible parameters of later calls;
//! byte buffers take the input prefix and scalars are read from the input
//! tail, so seeds shaped for the first buffer-taking API stay intact.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use regex::Regex;

use super::ENTRY_POINT;
use crate::cparse;
use crate::metainfo::{ApiMetainfo, LibraryModel, NormalizedType};
use crate::oracle::stub::{classify_role, ApiRole};
use crate::oracle::{OracleError, RepairKind, RepairRequest};
use crate::sequence::types_propagate;

const PRELUDE: &str = "#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>
";

const HELPERS: &str = "static uint64_t fz_take(const uint8_t *data, size_t *end, size_t n)
{
    uint64_t v = 0;
    while (n-- > 0 && *end > 0)
        v = (v << 8) | data[--*end];
    return v;
}

static char *fz_bytes(const uint8_t *data, size_t n)
{
    char *p = (char *)malloc(n + 1);
    if (p == NULL)
        return NULL;
    if (n > 0)
        memcpy(p, data, n);
    p[n] = 0;
    return p;
}
";

fn is_char_like(base: &str) -> bool {
    matches!(base, "char" | "signed char" | "unsigned char" | "uint8_t" | "int8_t" | "void")
}

fn is_buffer(t: &NormalizedType) -> bool {
    t.is_primitive && t.pointer_depth == 1 && is_char_like(&t.base)
}

fn is_integer(t: &NormalizedType) -> bool {
    if !t.is_primitive || t.pointer_depth != 0 {
        return false;
    }
    let b = t.base.as_str();
    matches!(b, "int" | "unsigned int" | "long" | "unsigned long" | "long long" | "unsigned long long" | "short" | "unsigned short")
        || matches!(b, "size_t" | "ssize_t" | "off_t" | "socklen_t")
        || ((b.starts_with("int") || b.starts_with("uint")) && b.ends_with("_t"))
}

/// Pointer-like values that can be NULL-checked.
fn nullable(t: &NormalizedType) -> bool {
    !(t.is_aggregate_tag() && t.pointer_depth == 0)
}

/// Non-const pointer to a handle: written by the callee.
fn is_handle_out(t: &NormalizedType) -> bool {
    if t.is_primitive || t.is_const() {
        return false;
    }
    if t.is_aggregate_tag() {
        t.pointer_depth >= 2
    } else {
        t.pointer_depth >= 1
    }
}

fn deref(t: &NormalizedType) -> NormalizedType {
    let mut d = t.clone();
    d.pointer_depth = d.pointer_depth.saturating_sub(1);
    d.qualifiers.clear();
    d
}

fn decl(t: &NormalizedType, name: &str) -> String {
    let mut r = t.clone();
    r.qualifiers.clear();
    let s = r.render();
    if s.ends_with('*') {
        format!("{s}{name}")
    } else {
        format!("{s} {name}")
    }
}

fn cast(t: &NormalizedType) -> String {
    format!("({})", t.render())
}

struct Var {
    name: String,
    ty: NormalizedType,
    owned: bool,
    passed_away: bool,
    freed: bool,
}

struct Renderer<'a> {
    model: &'a LibraryModel,
    vars: Vec<Var>,
    buffers: Vec<String>,
    body: String,
}

/// Returned heap memory the documentation hands to the caller.
fn caller_frees(api: &ApiMetainfo) -> bool {
    let r = &api.return_type;
    r.is_primitive
        && r.pointer_depth == 1
        && !r.is_const()
        && is_char_like(&r.base)
        && api.doc.as_deref().is_some_and(|d| d.to_ascii_lowercase().contains("free"))
}

fn handle_param_satisfiable(api: &ApiMetainfo) -> bool {
    api.params.iter().all(|p| p.ty.is_primitive || is_handle_out(&p.ty))
}

/// An API that can produce a value for `want` from input bytes alone.
fn find_producer<'m>(model: &'m LibraryModel, want: &NormalizedType) -> Option<&'m ApiMetainfo> {
    let mut cands: Vec<&ApiMetainfo> = model
        .apis
        .iter()
        .filter(|a| !a.needs_oracle && handle_param_satisfiable(a))
        .filter(|a| {
            types_propagate(&a.return_type, want)
                || a.params.iter().any(|p| is_handle_out(&p.ty) && types_propagate(&deref(&p.ty), want))
        })
        .collect();
    cands.sort_by_key(|a| (classify_role(&a.name) != ApiRole::Constructor, a.params.len(), a.name.clone()));
    cands.first().copied()
}

fn find_destructor<'m>(model: &'m LibraryModel, ty: &NormalizedType) -> Option<&'m ApiMetainfo> {
    let mut cands: Vec<&ApiMetainfo> = model
        .apis
        .iter()
        .filter(|a| !a.needs_oracle && a.params.len() == 1 && classify_role(&a.name) == ApiRole::Destructor)
        .filter(|a| types_propagate(ty, &a.params[0].ty) && (ty.pointer_depth == a.params[0].ty.pointer_depth))
        .collect();
    cands.sort_by_key(|a| a.name.clone());
    cands.first().copied()
}

impl<'a> Renderer<'a> {
    fn live_var(&self, want: &NormalizedType) -> Option<usize> {
        self.vars.iter().rposition(|v| !v.freed && types_propagate(&v.ty, want))
    }

    /// Destructors take the newest owned value; borrowed ones belong to it.
    fn owned_var(&self, want: &NormalizedType) -> Option<usize> {
        self.vars
            .iter()
            .rposition(|v| v.owned && !v.freed && !v.passed_away && types_propagate(&v.ty, want))
            .or_else(|| self.live_var(want))
    }

    fn line(&mut self, indent: usize, s: &str) {
        let _ = writeln!(self.body, "{}{}", "    ".repeat(indent), s);
    }

    fn call(&mut self, k: usize, api: &ApiMetainfo) {
        let role = classify_role(&api.name);
        let mut args: Vec<String> = Vec::new();
        let mut guards: Vec<String> = Vec::new();
        let mut pending_len: Option<String> = None;
        let mut after: Vec<usize> = Vec::new();
        let mut new_vars: Vec<Var> = Vec::new();

        for (j, p) in api.params.iter().enumerate() {
            let t = &p.ty;
            if t.is_variadic() {
                continue;
            }
            if let Some(len) = pending_len.take() {
                if is_integer(t) {
                    args.push(format!("{}{len}", cast(t)));
                    continue;
                }
            }
            if t.base == "fnptr" {
                args.push("NULL".into());
                continue;
            }
            if !t.is_primitive {
                if is_handle_out(t) {
                    let name = format!("v{k}_{j}");
                    let vt = deref(t);
                    self.line(1, &format!("{};", decl(&vt, &name)));
                    self.line(1, &format!("memset(&{name}, 0, sizeof({name}));"));
                    args.push(format!("&{name}"));
                    new_vars.push(Var { name, ty: vt, owned: role == ApiRole::Constructor, passed_away: false, freed: false });
                    continue;
                }
                let found = if j == 0 && role == ApiRole::Destructor { self.owned_var(t) } else { self.live_var(t) };
                match found {
                    Some(idx) => {
                        let v = &self.vars[idx];
                        let expr = if v.ty.pointer_depth == t.pointer_depth {
                            v.name.clone()
                        } else if v.ty.pointer_depth < t.pointer_depth {
                            format!("&{}", v.name)
                        } else {
                            format!("*{}", v.name)
                        };
                        if nullable(&v.ty) && !guards.contains(&v.name) {
                            guards.push(v.name.clone());
                        }
                        args.push(expr);
                        if j == 0 && role == ApiRole::Destructor {
                            after.push(idx);
                        } else if j > 0 {
                            self.vars[idx].passed_away = true;
                        }
                    }
                    None if t.pointer_depth == 1 && self.model.complete_types.contains(&t.base) => {
                        let name = format!("s{k}_{j}");
                        self.line(1, &format!("{};", decl(&deref(t), &name)));
                        self.line(1, &format!("memset(&{name}, 0, sizeof({name}));"));
                        args.push(format!("&{name}"));
                    }
                    None => {
                        let name = format!("h{k}_{j}");
                        self.line(1, &format!("{};", decl(t, &name)));
                        self.line(1, &format!("memset(&{name}, 0, sizeof({name}));"));
                        if nullable(t) {
                            guards.push(name.clone());
                        }
                        args.push(name);
                    }
                }
                continue;
            }
            if is_buffer(t) {
                let b = format!("b{k}_{j}");
                let n = format!("n{k}_{j}");
                self.line(1, &format!("size_t {n} = end;"));
                self.line(1, &format!("char *{b} = fz_bytes(data, {n});"));
                self.buffers.push(b.clone());
                args.push(format!("{}{b}", cast(t)));
                pending_len = Some(n);
                continue;
            }
            if t.pointer_depth >= 1 {
                let name = format!("l{k}_{j}");
                let vt = deref(t);
                self.line(1, &format!("{};", decl(&vt, &name)));
                self.line(1, &format!("memset(&{name}, 0, sizeof({name}));"));
                args.push(format!("&{name}"));
                continue;
            }
            let c = cast(t);
            args.push(format!("{c}fz_take(data, &end, sizeof({}))", t.render()));
        }

        let invocation = format!("{}({})", api.name, args.join(", "));
        let ret = &api.return_type;
        let stmt = if !ret.is_primitive && ret.base != "fnptr" {
            let name = format!("v{k}");
            self.line(1, &format!("{};", decl(ret, &name)));
            if nullable(ret) {
                self.line(1, &format!("{name} = NULL;"));
            }
            new_vars.push(Var {
                name: name.clone(),
                ty: ret.clone(),
                owned: role == ApiRole::Constructor,
                passed_away: false,
                freed: false,
            });
            format!("{name} = {invocation};")
        } else if caller_frees(api) {
            let name = format!("r{k}");
            self.line(1, &format!("{} = NULL;", decl(ret, &name)));
            self.buffers.push(name.clone());
            format!("{name} = {invocation};")
        } else if ret.is_void() {
            format!("{invocation};")
        } else {
            format!("(void){invocation};")
        };
        if guards.is_empty() {
            self.line(1, &stmt);
        } else {
            self.line(1, &format!("if ({})", guards.join(" && ")));
            self.line(2, &stmt);
        }
        for idx in after {
            self.vars[idx].freed = true;
        }
        self.vars.extend(new_vars);
    }

    fn cleanup(&mut self) {
        let mut lines = Vec::new();
        for v in self.vars.iter().rev() {
            if !v.owned || v.freed || v.passed_away || !nullable(&v.ty) {
                continue;
            }
            if let Some(d) = find_destructor(self.model, &v.ty) {
                lines.push(format!("if ({})", v.name));
                lines.push(format!("    {}({});", d.name, v.name));
            }
        }
        for b in &self.buffers {
            lines.push(format!("free({b});"));
        }
        for l in lines {
            self.line(1, &l);
        }
    }
}

/// Calls to render: the plan, with producers spliced in front of calls
/// whose handle parameters nothing earlier can supply.
fn expand_plan<'m>(model: &'m LibraryModel, plan: &[String]) -> Vec<&'m ApiMetainfo> {
    let mut out: Vec<&ApiMetainfo> = Vec::new();
    for name in plan {
        let Some(api) = model.api(name).filter(|a| !a.needs_oracle) else { continue };
        for p in &api.params {
            let t = &p.ty;
            if t.is_primitive || is_handle_out(t) {
                continue;
            }
            let supplied = out.iter().any(|prev| {
                types_propagate(&prev.return_type, t)
                    || prev.params.iter().any(|q| is_handle_out(&q.ty) && types_propagate(&deref(&q.ty), t))
            });
            if !supplied {
                if let Some(prod) = find_producer(model, t) {
                    if prod.name != api.name {
                        out.push(prod);
                    }
                }
            }
        }
        out.push(api);
    }
    out
}

fn header_name(header: &str) -> &str {
    header.rsplit('/').next().unwrap_or(header)
}

pub fn render_driver(model: &LibraryModel, plan: &[String], target: &str) -> String {
    let calls = expand_plan(model, plan);
    let mut headers: Vec<&str> = Vec::new();
    for c in &calls {
        let h = header_name(&c.header);
        if !headers.contains(&h) {
            headers.push(h);
        }
    }
    let mut r = Renderer { model, vars: Vec::new(), buffers: Vec::new(), body: String::new() };
    for (k, api) in calls.iter().enumerate() {
        r.call(k, api);
    }
    r.cleanup();
    for name in plan {
        if model.api(name).is_some_and(|a| a.needs_oracle) {
            let _ = writeln!(r.body, "    /* {name}: signature unavailable */");
        }
    }

    let mut src = String::new();
    let _ = writeln!(src, "// fuzz driver for {target}");
    src.push_str(PRELUDE);
    src.push('\n');
    for h in headers {
        let _ = writeln!(src, "#include \"{h}\"");
    }
    src.push('\n');
    src.push_str(HELPERS);
    src.push('\n');
    let _ = writeln!(src, "int {ENTRY_POINT}(const uint8_t *data, size_t size)\n{{");
    src.push_str("    size_t end = size;\n");
    src.push_str(&r.body);
    src.push_str("    return 0;\n}\n");
    src
}

fn std_header(func: &str) -> Option<&'static str> {
    match func {
        "malloc" | "calloc" | "realloc" | "free" | "abort" | "exit" | "atoi" | "strtol" => Some("stdlib.h"),
        "memcpy" | "memmove" | "memset" | "memcmp" | "strlen" | "strcmp" | "strncmp" | "strcpy"
        | "strncpy" | "strdup" | "strndup" | "strchr" | "strstr" => Some("string.h"),
        "printf" | "fprintf" | "snprintf" | "sprintf" | "puts" | "fopen" | "fclose" | "fwrite"
        | "fread" => Some("stdio.h"),
        "assert" => Some("assert.h"),
        _ => None,
    }
}

fn add_include(source: &str, line: &str) -> String {
    if source.contains(line) {
        return source.to_string();
    }
    let lines: Vec<&str> = source.lines().collect();
    let at = lines.iter().rposition(|l| l.trim_start().starts_with("#include")).map_or(0, |p| p + 1);
    let mut out: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    out.insert(at, line.to_string());
    let mut s = out.join("\n");
    s.push('\n');
    s
}

/// Names of functions the compiler reported as undeclared.
pub fn undeclared_functions(diagnostics: &str) -> Vec<String> {
    let re = Regex::new(
        r"(?:implicit declaration of function|call to undeclared function|use of undeclared identifier) '(\w+)'",
    )
    .expect("static regex");
    let mut seen = BTreeSet::new();
    re.captures_iter(diagnostics)
        .map(|c| c[1].to_string())
        .filter(|n| seen.insert(n.clone()))
        .collect()
}

fn escape_bytes(b: &[u8]) -> String {
    b.iter().map(|x| format!("\\x{x:02x}")).collect()
}

/// Longest input prefix the misuse guard matches on.
pub const GUARD_PREFIX: usize = 64;

/// Stub repairs. Compile failures get the missing includes, or a fresh
/// rendering of the plan; misuse crashes get an early return for inputs
/// starting like the crashing one.
pub fn repair_driver_source(req: &RepairRequest<'_>) -> Result<String, OracleError> {
    let driver = req.driver;
    match req.kind {
        RepairKind::Compile { diagnostics } => {
            let mut src = driver.source.clone();
            for f in undeclared_functions(diagnostics) {
                if let Some(api) = req.model.api(&f) {
                    src = add_include(&src, &format!("#include \"{}\"", header_name(&api.header)));
                } else if let Some(h) = std_header(&f) {
                    src = add_include(&src, &format!("#include <{h}>"));
                }
            }
            if src != driver.source {
                return Ok(src);
            }
            let fresh = render_driver(req.model, &driver.plan, &driver.target_api);
            if fresh != driver.source {
                Ok(fresh)
            } else {
                Err(OracleError::Malformed("no applicable fix for the diagnostics".into()))
            }
        }
        RepairKind::Misuse { input, .. } => {
            let parsed = cparse::parse_source(&driver.source, &cparse::ParseOptions::default());
            let entry = parsed
                .functions
                .iter()
                .find(|f| f.name == ENTRY_POINT && f.body.is_some())
                .ok_or_else(|| OracleError::Malformed("driver has no entry point".into()))?;
            let body = entry.body.as_ref().map(|b| b.text.as_str()).unwrap_or_default();
            let data = entry.params.first().and_then(|p| p.name.clone()).unwrap_or_else(|| "data".into());
            let size = entry.params.get(1).and_then(|p| p.name.clone()).unwrap_or_else(|| "size".into());
            let prefix = &input[..input.len().min(GUARD_PREFIX)];
            let guard = if prefix.is_empty() {
                format!("\n    if ({size} == 0)\n        return 0;")
            } else {
                format!(
                    "\n    if ({size} >= {n} && memcmp({data}, \"{esc}\", {n}) == 0)\n        return 0;",
                    n = prefix.len(),
                    esc = escape_bytes(prefix)
                )
            };
            let at = driver
                .source
                .find(body)
                .ok_or_else(|| OracleError::Malformed("entry body not found".into()))?
                + 1;
            let mut src = driver.source.clone();
            src.insert_str(at, &guard);
            Ok(add_include(&src, "#include <string.h>"))
        }
    }
}
