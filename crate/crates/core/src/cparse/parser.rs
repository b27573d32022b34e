//! Tolerant top-level C declaration parser.
//!
//! Recognizes function prototypes, function definitions and typedefs. Anything
//! else at file scope (variables, aggregates, stray macro invocations) is
//! consumed and ignored. Signatures the parser cannot make sense of are still
//! reported, flagged `unresolved`, so callers can route them elsewhere.

use serde::{Deserialize, Serialize};

use super::lexer::{comment_prose, lex, Comment, TokKind, Token};

const STORAGE: [&str; 8] = [
    "static", "extern", "inline", "__inline", "__inline__", "register", "_Thread_local", "auto",
];
const QUALIFIERS: [&str; 7] =
    ["const", "volatile", "restrict", "__restrict", "__restrict__", "__const", "_Atomic"];
const TYPE_KEYWORDS: [&str; 13] = [
    "void", "char", "short", "int", "long", "float", "double", "signed", "unsigned", "_Bool",
    "bool", "_Complex", "__int128",
];
const ATTRIBUTE_LIKE: [&str; 6] =
    ["__attribute__", "__attribute", "__declspec", "__asm__", "__asm", "asm"];
pub const NON_CALL_KEYWORDS: [&str; 12] = [
    "if", "while", "for", "switch", "return", "sizeof", "_Alignof", "alignof", "__typeof__",
    "typeof", "_Generic", "do",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: Option<String>,
    /// Type spelling with the parameter name removed.
    pub ty: String,
}

#[derive(Debug, Clone)]
pub struct FunctionBody {
    pub tokens: Vec<Token>,
    pub text: String,
    pub end_line: u32,
}

#[derive(Debug, Clone)]
pub struct FunctionDecl {
    pub name: String,
    pub return_type: String,
    pub params: Vec<ParamDecl>,
    pub variadic: bool,
    pub is_static: bool,
    /// First line of the declaration (including the return type).
    pub start_line: u32,
    pub name_line: u32,
    pub body: Option<FunctionBody>,
    pub doc: Option<String>,
    /// The signature could not be parsed reliably (usually macro noise).
    pub unresolved: bool,
    pub raw_signature: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TypedefTarget {
    /// `typedef struct tag ... name` with the given extra pointer depth.
    Tag { kind: String, tag: String, depth: u32 },
    /// `typedef struct { ... } name`: the alias itself is the identity.
    Anonymous { depth: u32 },
    Enum { tag: Option<String>, depth: u32 },
    FnPtr,
    /// Any other spelling, e.g. `unsigned int` or `void *`.
    Plain { spelling: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedefDecl {
    pub name: String,
    pub target: TypedefTarget,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedFile {
    pub functions: Vec<FunctionDecl>,
    pub typedefs: Vec<TypedefDecl>,
    /// Types defined with a body here: `struct tag`/`union tag`, and aliases
    /// of anonymous aggregates.
    pub complete_types: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Identifiers removed wherever they appear in a declaration.
    pub attribute_macros: Vec<String>,
    /// Function-like macros `M(x)` that wrap a type; replaced by `x`.
    pub wrapper_macros: Vec<String>,
}

pub fn parse_source(src: &str, opts: &ParseOptions) -> ParsedFile {
    let lexed = lex(src);
    let toks = &lexed.tokens;
    let mut out = ParsedFile::default();
    for w in toks.windows(3) {
        if (w[0].is("struct") || w[0].is("union")) && w[1].is_ident() && w[2].is("{") {
            out.complete_types.push(format!("{} {}", w[0].text, w[1].text));
        }
    }
    let mut i = 0;

    while i < toks.len() {
        let t = &toks[i];
        if t.is(";") {
            i += 1;
            continue;
        }
        // extern "C" { ... }
        if t.is("extern")
            && toks.get(i + 1).is_some_and(|n| n.kind == TokKind::Str)
            && toks.get(i + 2).is_some_and(|n| n.is("{"))
        {
            i += 3;
            continue;
        }
        if t.is("}") {
            // closing an extern "C" block
            i += 1;
            continue;
        }

        let start = i;
        let mut paren = 0i32;
        let mut brace_body: Option<(usize, usize)> = None;
        let mut end = toks.len();
        let mut j = i;
        while j < toks.len() {
            let tj = &toks[j];
            match tj.text.as_str() {
                "(" | "[" => paren += 1,
                ")" | "]" => paren -= 1,
                ";" if paren <= 0 => {
                    end = j;
                    break;
                }
                "{" if paren <= 0 => {
                    let close = matching(toks, j, "{", "}");
                    let is_fn = j > start
                        && toks[j - 1].is(")")
                        && !toks[start].is("typedef")
                        && !toks[start..j].iter().any(|x| x.is("="));
                    if is_fn {
                        brace_body = Some((j, close));
                        end = j;
                        break;
                    }
                    j = close;
                }
                "}" if paren <= 0 => {
                    // closes an enclosing extern "C" block
                    end = j;
                    break;
                }
                _ => {}
            }
            j += 1;
        }

        let item = &toks[start..end];
        if let Some((open, close)) = brace_body {
            if let Some(mut f) = parse_function(item, opts) {
                let body_tokens = toks[open + 1..close.min(toks.len())].to_vec();
                let close_tok = toks.get(close).unwrap_or(&toks[toks.len() - 1]);
                f.body = Some(FunctionBody {
                    tokens: body_tokens,
                    text: src[toks[open].start..close_tok.end].to_string(),
                    end_line: close_tok.line,
                });
                f.doc = doc_before(&lexed.comments, toks, start);
                out.functions.push(f);
            }
            i = close + 1;
            continue;
        }
        if !item.is_empty() {
            if item[0].is("typedef") {
                out.typedefs.extend(parse_typedef(&item[1..]));
            } else if let Some(mut f) = parse_function(item, opts) {
                f.doc = doc_before(&lexed.comments, toks, start);
                out.functions.push(f);
            }
        }
        i = if end < toks.len() && toks[end].is("}") { end } else { end + 1 };
        if i == start {
            i += 1;
        }
    }
    for t in &out.typedefs {
        if t.target == (TypedefTarget::Anonymous { depth: 0 }) {
            out.complete_types.push(t.name.clone());
        }
    }
    out
}

/// Index of the token closing the group opened at `open`.
pub(crate) fn matching(toks: &[Token], open: usize, o: &str, c: &str) -> usize {
    let mut depth = 0i32;
    for (k, t) in toks.iter().enumerate().skip(open) {
        if t.is(o) {
            depth += 1;
        } else if t.is(c) {
            depth -= 1;
            if depth == 0 {
                return k;
            }
        }
    }
    toks.len()
}

fn doc_before(comments: &[Comment], toks: &[Token], start: usize) -> Option<String> {
    let first_line = toks[start].line;
    let prev_line = start.checked_sub(1).map(|p| toks[p].line);
    let mut want = first_line;
    let mut picked: Vec<&Comment> = Vec::new();
    for c in comments.iter().rev() {
        if c.start_line >= first_line {
            continue;
        }
        // contiguous with the item (or with the comment below it)
        if c.end_line + 1 != want && c.end_line != want {
            break;
        }
        // a comment sharing a line with the previous item belongs to it
        if prev_line.is_some_and(|p| c.start_line <= p) {
            break;
        }
        picked.push(c);
        want = c.start_line;
    }
    if picked.is_empty() {
        return None;
    }
    picked.reverse();
    let prose: Vec<String> = picked.iter().map(|c| comment_prose(&c.text)).collect();
    let joined = prose.join("\n").trim().to_string();
    (!joined.is_empty()).then_some(joined)
}

fn is_keyword_like(s: &str) -> bool {
    STORAGE.contains(&s)
        || QUALIFIERS.contains(&s)
        || TYPE_KEYWORDS.contains(&s)
        || matches!(s, "struct" | "union" | "enum" | "typedef")
}

fn is_all_caps(s: &str) -> bool {
    s.chars().any(|c| c.is_ascii_uppercase())
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Removes attribute syntax and configured macro noise.
fn clean_tokens(item: &[Token], opts: &ParseOptions) -> Vec<Token> {
    let mut out = Vec::with_capacity(item.len());
    let mut k = 0;
    while k < item.len() {
        let t = &item[k];
        if t.is_ident() && ATTRIBUTE_LIKE.contains(&t.text.as_str()) {
            if item.get(k + 1).is_some_and(|n| n.is("(")) {
                k = matching(item, k + 1, "(", ")") + 1;
            } else {
                k += 1;
            }
            continue;
        }
        if t.is_ident() && matches!(t.text.as_str(), "__extension__" | "_Noreturn" | "noreturn") {
            k += 1;
            continue;
        }
        if t.is_ident() && opts.attribute_macros.iter().any(|m| *m == t.text) {
            if item.get(k + 1).is_some_and(|n| n.is("(")) {
                k = matching(item, k + 1, "(", ")") + 1;
            } else {
                k += 1;
            }
            continue;
        }
        if t.is_ident()
            && opts.wrapper_macros.iter().any(|m| *m == t.text)
            && item.get(k + 1).is_some_and(|n| n.is("("))
        {
            let close = matching(item, k + 1, "(", ")");
            out.extend_from_slice(&item[k + 2..close.min(item.len())]);
            k = close + 1;
            continue;
        }
        out.push(t.clone());
        k += 1;
    }
    out
}

fn join(tokens: &[Token]) -> String {
    let mut s = String::new();
    for (n, t) in tokens.iter().enumerate() {
        if n > 0 {
            let prev = &tokens[n - 1];
            let glue = matches!(t.text.as_str(), ")" | "]" | "," | "[")
                || matches!(prev.text.as_str(), "(" | "[");
            if !glue {
                s.push(' ');
            }
        }
        s.push_str(&t.text);
    }
    s
}

fn parse_function(item: &[Token], opts: &ParseOptions) -> Option<FunctionDecl> {
    let toks = clean_tokens(item, opts);
    if toks.is_empty() {
        return None;
    }
    let raw_signature = join(&toks);
    if toks.iter().any(|t| t.is("=")) {
        return None;
    }

    // Locate the declarator: `name (` at depth 0, not `( *`.
    let mut k = 0;
    let mut depth = 0i32;
    let mut wrapped_return: Vec<Token> = Vec::new();
    let mut name_idx = None;
    let mut unresolved = false;
    while k < toks.len() {
        let t = &toks[k];
        if t.is("(") && depth == 0 {
            if k == 0 {
                return None;
            }
            let prev = &toks[k - 1];
            if !prev.is_ident() || is_keyword_like(&prev.text) {
                // `(*fp)(...)`, casts, or a parenthesized declarator: not a plain function
                return None;
            }
            let close = matching(&toks, k, "(", ")");
            let after = toks.get(close + 1);
            let next_call = after.is_some_and(|a| a.is_ident())
                && toks.get(close + 2).is_some_and(|n| n.is("("));
            let next_is_ptr_call = after.is_some_and(|a| a.is("*"));
            if (next_call || next_is_ptr_call) && is_all_caps(&prev.text) {
                // `API_MACRO(ret_type) name(args)`: macro wraps the return type
                wrapped_return.extend_from_slice(&toks[k + 1..close.min(toks.len())]);
                k = close + 1;
                continue;
            }
            name_idx = Some(k - 1);
            break;
        }
        match t.text.as_str() {
            "[" => depth += 1,
            "]" => depth -= 1,
            _ => {}
        }
        k += 1;
    }
    let name_idx = name_idx?;
    let open = name_idx + 1;
    let close = matching(&toks, open, "(", ")");
    if close >= toks.len() {
        return None;
    }
    let name = toks[name_idx].text.clone();
    if NON_CALL_KEYWORDS.contains(&name.as_str()) {
        return None;
    }

    let spec: Vec<Token> = if wrapped_return.is_empty() {
        toks[..name_idx].to_vec()
    } else {
        toks[..name_idx]
            .iter()
            .filter(|t| STORAGE.contains(&t.text.as_str()))
            .cloned()
            .chain(wrapped_return)
            .collect()
    };

    let is_static = spec.iter().any(|t| t.is("static"));
    let return_type = reduce_specifiers(&spec);
    let (params, variadic, params_ok) = parse_params(&toks[open + 1..close]);

    // Anything after the parameter list other than macro noise is suspicious.
    let trailing = &toks[close + 1..];
    let trailing_ok = trailing.iter().all(|t| {
        (t.is_ident() && (is_all_caps(&t.text) || QUALIFIERS.contains(&t.text.as_str())))
            || t.is("(")
            || t.is(")")
            || t.kind == TokKind::Str
            || t.kind == TokKind::Number
    }) && !trailing.iter().any(|t| t.is("{"));

    let return_type = match return_type {
        Some(r) => r,
        None => {
            unresolved = true;
            String::new()
        }
    };
    if !params_ok || !trailing_ok {
        unresolved = true;
    }

    Some(FunctionDecl {
        name,
        return_type,
        params: if unresolved { Vec::new() } else { params },
        variadic: !unresolved && variadic,
        is_static,
        start_line: toks[0].line,
        name_line: toks[name_idx].line,
        body: None,
        doc: None,
        unresolved,
        raw_signature,
    })
}

/// Reduces a declaration-specifier list to a type spelling: storage classes
/// are dropped and, of several plain identifiers, only the last survives
/// (the others are taken to be attribute macros).
fn reduce_specifiers(spec: &[Token]) -> Option<String> {
    let mut parts: Vec<String> = Vec::new();
    let mut plain_idx: Option<usize> = None;
    let mut has_type = false;
    let mut k = 0;
    while k < spec.len() {
        let t = &spec[k];
        let s = t.text.as_str();
        if STORAGE.contains(&s) {
            k += 1;
            continue;
        }
        if matches!(s, "struct" | "union" | "enum") {
            if let Some(tag) = spec.get(k + 1).filter(|n| n.is_ident()) {
                parts.push(format!("{s} {}", tag.text));
                has_type = true;
                k += 2;
                continue;
            }
            return None;
        }
        if QUALIFIERS.contains(&s) || s == "*" {
            parts.push(s.to_string());
            k += 1;
            continue;
        }
        if TYPE_KEYWORDS.contains(&s) {
            parts.push(s.to_string());
            has_type = true;
            k += 1;
            continue;
        }
        if t.is_ident() {
            if let Some(prev) = plain_idx {
                parts.remove(prev);
            }
            parts.push(s.to_string());
            plain_idx = Some(parts.len() - 1);
            has_type = true;
            k += 1;
            continue;
        }
        return None;
    }
    // a keyword type plus a plain identifier means the identifier was a macro
    if let Some(p) = plain_idx {
        let keyword_types = parts.iter().filter(|x| TYPE_KEYWORDS.contains(&x.as_str())).count();
        let tagged = parts.iter().any(|x| x.contains(' '));
        if keyword_types > 0 || tagged {
            parts.remove(p);
        }
    }
    has_type.then(|| parts.join(" "))
}

/// Splits a parameter list. Returns (params, variadic, ok).
fn parse_params(toks: &[Token]) -> (Vec<ParamDecl>, bool, bool) {
    if toks.is_empty() || (toks.len() == 1 && toks[0].is("void")) {
        return (Vec::new(), false, true);
    }
    let mut groups: Vec<&[Token]> = Vec::new();
    let mut depth = 0i32;
    let mut last = 0;
    for (k, t) in toks.iter().enumerate() {
        match t.text.as_str() {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            "," if depth == 0 => {
                groups.push(&toks[last..k]);
                last = k + 1;
            }
            _ => {}
        }
    }
    groups.push(&toks[last..]);

    let mut params = Vec::new();
    let mut variadic = false;
    let mut ok = true;
    for (n, g) in groups.iter().enumerate() {
        if g.len() == 1 && g[0].is("...") {
            variadic = n == groups.len() - 1;
            ok &= variadic;
            continue;
        }
        match parse_param(g) {
            Some(p) => params.push(p),
            None => ok = false,
        }
    }
    (params, variadic, ok)
}

pub(crate) fn parse_param(g: &[Token]) -> Option<ParamDecl> {
    if g.is_empty() {
        return None;
    }
    // function pointer: ret (*name)(args)
    if let Some(p) = g.iter().position(|t| t.is("(")) {
        if g.get(p + 1).is_some_and(|t| t.is("*")) {
            let name = g[p + 2..]
                .iter()
                .take_while(|t| !t.is(")"))
                .find(|t| t.is_ident())
                .map(|t| t.text.clone());
            return Some(ParamDecl { name, ty: "void (*)()".to_string() });
        }
        return None;
    }
    let mut type_toks: Vec<&Token> = Vec::new();
    let mut arrays = 0;
    let mut k = 0;
    while k < g.len() {
        if g[k].is("[") {
            arrays += 1;
            k = matching(g, k, "[", "]") + 1;
            continue;
        }
        type_toks.push(&g[k]);
        k += 1;
    }
    // The name is the trailing identifier, provided something type-like precedes it.
    let mut name = None;
    if let Some(last) = type_toks.last() {
        if last.is_ident() && !is_keyword_like(&last.text) {
            let before = &type_toks[..type_toks.len() - 1];
            let has_type = before.iter().any(|t| {
                t.is_ident()
                    && !QUALIFIERS.contains(&t.text.as_str())
                    && !STORAGE.contains(&t.text.as_str())
            });
            if has_type {
                name = Some(last.text.clone());
                type_toks.pop();
            }
        }
    }
    if type_toks.is_empty() {
        return None;
    }
    let mut ty = join(&type_toks.iter().map(|t| (*t).clone()).collect::<Vec<_>>());
    for _ in 0..arrays {
        ty.push_str(" *");
    }
    Some(ParamDecl { name, ty })
}

fn parse_typedef(toks: &[Token]) -> Vec<TypedefDecl> {
    if toks.is_empty() {
        return Vec::new();
    }
    // split off an aggregate body, if any
    let mut spec_end = toks.len();
    let mut kind: Option<&str> = None;
    let mut tag: Option<String> = None;
    if matches!(toks[0].text.as_str(), "struct" | "union" | "enum")
        || (toks.len() > 1
            && QUALIFIERS.contains(&toks[0].text.as_str())
            && matches!(toks[1].text.as_str(), "struct" | "union" | "enum"))
    {
        let kpos = if matches!(toks[0].text.as_str(), "struct" | "union" | "enum") { 0 } else { 1 };
        kind = Some(toks[kpos].text.as_str());
        let mut p = kpos + 1;
        if toks.get(p).is_some_and(|t| t.is_ident()) {
            tag = Some(toks[p].text.clone());
            p += 1;
        }
        if toks.get(p).is_some_and(|t| t.is("{")) {
            spec_end = matching(toks, p, "{", "}") + 1;
        } else {
            spec_end = p;
        }
    }

    // Declarators after the specifiers (or everything after the type words).
    let decl_toks: &[Token] = if kind.is_some() { &toks[spec_end.min(toks.len())..] } else { toks };

    let mut out = Vec::new();
    if kind.is_none() {
        // function pointer typedef: ret (*name)(args)
        if let Some(p) = decl_toks.iter().position(|t| t.is("(")) {
            if decl_toks.get(p + 1).is_some_and(|t| t.is("*")) {
                if let Some(n) = decl_toks[p + 2..].iter().find(|t| t.is_ident()) {
                    out.push(TypedefDecl { name: n.text.clone(), target: TypedefTarget::FnPtr });
                }
                return out;
            }
            // function type typedef `typedef int fn_t(int)`
            if p > 0 && decl_toks[p - 1].is_ident() {
                out.push(TypedefDecl {
                    name: decl_toks[p - 1].text.clone(),
                    target: TypedefTarget::FnPtr,
                });
            }
            return out;
        }
        // plain: last identifier is the alias, everything before is the target
        let mut arrays = 0;
        let mut plain: Vec<Token> = Vec::new();
        let mut k = 0;
        while k < decl_toks.len() {
            if decl_toks[k].is("[") {
                arrays += 1;
                k = matching(decl_toks, k, "[", "]") + 1;
                continue;
            }
            if decl_toks[k].is(",") {
                // multiple declarators over a plain type are rare; use the first
                break;
            }
            plain.push(decl_toks[k].clone());
            k += 1;
        }
        let Some(pos) = plain.iter().rposition(|t| t.is_ident()) else {
            return out;
        };
        let name = plain[pos].text.clone();
        let mut spelling = join(&plain[..pos]);
        for _ in 0..arrays {
            spelling.push_str(" *");
        }
        if !spelling.is_empty() {
            out.push(TypedefDecl { name, target: TypedefTarget::Plain { spelling } });
        }
        return out;
    }

    let kind = kind.unwrap_or("struct");
    for d in decl_toks.split(|t| t.is(",")) {
        let depth = d.iter().filter(|t| t.is("*")).count() as u32;
        let Some(n) = d.iter().rev().find(|t| t.is_ident() && !QUALIFIERS.contains(&t.text.as_str()))
        else {
            continue;
        };
        let target = match (kind, &tag) {
            ("enum", t) => TypedefTarget::Enum { tag: t.clone(), depth },
            (k, Some(t)) => TypedefTarget::Tag { kind: k.to_string(), tag: t.clone(), depth },
            (_, None) => TypedefTarget::Anonymous { depth },
        };
        out.push(TypedefDecl { name: n.text.clone(), target });
    }
    out
}
