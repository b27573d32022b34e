use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cparse::lexer::{lex, TokKind};
use crate::cparse::parser::{TypedefDecl, TypedefTarget};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("cannot normalize type `{raw}`: {reason}")]
pub struct TypeError {
    pub raw: String,
    pub reason: String,
}

fn type_err(raw: &str, reason: impl Into<String>) -> TypeError {
    TypeError { raw: raw.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qualifier {
    Const,
    Volatile,
}

const FNPTR: &str = "fnptr";
const VARIADIC: &str = "...";

/// A C type reduced to the parts the compatibility predicate looks at.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedType {
    pub base: String,
    pub pointer_depth: u32,
    pub qualifiers: BTreeSet<Qualifier>,
    pub is_primitive: bool,
}

impl NormalizedType {
    pub fn variadic() -> Self {
        Self {
            base: VARIADIC.into(),
            pointer_depth: 0,
            qualifiers: BTreeSet::new(),
            is_primitive: true,
        }
    }

    pub fn void() -> Self {
        Self { base: "void".into(), pointer_depth: 0, qualifiers: BTreeSet::new(), is_primitive: true }
    }

    pub fn is_variadic(&self) -> bool {
        self.base == VARIADIC
    }

    pub fn is_void(&self) -> bool {
        self.base == "void" && self.pointer_depth == 0
    }

    /// `struct`/`union` tag bases.
    pub fn is_aggregate_tag(&self) -> bool {
        self.base.starts_with("struct ") || self.base.starts_with("union ")
    }

    pub fn is_const(&self) -> bool {
        self.qualifiers.contains(&Qualifier::Const)
    }

    /// Canonical spelling; normalizing it again yields the same value.
    pub fn render(&self) -> String {
        if self.base == FNPTR {
            return "void (*)()".into();
        }
        if self.is_variadic() {
            return VARIADIC.into();
        }
        let mut s = String::new();
        for q in &self.qualifiers {
            s.push_str(match q {
                Qualifier::Const => "const ",
                Qualifier::Volatile => "volatile ",
            });
        }
        s.push_str(&self.base);
        if self.pointer_depth > 0 {
            s.push(' ');
            s.push_str(&"*".repeat(self.pointer_depth as usize));
        }
        s
    }
}

impl fmt::Display for NormalizedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Typedefs visible in the parsed headers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTable {
    typedefs: BTreeMap<String, TypedefTarget>,
}

impl TypeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_decls<'a>(decls: impl IntoIterator<Item = &'a TypedefDecl>) -> Self {
        let mut t = Self::new();
        for d in decls {
            t.insert(d.clone());
        }
        t
    }

    /// First definition wins, matching header order.
    pub fn insert(&mut self, decl: TypedefDecl) {
        // `typedef struct foo foo;` must not shadow itself into a loop
        if let TypedefTarget::Plain { spelling } = &decl.target {
            if spelling == &decl.name {
                return;
            }
        }
        self.typedefs.entry(decl.name).or_insert(decl.target);
    }

    pub fn get(&self, name: &str) -> Option<&TypedefTarget> {
        self.typedefs.get(name)
    }

    pub fn len(&self) -> usize {
        self.typedefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.typedefs.is_empty()
    }
}

/// Standard typedef names treated as primitives without needing their headers.
pub fn is_primitive_name(name: &str) -> bool {
    matches!(
        name,
        "size_t"
            | "ssize_t"
            | "ptrdiff_t"
            | "intptr_t"
            | "uintptr_t"
            | "off_t"
            | "off64_t"
            | "wchar_t"
            | "bool"
            | "_Bool"
            | "socklen_t"
            | "time_t"
            | "char16_t"
            | "char32_t"
            | "intmax_t"
            | "uintmax_t"
            | "u_char"
            | "u_int"
            | "u_long"
    ) || ((name.starts_with("int") || name.starts_with("uint")) && name.ends_with("_t"))
        || (name.starts_with("__") && (name.contains("int") || name.contains("size")))
}

#[derive(Default)]
struct Spelling {
    qualifiers: BTreeSet<Qualifier>,
    prim_words: Vec<String>,
    tag: Option<(String, String)>,
    name: Option<String>,
    depth: u32,
    fnptr: bool,
    variadic: bool,
}

fn split_spelling(raw: &str) -> Result<Spelling, TypeError> {
    let lexed = lex(raw);
    let toks = lexed.tokens;
    if toks.is_empty() {
        return Err(type_err(raw, "empty type"));
    }
    let mut s = Spelling::default();
    let mut k = 0;
    while k < toks.len() {
        let t = &toks[k];
        let text = t.text.as_str();
        match text {
            "const" | "__const" => {
                s.qualifiers.insert(Qualifier::Const);
            }
            "volatile" => {
                s.qualifiers.insert(Qualifier::Volatile);
            }
            "restrict" | "__restrict" | "__restrict__" | "_Atomic" | "static" | "extern"
            | "inline" | "register" => {}
            "struct" | "union" | "enum" => {
                let Some(tag) = toks.get(k + 1).filter(|n| n.kind == TokKind::Ident) else {
                    return Err(type_err(raw, format!("`{text}` without a tag")));
                };
                if s.tag.is_some() || s.name.is_some() || !s.prim_words.is_empty() {
                    return Err(type_err(raw, "more than one base type"));
                }
                s.tag = Some((text.to_string(), tag.text.clone()));
                k += 1;
            }
            "void" | "char" | "short" | "int" | "long" | "float" | "double" | "signed"
            | "unsigned" | "_Bool" | "_Complex" | "__int128" => {
                if s.tag.is_some() || s.name.is_some() {
                    return Err(type_err(raw, "more than one base type"));
                }
                s.prim_words.push(text.to_string());
            }
            "..." => {
                if toks.len() != 1 {
                    return Err(type_err(raw, "`...` must stand alone"));
                }
                s.variadic = true;
            }
            "*" => {
                if s.tag.is_none() && s.name.is_none() && s.prim_words.is_empty() {
                    return Err(type_err(raw, "pointer before base type"));
                }
                s.depth += 1;
            }
            "[" => {
                let mut depth = 0;
                while k < toks.len() {
                    if toks[k].is("[") {
                        depth += 1;
                    } else if toks[k].is("]") {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    k += 1;
                }
                if depth != 0 {
                    return Err(type_err(raw, "unbalanced `[`"));
                }
                s.depth += 1;
            }
            "(" if toks.get(k + 1).is_some_and(|n| n.is("*") || n.is("^")) => {
                s.fnptr = true;
                return Ok(s);
            }
            _ if t.kind == TokKind::Ident => {
                if s.tag.is_some() || s.name.is_some() || !s.prim_words.is_empty() {
                    return Err(type_err(raw, format!("unexpected identifier `{text}`")));
                }
                s.name = Some(text.to_string());
            }
            _ => return Err(type_err(raw, format!("unexpected token `{text}`"))),
        }
        k += 1;
    }
    if s.tag.is_none() && s.name.is_none() && s.prim_words.is_empty() && !s.variadic {
        return Err(type_err(raw, "no base type"));
    }
    Ok(s)
}

fn canonical_primitive(words: &[String], raw: &str) -> Result<String, TypeError> {
    let count = |w: &str| words.iter().filter(|x| *x == w).count();
    let unsigned = count("unsigned") > 0;
    let signed = count("signed") > 0;
    if unsigned && signed {
        return Err(type_err(raw, "both signed and unsigned"));
    }
    let longs = count("long");
    let short = count("short") > 0;
    let core = ["void", "char", "int", "float", "double", "_Bool", "__int128"]
        .into_iter()
        .find(|c| count(c) > 0);
    if longs > 2 || (short && longs > 0) {
        return Err(type_err(raw, "conflicting size specifiers"));
    }
    let mut out = String::new();
    match core {
        Some("void") | Some("float") | Some("_Bool") | Some("__int128") => {
            if unsigned || signed || short || longs > 0 {
                if core == Some("__int128") && unsigned {
                    return Ok("unsigned __int128".into());
                }
                return Err(type_err(raw, "invalid specifier combination"));
            }
            out.push_str(core.unwrap_or_default());
        }
        Some("double") => {
            if longs == 1 {
                out.push_str("long double");
            } else if longs == 0 && !unsigned && !signed && !short {
                out.push_str("double");
            } else {
                return Err(type_err(raw, "invalid specifier combination"));
            }
        }
        Some("char") => {
            if short || longs > 0 {
                return Err(type_err(raw, "invalid specifier combination"));
            }
            if unsigned {
                out.push_str("unsigned ");
            } else if signed {
                out.push_str("signed ");
            }
            out.push_str("char");
        }
        _ => {
            if unsigned {
                out.push_str("unsigned ");
            }
            if short {
                out.push_str("short");
            } else if longs == 2 {
                out.push_str("long long");
            } else if longs == 1 {
                out.push_str("long");
            } else {
                out.push_str("int");
            }
        }
    }
    if count("_Complex") > 0 {
        out.push_str(" _Complex");
    }
    Ok(out)
}

/// Normalizes a C type spelling against the visible typedefs.
///
/// Typedef chains resolve to `struct`/`union` tags where visible. Aliases of
/// pointers to primitives (`typedef void *plist_t`) are opaque handles and
/// keep the alias as their base; aliases of plain primitives and enums are
/// primitive.
pub fn normalize_type(raw: &str, table: &TypeTable) -> Result<NormalizedType, TypeError> {
    let mut visiting = HashSet::new();
    normalize_inner(raw, table, &mut visiting)
}

fn normalize_inner(
    raw: &str,
    table: &TypeTable,
    visiting: &mut HashSet<String>,
) -> Result<NormalizedType, TypeError> {
    let s = split_spelling(raw)?;
    if s.variadic {
        return Ok(NormalizedType::variadic());
    }
    if s.fnptr {
        return Ok(fnptr_type());
    }
    if !s.prim_words.is_empty() {
        return Ok(NormalizedType {
            base: canonical_primitive(&s.prim_words, raw)?,
            pointer_depth: s.depth,
            qualifiers: s.qualifiers,
            is_primitive: true,
        });
    }
    if let Some((kind, tag)) = s.tag {
        if kind == "enum" {
            return Ok(NormalizedType {
                base: format!("enum {tag}"),
                pointer_depth: s.depth,
                qualifiers: s.qualifiers,
                is_primitive: true,
            });
        }
        return Ok(NormalizedType {
            base: format!("{kind} {tag}"),
            pointer_depth: s.depth,
            qualifiers: s.qualifiers,
            is_primitive: false,
        });
    }
    let name = s.name.unwrap_or_default();
    let mut resolved = resolve_name(&name, table, visiting)?;
    resolved.pointer_depth += s.depth;
    resolved.qualifiers.extend(s.qualifiers);
    Ok(resolved)
}

fn fnptr_type() -> NormalizedType {
    NormalizedType {
        base: FNPTR.into(),
        pointer_depth: 0,
        qualifiers: BTreeSet::new(),
        is_primitive: true,
    }
}

fn resolve_name(
    name: &str,
    table: &TypeTable,
    visiting: &mut HashSet<String>,
) -> Result<NormalizedType, TypeError> {
    let plain = |base: &str, primitive: bool| NormalizedType {
        base: base.to_string(),
        pointer_depth: 0,
        qualifiers: BTreeSet::new(),
        is_primitive: primitive,
    };
    if is_primitive_name(name) {
        return Ok(plain(name, true));
    }
    if name == FNPTR {
        return Ok(fnptr_type());
    }
    let Some(target) = table.get(name) else {
        // unresolved bases compare by name
        return Ok(plain(name, false));
    };
    if !visiting.insert(name.to_string()) {
        return Ok(plain(name, false));
    }
    let out = match target {
        TypedefTarget::Tag { kind, tag, depth } => NormalizedType {
            base: format!("{kind} {tag}"),
            pointer_depth: *depth,
            qualifiers: BTreeSet::new(),
            is_primitive: false,
        },
        TypedefTarget::Anonymous { .. } => plain(name, false),
        TypedefTarget::Enum { tag, depth } => NormalizedType {
            base: tag.as_ref().map_or_else(|| name.to_string(), |t| format!("enum {t}")),
            pointer_depth: *depth,
            qualifiers: BTreeSet::new(),
            is_primitive: true,
        },
        TypedefTarget::FnPtr => fnptr_type(),
        TypedefTarget::Plain { spelling } => {
            let inner = normalize_inner(spelling, table, visiting)?;
            if inner.is_primitive && inner.pointer_depth > 0 && inner.base != FNPTR {
                // opaque handle such as `typedef void *plist_t`
                plain(name, false)
            } else {
                inner
            }
        }
    };
    visiting.remove(name);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cparse::parser::{parse_source, ParseOptions};

    fn table(src: &str) -> TypeTable {
        TypeTable::from_decls(&parse_source(src, &ParseOptions::default()).typedefs)
    }

    fn norm(raw: &str) -> NormalizedType {
        normalize_type(raw, &TypeTable::new()).unwrap()
    }

    #[test]
    fn primitives() {
        let int = norm("int");
        assert_eq!((int.base.as_str(), int.pointer_depth, int.is_primitive), ("int", 0, true));
        let cpp = norm("char **");
        assert_eq!((cpp.base.as_str(), cpp.pointer_depth, cpp.is_primitive), ("char", 2, true));
        assert_eq!(norm("unsigned long int").base, "unsigned long");
        assert_eq!(norm("long unsigned").base, "unsigned long");
        assert_eq!(norm("signed").base, "int");
        assert_eq!(norm("size_t").is_primitive, true);
        assert_eq!(norm("uint32_t").is_primitive, true);
    }

    #[test]
    fn qualifiers_collected_anywhere() {
        let t = norm("char const * const");
        assert_eq!(t.base, "char");
        assert_eq!(t.pointer_depth, 1);
        assert!(t.is_const());
    }

    #[test]
    fn const_opaque_handle() {
        let tt = table("typedef void *plist_t;");
        let t = normalize_type("const plist_t", &tt).unwrap();
        assert_eq!(t.base, "plist_t");
        assert_eq!(t.pointer_depth, 0);
        assert!(!t.is_primitive);
        assert_eq!(t.qualifiers, BTreeSet::from([Qualifier::Const]));
    }

    #[test]
    fn typedef_chain_resolves_to_struct_tag() {
        let tt = table(
            "typedef struct lxw_workbook { int a; } lxw_workbook;\n\
             typedef lxw_workbook wb_alias;\n\
             typedef struct node *node_ptr;",
        );
        let a = normalize_type("lxw_workbook *", &tt).unwrap();
        let b = normalize_type("struct lxw_workbook *", &tt).unwrap();
        let c = normalize_type("wb_alias *", &tt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let p = normalize_type("node_ptr", &tt).unwrap();
        assert_eq!((p.base.as_str(), p.pointer_depth), ("struct node", 1));
    }

    #[test]
    fn enums_and_primitive_aliases_are_primitive() {
        let tt = table("typedef enum { A } kind_t;\ntypedef unsigned int u32;\ntypedef int (*cb)(int);");
        assert!(normalize_type("kind_t", &tt).unwrap().is_primitive);
        let u = normalize_type("u32", &tt).unwrap();
        assert_eq!((u.base.as_str(), u.is_primitive), ("unsigned int", true));
        assert!(normalize_type("cb", &tt).unwrap().is_primitive);
        assert!(normalize_type("enum color", &tt).unwrap().is_primitive);
    }

    #[test]
    fn arrays_and_function_pointers() {
        assert_eq!(norm("int [10]").pointer_depth, 1);
        assert_eq!(norm("void (*)(int)").render(), "void (*)()");
        assert!(norm("...").is_variadic());
    }

    #[test]
    fn unparsable_spellings_carry_raw_text() {
        for bad in ["", "* int", "int (", "foo bar", "struct", "signed unsigned int", "int +"] {
            let err = normalize_type(bad, &TypeTable::new()).unwrap_err();
            assert_eq!(err.raw, bad);
        }
    }

    #[test]
    fn self_referential_typedefs_terminate() {
        let mut tt = TypeTable::new();
        tt.insert(TypedefDecl { name: "a".into(), target: TypedefTarget::Plain { spelling: "b".into() } });
        tt.insert(TypedefDecl { name: "b".into(), target: TypedefTarget::Plain { spelling: "a".into() } });
        assert!(normalize_type("a", &tt).is_ok());
    }
}
