//! Deterministic oracles: templates over metadata instead of a model.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{
    AnalysisOracle, AnalysisRequest, GenerationOracle, GenerationRequest, OracleError,
    RelationReply, RepairRequest, SemanticOracle, Verdict,
};
use crate::metainfo::ApiMetainfo;
use crate::sequence::{SemanticDescription, SemanticRelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ApiRole {
    GlobalInit,
    Constructor,
    Operation,
    Destructor,
    GlobalCleanup,
}

impl ApiRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ApiRole::GlobalInit => "global-init",
            ApiRole::Constructor => "constructor",
            ApiRole::Operation => "operation",
            ApiRole::Destructor => "destructor",
            ApiRole::GlobalCleanup => "global-cleanup",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            ApiRole::GlobalInit => "initializes global library state",
            ApiRole::Constructor => "creates or initializes an object",
            ApiRole::Operation => "operates on existing state",
            ApiRole::Destructor => "releases an object",
            ApiRole::GlobalCleanup => "tears down global library state",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        [
            ApiRole::GlobalInit,
            ApiRole::Constructor,
            ApiRole::Operation,
            ApiRole::Destructor,
            ApiRole::GlobalCleanup,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

/// Lower-case words of an identifier, split on `_` and camel-case humps.
pub fn name_words(name: &str) -> Vec<String> {
    let mut words = Vec::new();
    for part in name.split('_').filter(|p| !p.is_empty()) {
        let mut cur = String::new();
        let chars: Vec<char> = part.chars().collect();
        for (i, &c) in chars.iter().enumerate() {
            let hump = c.is_ascii_uppercase()
                && i > 0
                && (chars[i - 1].is_ascii_lowercase()
                    || chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase()) && chars[i - 1].is_ascii_uppercase());
            if hump && !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            cur.push(c.to_ascii_lowercase());
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

const GLOBAL: [&str; 3] = ["library", "global", "lib"];
const INIT: [&str; 4] = ["init", "initialize", "setup", "startup"];
const CLEANUP: [&str; 5] = ["cleanup", "shutdown", "teardown", "deinit", "terminate"];
const CTOR: [&str; 10] = ["new", "create", "init", "initialize", "open", "alloc", "parse", "load", "from", "make"];
const DTOR: [&str; 8] = ["free", "destroy", "delete", "close", "release", "dispose", "unref", "cleanup"];

pub fn classify_role(name: &str) -> ApiRole {
    let words = name_words(name);
    let has = |set: &[&str]| words.iter().any(|w| set.contains(&w.as_str()));
    let global = has(&GLOBAL);
    if global && has(&INIT) {
        ApiRole::GlobalInit
    } else if global && has(&CLEANUP) {
        ApiRole::GlobalCleanup
    } else if has(&DTOR) || has(&CLEANUP) {
        ApiRole::Destructor
    } else if has(&CTOR) {
        ApiRole::Constructor
    } else {
        ApiRole::Operation
    }
}

fn sentences(doc: &str) -> Vec<String> {
    let flat = doc.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = flat.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        if c == '.' && chars.get(i + 1).is_none_or(|n| *n == ' ') {
            out.push(cur.trim().to_string());
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

const PRECONDITION_WORDS: [&str; 10] =
    ["must", "should", "before", "after", "NULL", "null", "initialized", "valid", "at least", "at most"];

pub struct StubSemanticOracle;

impl SemanticOracle for StubSemanticOracle {
    fn describe(&self, api: &ApiMetainfo) -> Result<SemanticDescription, OracleError> {
        let role = classify_role(&api.name);
        let doc_sentences = api.doc.as_deref().map(sentences).unwrap_or_default();
        let lead = doc_sentences.first().cloned().unwrap_or_else(|| format!("`{}`.", api.signature()));
        Ok(SemanticDescription {
            api: api.name.clone(),
            summary: format!("{lead} ({})", role.phrase()),
            role: role.as_str().to_string(),
            preconditions: doc_sentences
                .into_iter()
                .filter(|s| PRECONDITION_WORDS.iter().any(|w| s.contains(w)))
                .collect(),
            available: true,
        })
    }

    /// Within each name prefix, every API of one role precedes every API of
    /// the next role present (global-init, constructor, operation,
    /// destructor, global-cleanup). An API whose summary or preconditions
    /// mention another API is ordered after it when roles do not decide.
    fn relate(&self, descs: &[SemanticDescription]) -> Result<RelationReply, OracleError> {
        let mut groups: BTreeMap<String, BTreeMap<ApiRole, Vec<&str>>> = BTreeMap::new();
        let role_of = |d: &SemanticDescription| {
            ApiRole::from_str(&d.role).unwrap_or_else(|| classify_role(&d.api))
        };
        for d in descs {
            let prefix = name_words(&d.api).first().cloned().unwrap_or_default();
            groups.entry(prefix).or_default().entry(role_of(d)).or_default().push(&d.api);
        }
        let mut relations = Vec::new();
        for ranks in groups.values() {
            let present: Vec<(&ApiRole, &Vec<&str>)> = ranks.iter().collect();
            for w in present.windows(2) {
                let (r0, from) = w[0];
                let (r1, to) = w[1];
                for a in from {
                    for b in to {
                        relations.push(SemanticRelation {
                            predecessor: a.to_string(),
                            successor: b.to_string(),
                            rationale: format!("{} precedes {}", r0.as_str(), r1.as_str()),
                        });
                    }
                }
            }
        }
        for d in descs {
            let text = format!("{} {}", d.summary, d.preconditions.join(" "));
            for other in descs {
                if other.api == d.api || !mentions(&text, &other.api) {
                    continue;
                }
                let (ra, rb) = (role_of(other), role_of(d));
                let (p, s) = if ra <= rb { (&other.api, &d.api) } else { (&d.api, &other.api) };
                if !relations.iter().any(|r| &r.predecessor == p && &r.successor == s) {
                    relations.push(SemanticRelation {
                        predecessor: p.clone(),
                        successor: s.clone(),
                        rationale: format!("documentation of {} mentions {}", d.api, other.api),
                    });
                }
            }
        }
        let mut h = Sha256::new();
        for d in descs {
            h.update(d.api.as_bytes());
            h.update(b"\n");
        }
        Ok(RelationReply { relations, transcript: format!("stub-{}", &hex::encode(h.finalize())[..12]) })
    }
}

fn mentions(text: &str, name: &str) -> bool {
    text.match_indices(name).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + name.len()..].chars().next();
        let word = |c: Option<char>| c.is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
        !word(before) && !word(after)
    })
}

pub struct StubGenerationOracle;

impl GenerationOracle for StubGenerationOracle {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<String, OracleError> {
        Ok(crate::synth::template::render_driver(req.model, req.plan, req.target_api))
    }

    fn repair(&self, req: &RepairRequest<'_>) -> Result<String, OracleError> {
        crate::synth::template::repair_driver_source(req)
    }
}

pub struct StubAnalysisOracle;

impl AnalysisOracle for StubAnalysisOracle {
    fn classify(&self, req: &AnalysisRequest<'_>) -> Result<Verdict, OracleError> {
        Ok(crate::triage::stub_verdict(req))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_split_snake_and_camel() {
        assert_eq!(name_words("ares_library_init"), vec!["ares", "library", "init"]);
        assert_eq!(name_words("cJSON_CreateObject"), vec!["c", "json", "create", "object"]);
        assert_eq!(name_words("plist_from_xml"), vec!["plist", "from", "xml"]);
    }

    #[test]
    fn roles_by_name() {
        assert_eq!(classify_role("ares_library_init"), ApiRole::GlobalInit);
        assert_eq!(classify_role("ares_library_cleanup"), ApiRole::GlobalCleanup);
        assert_eq!(classify_role("ares_init"), ApiRole::Constructor);
        assert_eq!(classify_role("ares_gethostbyname"), ApiRole::Operation);
        assert_eq!(classify_role("ares_destroy"), ApiRole::Destructor);
        assert_eq!(classify_role("plist_free"), ApiRole::Destructor);
    }

    #[test]
    fn mention_needs_word_boundaries() {
        assert!(mentions("call ares_init first", "ares_init"));
        assert!(!mentions("call ares_init_options first", "ares_init"));
    }

    #[test]
    fn sentence_split() {
        assert_eq!(sentences("Parses x. Must not be NULL.\nDone"), vec!["Parses x.", "Must not be NULL.", "Done"]);
        assert_eq!(sentences("Version 1.2 is here."), vec!["Version 1.2 is here."]);
    }
}
