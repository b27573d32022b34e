//! Oracles backed by an OpenAI-compatible chat-completion endpoint.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    AnalysisOracle, AnalysisRequest, GenerationOracle, GenerationRequest, HttpOracleConfig, OracleError,
    RelationReply, RepairKind, RepairRequest, ResolvedSignature, SemanticOracle, Verdict,
};
use crate::metainfo::{ApiMetainfo, LibraryModel};
use crate::sequence::{SemanticDescription, SemanticRelation};
use crate::synth::FuzzDriver;
use crate::triage::Classification;

pub trait ChatBackend: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, OracleError>;
}

pub struct HttpChat {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

impl HttpChat {
    pub fn from_config(cfg: &HttpOracleConfig) -> Result<Self, OracleError> {
        if cfg.endpoint.is_empty() {
            return Err(OracleError::Config("empty endpoint".into()));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| OracleError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/v1/chat/completions", cfg.endpoint.trim_end_matches('/')),
            model: cfg.model.clone(),
            api_key,
            temperature: cfg.temperature,
        })
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, system: &str, user: &str) -> Result<String, OracleError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => OracleError::Timeout,
            other => OracleError::Transport(other.to_string()),
        })?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => OracleError::Timeout,
            other => OracleError::Transport(other.to_string()),
        })?;
        if !status.is_success() {
            return Err(OracleError::Transport(format!("HTTP {status}: {}", excerpt(&text))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| OracleError::Malformed(format!("{e}: {}", excerpt(&text))))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| OracleError::Malformed(format!("no message content: {}", excerpt(&text))))
    }
}

fn excerpt(s: &str) -> String {
    s.chars().take(200).collect()
}

/// First fenced block (optionally with a language tag), else the whole reply.
pub fn extract_code(reply: &str) -> String {
    if let Some(start) = reply.find("```") {
        let after = &reply[start + 3..];
        let body_start = after.find('\n').map(|n| n + 1).unwrap_or(0);
        let body = &after[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].to_string();
        }
    }
    reply.to_string()
}

/// First JSON object in the reply, fenced or bare.
pub fn extract_json<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, OracleError> {
    let code = extract_code(reply);
    for cand in [code.as_str(), reply] {
        if let (Some(a), Some(b)) = (cand.find('{'), cand.rfind('}')) {
            if a < b {
                if let Ok(v) = serde_json::from_str(&cand[a..=b]) {
                    return Ok(v);
                }
            }
        }
    }
    Err(OracleError::Malformed(format!("no JSON object in reply: {}", excerpt(reply))))
}

fn api_block(api: &ApiMetainfo) -> String {
    match &api.doc {
        Some(d) => format!("/* {} */\n{};", d.trim(), api.signature()),
        None => format!("{};", api.signature()),
    }
}

pub struct LlmSemanticOracle {
    chat: Box<dyn ChatBackend>,
}

impl LlmSemanticOracle {
    pub fn new(chat: impl ChatBackend + 'static) -> Self {
        Self { chat: Box::new(chat) }
    }
}

const SEMANTIC_SYSTEM: &str = "You analyze C library APIs. Answer with a single JSON object and nothing else.";

#[derive(Deserialize)]
struct DescribeReply {
    summary: String,
    #[serde(default)]
    role: String,
    #[serde(default)]
    preconditions: Vec<String>,
}

#[derive(Deserialize)]
struct RelateReply {
    relations: Vec<SemanticRelation>,
}

#[derive(Deserialize)]
struct SignatureReply {
    return_type: String,
    #[serde(default)]
    params: Vec<(String, String)>,
    #[serde(default)]
    variadic: bool,
}

impl SemanticOracle for LlmSemanticOracle {
    fn describe(&self, api: &ApiMetainfo) -> Result<SemanticDescription, OracleError> {
        let user = format!(
            "Describe this API.\n\n{}\n\nReply as {{\"summary\": str, \"role\": one of \"global-init\", \"constructor\", \"operation\", \"destructor\", \"global-cleanup\", \"preconditions\": [str]}}.",
            api_block(api)
        );
        let r: DescribeReply = extract_json(&self.chat.complete(SEMANTIC_SYSTEM, &user)?)?;
        if r.summary.trim().is_empty() {
            return Err(OracleError::Malformed("empty summary".into()));
        }
        Ok(SemanticDescription {
            api: api.name.clone(),
            summary: r.summary,
            role: r.role,
            preconditions: r.preconditions,
            available: true,
        })
    }

    fn relate(&self, descs: &[SemanticDescription]) -> Result<RelationReply, OracleError> {
        let mut user = String::from(
            "Given these API descriptions, list ordering constraints: pairs where the predecessor must be called before the successor.\n\n",
        );
        for d in descs {
            user.push_str(&format!("- {} [{}]: {}", d.api, d.role, d.summary));
            if !d.preconditions.is_empty() {
                user.push_str(&format!(" Preconditions: {}", d.preconditions.join(" ")));
            }
            user.push('\n');
        }
        user.push_str("\nReply as {\"relations\": [{\"predecessor\": str, \"successor\": str, \"rationale\": str}]}.");
        let reply = self.chat.complete(SEMANTIC_SYSTEM, &user)?;
        let r: RelateReply = extract_json(&reply)?;
        Ok(RelationReply { relations: r.relations, transcript: format!("{user}\n---\n{reply}") })
    }

    fn resolve_signature(&self, api: &ApiMetainfo) -> Result<Option<ResolvedSignature>, OracleError> {
        let user = format!(
            "The declaration below uses macros a parser could not expand. Give the plain C signature.\n\n{}\n\nReply as {{\"return_type\": str, \"params\": [[name, type]], \"variadic\": bool}}.",
            api.raw_signature
        );
        let r: SignatureReply = extract_json(&self.chat.complete(SEMANTIC_SYSTEM, &user)?)?;
        Ok(Some(ResolvedSignature { return_type: r.return_type, params: r.params, variadic: r.variadic }))
    }
}

pub struct LlmGenerationOracle {
    chat: Box<dyn ChatBackend>,
}

impl LlmGenerationOracle {
    pub fn new(chat: impl ChatBackend + 'static) -> Self {
        Self { chat: Box::new(chat) }
    }
}

const GENERATION_SYSTEM: &str = "You write libFuzzer fuzz drivers in C. Reply with one complete C file in a ```c fenced block. The file defines LLVMFuzzerTestOneInput, has no main, includes the library headers it uses, checks return values and frees what it allocates.";

fn headers_for(model: &LibraryModel, apis: &[String]) -> Vec<String> {
    let mut hs: Vec<String> = apis.iter().filter_map(|a| model.api(a)).map(|a| a.header.clone()).collect();
    hs.sort();
    hs.dedup();
    hs
}

impl GenerationOracle for LlmGenerationOracle {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<String, OracleError> {
        let mut user = format!("Target API: {}\n\nCall these APIs in this order:\n", req.target_api);
        for (k, a) in req.plan.iter().enumerate() {
            user.push_str(&format!("{}. {a}\n", k + 1));
        }
        user.push_str("\nDeclarations:\n");
        for a in req.plan {
            if let Some(m) = req.model.api(a) {
                user.push_str(&api_block(m));
                user.push('\n');
            }
        }
        user.push_str(&format!("\nHeaders: {}\n", headers_for(req.model, req.plan).join(", ")));
        if let Some(b) = req.bundle {
            user.push_str("\nRelated call sequences:\n");
            for s in b.sequences() {
                user.push_str(&format!("- {:?}: {}\n", s.dimension, s.apis.join(" -> ")));
            }
        }
        if let Some(p) = req.parent_source {
            user.push_str(&format!("\nModify this existing driver:\n```c\n{p}\n```\n"));
        }
        if let Some(f) = req.feedback {
            user.push_str(&format!("\nThe previous attempt was rejected: {f}\n"));
        }
        Ok(extract_code(&self.chat.complete(GENERATION_SYSTEM, &user)?))
    }

    fn repair(&self, req: &RepairRequest<'_>) -> Result<String, OracleError> {
        let user = match &req.kind {
            RepairKind::Compile { diagnostics } => format!(
                "This driver fails to compile.\n```c\n{}\n```\nCompiler output:\n```\n{}\n```\nReturn the full corrected file.",
                req.driver.source, diagnostics
            ),
            RepairKind::Misuse { report, input } => format!(
                "This driver misuses the library API and crashes.\n```c\n{}\n```\nCrash report:\n```\n{}\n```\nCrashing input (hex): {}\nReturn the full corrected file that respects the documented preconditions.",
                req.driver.source,
                report,
                hex::encode(input)
            ),
        };
        Ok(extract_code(&self.chat.complete(GENERATION_SYSTEM, &user)?))
    }

    fn seeds(&self, driver: &FuzzDriver, _model: &LibraryModel) -> Result<Vec<Vec<u8>>, OracleError> {
        #[derive(Deserialize)]
        struct SeedsReply {
            seeds: Vec<String>,
        }
        let user = format!(
            "Propose up to 8 initial inputs for this fuzz driver.\n```c\n{}\n```\nReply as {{\"seeds\": [hex-encoded bytes]}}.",
            driver.source
        );
        let r: SeedsReply = extract_json(&self.chat.complete(SEMANTIC_SYSTEM, &user)?)?;
        r.seeds
            .iter()
            .map(|s| hex::decode(s.trim()).map_err(|e| OracleError::Malformed(format!("seed {s:?}: {e}"))))
            .collect()
    }
}

pub struct LlmAnalysisOracle {
    chat: Box<dyn ChatBackend>,
}

impl LlmAnalysisOracle {
    pub fn new(chat: impl ChatBackend + 'static) -> Self {
        Self { chat: Box::new(chat) }
    }
}

#[derive(Deserialize)]
struct VerdictReply {
    classification: String,
    #[serde(default)]
    rationale: String,
}

impl AnalysisOracle for LlmAnalysisOracle {
    fn classify(&self, req: &AnalysisRequest<'_>) -> Result<Verdict, OracleError> {
        let mut user = format!(
            "Decide whether this crash is API misuse by the fuzz driver or a genuine library bug.\n\nDriver:\n```c\n{}\n```\n\nSanitizer: {} ({})\nStack:\n",
            req.driver.source,
            req.record.sanitizer_kind.as_str(),
            req.record.summary
        );
        for (k, f) in req.record.stack.iter().enumerate() {
            user.push_str(&format!(
                "#{k} {} {}:{}\n",
                f.symbol,
                f.file.as_deref().unwrap_or("?"),
                f.line.map(|l| l.to_string()).unwrap_or_else(|| "?".into())
            ));
        }
        user.push_str("\nDocumentation:\n");
        for (api, doc) in &req.docs {
            user.push_str(&format!("{api}: {}\n", doc.trim()));
        }
        user.push_str("\nReply as {\"classification\": \"api_misuse\" or \"library_bug\", \"rationale\": str}.");
        let r: VerdictReply = extract_json(&self.chat.complete(SEMANTIC_SYSTEM, &user)?)?;
        let classification = match r.classification.as_str() {
            "api_misuse" => Classification::ApiMisuse,
            "library_bug" => Classification::LibraryBug,
            other => return Err(OracleError::Malformed(format!("unknown classification {other:?}"))),
        };
        Ok(Verdict { classification, rationale: r.rationale })
    }
}
