//! Pluggable oracles: semantic analysis of APIs, driver generation and
//! repair, and crash analysis. Each has a deterministic stub and a
//! chat-completion HTTP implementation.

pub mod http;
pub mod stub;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::metainfo::{ApiMetainfo, LibraryModel};
use crate::sequence::{SemanticDescription, SemanticRelation};
use crate::synth::{FuzzDriver, PromptBundle};
use crate::triage::{Classification, CrashRecord};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle transport failure: {0}")]
    Transport(String),
    #[error("malformed oracle reply: {0}")]
    Malformed(String),
    #[error("oracle timed out")]
    Timeout,
    #[error("oracle configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationReply {
    pub relations: Vec<SemanticRelation>,
    pub transcript: String,
}

/// A signature recovered for an API the parser could not resolve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSignature {
    pub return_type: String,
    /// (name, type spelling)
    pub params: Vec<(String, String)>,
    pub variadic: bool,
}

pub trait SemanticOracle: Send + Sync {
    fn describe(&self, api: &ApiMetainfo) -> Result<SemanticDescription, OracleError>;
    fn relate(&self, descs: &[SemanticDescription]) -> Result<RelationReply, OracleError>;
    fn resolve_signature(&self, _api: &ApiMetainfo) -> Result<Option<ResolvedSignature>, OracleError> {
        Ok(None)
    }
}

pub struct GenerationRequest<'a> {
    pub driver_id: &'a str,
    pub target_api: &'a str,
    /// Calls the driver should make, in order.
    pub plan: &'a [String],
    pub bundle: Option<&'a PromptBundle>,
    pub model: &'a LibraryModel,
    /// Source of the driver being mutated, if any.
    pub parent_source: Option<&'a str>,
    /// Why the previous attempt was rejected.
    pub feedback: Option<&'a str>,
}

pub enum RepairKind<'a> {
    Compile { diagnostics: &'a str },
    Misuse { report: &'a str, input: &'a [u8] },
}

pub struct RepairRequest<'a> {
    pub driver: &'a FuzzDriver,
    pub kind: RepairKind<'a>,
    pub model: &'a LibraryModel,
}

pub trait GenerationOracle: Send + Sync {
    /// Full C source of a driver.
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<String, OracleError>;
    /// Full corrected C source.
    fn repair(&self, req: &RepairRequest<'_>) -> Result<String, OracleError>;
    /// Extra seed inputs for a compiled driver.
    fn seeds(&self, _driver: &FuzzDriver, _model: &LibraryModel) -> Result<Vec<Vec<u8>>, OracleError> {
        Ok(Vec::new())
    }
}

pub struct AnalysisRequest<'a> {
    pub record: &'a CrashRecord,
    pub driver: &'a FuzzDriver,
    /// Doc comments of the APIs on the crash stack or called by the driver.
    pub docs: BTreeMap<String, String>,
    pub model: &'a LibraryModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub classification: Classification,
    pub rationale: String,
}

pub trait AnalysisOracle: Send + Sync {
    fn classify(&self, req: &AnalysisRequest<'_>) -> Result<Verdict, OracleError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpOracleConfig {
    /// Base URL of an OpenAI-compatible server, e.g. `http://localhost:8000`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum OracleBackend {
    #[default]
    Stub,
    Http(HttpOracleConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct OracleConfig {
    pub semantic: OracleBackend,
    pub generation: OracleBackend,
    pub analysis: OracleBackend,
}

impl OracleConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn is_stub(&self) -> bool {
        [&self.semantic, &self.generation, &self.analysis]
            .iter()
            .all(|b| matches!(b, OracleBackend::Stub))
    }
}

pub struct Oracles {
    pub semantic: Box<dyn SemanticOracle>,
    pub generation: Box<dyn GenerationOracle>,
    pub analysis: Box<dyn AnalysisOracle>,
}

impl Oracles {
    pub fn stub() -> Self {
        Self {
            semantic: Box::new(stub::StubSemanticOracle),
            generation: Box::new(stub::StubGenerationOracle),
            analysis: Box::new(stub::StubAnalysisOracle),
        }
    }

    pub fn from_config(cfg: &OracleConfig) -> Result<Self, OracleError> {
        let chat = |c: &HttpOracleConfig| http::HttpChat::from_config(c);
        Ok(Self {
            semantic: match &cfg.semantic {
                OracleBackend::Stub => Box::new(stub::StubSemanticOracle),
                OracleBackend::Http(c) => Box::new(http::LlmSemanticOracle::new(chat(c)?)),
            },
            generation: match &cfg.generation {
                OracleBackend::Stub => Box::new(stub::StubGenerationOracle),
                OracleBackend::Http(c) => Box::new(http::LlmGenerationOracle::new(chat(c)?)),
            },
            analysis: match &cfg.analysis {
                OracleBackend::Stub => Box::new(stub::StubAnalysisOracle),
                OracleBackend::Http(c) => Box::new(http::LlmAnalysisOracle::new(chat(c)?)),
            },
        })
    }
}
