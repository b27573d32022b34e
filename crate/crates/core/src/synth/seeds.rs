use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FuzzDriver;
use crate::metainfo::LibraryModel;
use crate::oracle::GenerationOracle;

pub const DEFAULT_SEED: [u8; 4] = [0, 0, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    /// e.g. `doc:plist_from_xml`, `oracle`, `default`.
    pub origin: String,
}

impl Seed {
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.data))
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCorpus {
    pub target_driver: String,
    pub seeds: Vec<Seed>,
}

impl SeedCorpus {
    /// One file per seed, named by content hash.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for s in &self.seeds {
            std::fs::write(dir.join(&s.digest()[..16]), &s.data)?;
        }
        Ok(())
    }
}

fn unescape_c(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'\\' && i + 1 < b.len() {
            i += 1;
            match b[i] {
                b'n' => out.push(b'\n'),
                b't' => out.push(b'\t'),
                b'r' => out.push(b'\r'),
                b'0' => out.push(0),
                b'x' => {
                    let hex: String = s[i + 1..].chars().take_while(char::is_ascii_hexdigit).take(2).collect();
                    match u8::from_str_radix(&hex, 16) {
                        Ok(v) => {
                            out.push(v);
                            i += hex.len();
                        }
                        Err(_) => out.push(b'x'),
                    }
                }
                other => out.push(other),
            }
            i += 1;
            continue;
        }
        out.push(b[i]);
        i += 1;
    }
    out
}

const NOT_SAMPLES: [&str; 6] = ["NULL", "true", "false", "void", "const", "char"];

/// Literal examples in a doc comment: fenced or `@code` blocks, backtick
/// spans and double-quoted strings.
pub fn doc_samples(doc: &str, api_names: &BTreeSet<String>) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let lines: Vec<&str> = doc.lines().collect();
    let mut k = 0;
    while k < lines.len() {
        let t = lines[k].trim();
        let close = if t.starts_with("```") {
            Some("```")
        } else if t.starts_with("@code") || t.starts_with("\\code") {
            Some("endcode")
        } else {
            None
        };
        if let Some(close) = close {
            let mut block = Vec::new();
            k += 1;
            while k < lines.len() && !lines[k].trim().contains(close) {
                block.push(lines[k]);
                k += 1;
            }
            if !block.is_empty() {
                out.push(block.join("\n").into_bytes());
            }
        }
        k += 1;
    }
    for delim in ['`', '"'] {
        let parts: Vec<&str> = doc.split(delim).collect();
        for (n, p) in parts.iter().enumerate() {
            if n % 2 == 1 && n + 1 < parts.len() && !p.is_empty() && !p.contains('\n') {
                let trimmed = p.trim_end_matches("()");
                if api_names.contains(trimmed) || NOT_SAMPLES.contains(&trimmed) {
                    continue;
                }
                out.push(if delim == '"' { unescape_c(p) } else { p.as_bytes().to_vec() });
            }
        }
    }
    out
}

/// Samples from the docs of every API the driver calls, oracle proposals,
/// and the 4-byte default seed; deduplicated by content hash.
pub fn build_seed_corpus(
    driver: &FuzzDriver,
    model: &LibraryModel,
    oracle: &dyn GenerationOracle,
) -> SeedCorpus {
    let names = model.api_names();
    let mut apis: Vec<String> = driver.effective_sequence(&names);
    apis.extend(driver.plan.iter().cloned());
    let mut seen_api = BTreeSet::new();
    let mut seeds = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |data: Vec<u8>, origin: String, seeds: &mut Vec<Seed>| {
        if data.is_empty() {
            return;
        }
        let s = Seed { data, origin };
        if seen.insert(s.digest()) {
            seeds.push(s);
        }
    };
    for a in apis {
        if !seen_api.insert(a.clone()) {
            continue;
        }
        let Some(doc) = model.api(&a).and_then(|m| m.doc.as_deref()) else { continue };
        for sample in doc_samples(doc, &names) {
            push(sample, format!("doc:{a}"), &mut seeds);
        }
    }
    match oracle.seeds(driver, model) {
        Ok(extra) => {
            for e in extra {
                push(e, "oracle".into(), &mut seeds);
            }
        }
        Err(e) => tracing::warn!(driver = %driver.id, error = %e, "seed oracle failed"),
    }
    push(DEFAULT_SEED.to_vec(), "default".into(), &mut seeds);
    SeedCorpus { target_driver: driver.id.clone(), seeds }
}
