#![allow(dead_code)]

use std::path::{Path, PathBuf};

use masfuzz_core::campaign::CampaignConfig;
use masfuzz_core::metainfo::{scan_library, LibraryModel};
use masfuzz_core::oracle::OracleConfig;

pub const FIXTURES: [&str; 6] = ["minibuf", "minijson", "minimath", "miniplist", "minires", "minixlsx"];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The fixture's own config with stub oracles and the given working directory.
pub fn config(name: &str, workdir: &Path) -> CampaignConfig {
    let mut cfg = CampaignConfig::load(&fixture(name).join("masfuzz.toml")).expect("fixture config");
    cfg.workdir = workdir.into();
    cfg.oracles = OracleConfig::stub();
    cfg
}

pub fn model(name: &str) -> LibraryModel {
    let cfg = CampaignConfig::load(&fixture(name).join("masfuzz.toml")).expect("fixture config");
    scan_library(&cfg.library.root, &cfg.library.scan).expect("scan")
}

pub fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}
