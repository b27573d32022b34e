//! Fuzz driver generation for C libraries from API sequences mined along
//! three dimensions (usage examples, type-compatibility propagation and
//! semantic relations), with a coverage-guided time scheduler, sequence-level
//! mutation of stagnant drivers, and crash triage.

pub mod cparse;
pub mod metainfo;
pub mod oracle;
pub mod sequence;
pub mod synth;
pub mod triage;
pub mod coverage;
pub mod executor;
pub mod mutation;
pub mod scheduler;
pub mod campaign;
