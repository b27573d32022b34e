//! API sequence mining along three dimensions: usage examples (UE),
//! type-compatibility propagation paths (MP) and semantic relations (SEM).

mod semantic;

pub use semantic::{
    break_cycles, extract_all, extract_semantics, infer_relations, synthesize_sem_sequences, SemanticDescription,
    SemanticRelation,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cparse;
use crate::metainfo::{ApiMetainfo, LibraryModel, NormalizedType};

pub const SEQUENCES_SCHEMA: &str = "masfuzz.sequences/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "UE")]
    Ue,
    #[serde(rename = "MP")]
    Mp,
    #[serde(rename = "SEM")]
    Sem,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Ue, Dimension::Mp, Dimension::Sem];

    fn tag(self) -> &'static str {
        match self {
            Dimension::Ue => "ue",
            Dimension::Mp => "mp",
            Dimension::Sem => "sem",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Ue => "UE",
            Dimension::Mp => "MP",
            Dimension::Sem => "SEM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Usage { file: String, function: String, start_line: u32, end_line: u32 },
    GraphPath { start: String },
    Oracle { transcript: String },
    /// Singleton stand-in for an API no mined sequence mentions.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSequence {
    /// Assigned when the sequence enters a pool.
    pub id: String,
    pub apis: Vec<String>,
    pub dimension: Dimension,
    pub provenance: Provenance,
    pub used: bool,
}

impl ApiSequence {
    pub fn new(apis: Vec<String>, dimension: Dimension, provenance: Provenance) -> Self {
        Self { id: String::new(), apis, dimension, provenance, used: false }
    }

    pub fn contains(&self, api: &str) -> bool {
        self.apis.iter().any(|a| a == api)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("unknown sequence id `{0}`")]
    UnknownSequence(String),
    #[error("sequence `{0}` was already consumed")]
    AlreadyUsed(String),
}

/// All mined sequences, keyed by id. Identical api lists within a dimension
/// are stored once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePool {
    pub schema: String,
    pub sequences: Vec<ApiSequence>,
}

impl Default for SequencePool {
    fn default() -> Self {
        Self { schema: SEQUENCES_SCHEMA.into(), sequences: Vec::new() }
    }
}

impl SequencePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a sequence unless the same api list is already present in its
    /// dimension; returns the id it is stored under.
    pub fn add(&mut self, mut seq: ApiSequence) -> String {
        if let Some(existing) =
            self.sequences.iter().find(|s| s.dimension == seq.dimension && s.apis == seq.apis)
        {
            return existing.id.clone();
        }
        let n = self.sequences.iter().filter(|s| s.dimension == seq.dimension).count();
        seq.id = format!("{}-{n:04}", seq.dimension.tag());
        let id = seq.id.clone();
        self.sequences.push(seq);
        id
    }

    pub fn extend(&mut self, seqs: impl IntoIterator<Item = ApiSequence>) {
        for s in seqs {
            self.add(s);
        }
    }

    pub fn get(&self, id: &str) -> Option<&ApiSequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn by_dimension(&self, d: Dimension) -> impl Iterator<Item = &ApiSequence> {
        self.sequences.iter().filter(move |s| s.dimension == d)
    }

    pub fn count(&self, d: Dimension) -> usize {
        self.by_dimension(d).count()
    }

    /// Flips `used`; a sequence can be consumed once.
    pub fn mark_used(&mut self, id: &str) -> Result<(), PoolError> {
        let s = self
            .sequences
            .iter_mut()
            .find(|s| s.id == id)
            .ok_or_else(|| PoolError::UnknownSequence(id.to_string()))?;
        if s.used {
            return Err(PoolError::AlreadyUsed(id.to_string()));
        }
        s.used = true;
        Ok(())
    }

    /// Number of distinct pooled sequences mentioning `api`.
    pub fn potential(&self, api: &str) -> usize {
        self.sequences.iter().filter(|s| s.contains(api)).count()
    }

    pub fn has_unused_for(&self, api: &str) -> bool {
        self.sequences.iter().any(|s| !s.used && s.contains(api))
    }

    /// Longest unused sequence mentioning `api` in the given dimensions; ties
    /// go to the lexicographically smaller api list, then id.
    pub fn longest_unused(&self, api: &str, dims: &[Dimension]) -> Option<&ApiSequence> {
        self.sequences
            .iter()
            .filter(|s| !s.used && dims.contains(&s.dimension) && s.contains(api))
            .min_by(|a, b| {
                b.apis
                    .len()
                    .cmp(&a.apis.len())
                    .then_with(|| a.apis.cmp(&b.apis))
                    .then_with(|| a.id.cmp(&b.id))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    /// Maximum sequence length (nodes) for MP and SEM sequences.
    pub max_len: usize,
    /// MP paths kept per start node.
    pub mp_sample_size: usize,
    /// Concurrent semantic-oracle requests.
    pub sem_batch_size: usize,
    pub rng_seed: u64,
    /// Above this many paths from one start node, paths are drawn by random
    /// walks instead of full enumeration.
    pub mp_enumeration_cap: usize,
    /// Upper bound on emitted SEM chains.
    pub sem_max_sequences: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            max_len: 10,
            mp_sample_size: 16,
            sem_batch_size: 8,
            rng_seed: 0,
            mp_enumeration_cap: 200_000,
            sem_max_sequences: 256,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid miner config: {0}")]
pub struct MinerConfigError(pub String);

impl MinerConfig {
    pub fn validate(&self) -> Result<(), MinerConfigError> {
        if self.max_len < 2 {
            return Err(MinerConfigError(format!("max_len must be >= 2, got {}", self.max_len)));
        }
        if self.mp_sample_size == 0 || self.sem_batch_size == 0 {
            return Err(MinerConfigError("sample and batch sizes must be >= 1".into()));
        }
        if self.mp_enumeration_cap == 0 || self.sem_max_sequences == 0 {
            return Err(MinerConfigError("caps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Public-API call sequences from each function body in the usage files.
/// Unreadable files are skipped with a diagnostic.
pub fn mine_usage_sequences(model: &LibraryModel) -> Vec<ApiSequence> {
    let public = model.api_names();
    let opts = model.parse_options();
    let mut out = Vec::new();
    for rel in &model.usage_files {
        let path = model.root.join(rel);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                tracing::warn!(file = %path.display(), error = %e, "usage file skipped");
                continue;
            }
        };
        let parsed = cparse::parse_source(&String::from_utf8_lossy(&bytes), &opts);
        for f in &parsed.functions {
            let Some(body) = &f.body else { continue };
            let apis: Vec<String> = cparse::calls_in_order(&body.tokens)
                .into_iter()
                .map(|c| c.name)
                .filter(|n| public.contains(n))
                .collect();
            if apis.len() >= 2 {
                out.push(ApiSequence::new(
                    apis,
                    Dimension::Ue,
                    Provenance::Usage {
                        file: rel.clone(),
                        function: f.name.clone(),
                        start_line: f.start_line,
                        end_line: body.end_line,
                    },
                ));
            }
        }
    }
    out
}

/// Type equality for propagation: const is ignored, primitive bases never
/// match, pointer depth must agree except that a struct/union value and a
/// one-level pointer to it are interchangeable.
pub fn types_propagate(ret: &NormalizedType, param: &NormalizedType) -> bool {
    if ret.is_primitive || param.is_primitive || ret.base != param.base {
        return false;
    }
    if ret.pointer_depth == param.pointer_depth {
        return true;
    }
    ret.is_aggregate_tag() && ret.pointer_depth.min(param.pointer_depth) == 0
        && ret.pointer_depth.abs_diff(param.pointer_depth) == 1
}

/// `a`'s return value can feed one of `b`'s parameters.
pub fn compatible(a: &ApiMetainfo, b: &ApiMetainfo) -> bool {
    if a.return_type.is_void() || a.return_type.is_primitive {
        return false;
    }
    b.params.iter().any(|p| types_propagate(&a.return_type, &p.ty))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl CompatibilityGraph {
    pub fn from_edges<S: Into<String>>(
        nodes: impl IntoIterator<Item = S>,
        edges: impl IntoIterator<Item = (S, S)>,
    ) -> Self {
        let mut g = Self::default();
        g.nodes.extend(nodes.into_iter().map(Into::into));
        for (a, b) in edges {
            let (a, b) = (a.into(), b.into());
            g.nodes.insert(a.clone());
            g.nodes.insert(b.clone());
            g.edges.insert((a, b));
        }
        g
    }

    pub fn successors<'a>(&'a self, n: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .range((n.to_string(), String::new())..)
            .take_while(move |(a, _)| a == n)
            .map(|(_, b)| b.as_str())
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.edges.contains(&(a.to_string(), b.to_string()))
    }

    /// DFS roots: nodes with no incoming edge from another node, or every
    /// node when there are none.
    pub fn start_nodes(&self) -> Vec<String> {
        let targets: BTreeSet<&str> =
            self.edges.iter().filter(|(a, b)| a != b).map(|(_, b)| b.as_str()).collect();
        let starts: Vec<String> =
            self.nodes.iter().filter(|n| !targets.contains(n.as_str())).cloned().collect();
        if starts.is_empty() {
            self.nodes.iter().cloned().collect()
        } else {
            starts
        }
    }
}

/// Nodes are the public APIs with resolved signatures.
pub fn build_compat_graph(model: &LibraryModel) -> CompatibilityGraph {
    let apis: Vec<&ApiMetainfo> = model.apis.iter().filter(|a| !a.needs_oracle).collect();
    let mut g = CompatibilityGraph::default();
    for a in &apis {
        g.nodes.insert(a.name.clone());
    }
    for a in &apis {
        for b in &apis {
            if compatible(a, b) {
                g.edges.insert((a.name.clone(), b.name.clone()));
            }
        }
    }
    g
}

/// All simple paths of 1..=max_len nodes starting at `start`, in DFS
/// pre-order. Returns `None` once more than `cap` paths are found.
pub fn paths_from(
    g: &CompatibilityGraph,
    start: &str,
    max_len: usize,
    cap: usize,
) -> Option<Vec<Vec<String>>> {
    fn dfs(
        g: &CompatibilityGraph,
        path: &mut Vec<String>,
        max_len: usize,
        cap: usize,
        out: &mut Vec<Vec<String>>,
    ) -> bool {
        out.push(path.clone());
        if out.len() > cap {
            return false;
        }
        if path.len() == max_len {
            return true;
        }
        let last = path.last().cloned().unwrap_or_default();
        let next: Vec<String> = g.successors(&last).map(str::to_string).collect();
        for n in next {
            if path.contains(&n) {
                continue;
            }
            path.push(n);
            let ok = dfs(g, path, max_len, cap, out);
            path.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    if max_len == 0 || !g.nodes.contains(start) {
        return Some(Vec::new());
    }
    let mut out = Vec::new();
    let mut path = vec![start.to_string()];
    dfs(g, &mut path, max_len, cap, &mut out).then_some(out)
}

/// The full pre-sampling MP path set, keyed by start node.
pub fn enumerate_mp_paths(g: &CompatibilityGraph, max_len: usize) -> BTreeMap<String, Vec<Vec<String>>> {
    g.start_nodes()
        .into_iter()
        .map(|s| {
            let paths = paths_from(g, &s, max_len, usize::MAX).unwrap_or_default();
            (s, paths)
        })
        .collect()
}

fn random_walk_paths(
    g: &CompatibilityGraph,
    start: &str,
    cfg: &MinerConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..cfg.mp_sample_size * 4 {
        if out.len() == cfg.mp_sample_size {
            break;
        }
        let mut path = vec![start.to_string()];
        while path.len() < cfg.max_len {
            let last = path.last().cloned().unwrap_or_default();
            let next: Vec<&str> = g.successors(&last).filter(|n| !path.iter().any(|p| p == n)).collect();
            // stopping is one more option alongside each successor
            let pick = rng.random_range(0..=next.len());
            if pick == next.len() {
                break;
            }
            path.push(next[pick].to_string());
        }
        if seen.insert(path.clone()) {
            out.push(path);
        }
    }
    out
}

/// DFS from every start node, then a seeded uniform sample without
/// replacement of `mp_sample_size` paths per start (kept in DFS order).
pub fn mine_mp_sequences(g: &CompatibilityGraph, cfg: &MinerConfig) -> Vec<ApiSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut out = Vec::new();
    for start in g.start_nodes() {
        let paths = match paths_from(g, &start, cfg.max_len, cfg.mp_enumeration_cap) {
            Some(all) if all.len() <= cfg.mp_sample_size => all,
            Some(all) => {
                let mut idx = sample(&mut rng, all.len(), cfg.mp_sample_size).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| all[i].clone()).collect()
            }
            None => {
                tracing::debug!(start = %start, "path enumeration capped; sampling by random walks");
                random_walk_paths(g, &start, cfg, &mut rng)
            }
        };
        for p in paths {
            out.push(ApiSequence::new(
                p,
                Dimension::Mp,
                Provenance::GraphPath { start: start.clone() },
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CompatibilityGraph {
        CompatibilityGraph::from_edges(["A", "B", "C"], [("A", "B"), ("B", "C")])
    }

    #[test]
    fn chain_paths_include_prefixes() {
        let all = enumerate_mp_paths(&chain(), 10);
        let a: Vec<Vec<&str>> =
            all["A"].iter().map(|p| p.iter().map(String::as_str).collect()).collect();
        assert_eq!(a, vec![vec!["A"], vec!["A", "B"], vec!["A", "B", "C"]]);
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn cycle_falls_back_to_all_starts() {
        let g = CompatibilityGraph::from_edges(["A", "B"], [("A", "B"), ("B", "A")]);
        assert_eq!(g.start_nodes(), vec!["A", "B"]);
        let all = enumerate_mp_paths(&g, 10);
        let longest = all.values().flatten().map(Vec::len).max().unwrap();
        assert_eq!(longest, 2);
    }

    #[test]
    fn self_loops_do_not_hide_start_nodes() {
        let g = CompatibilityGraph::from_edges(["A", "B"], [("A", "A"), ("A", "B")]);
        assert_eq!(g.start_nodes(), vec!["A"]);
    }

    #[test]
    fn sampling_respects_size_and_seed() {
        let mut edges = Vec::new();
        let names: Vec<String> = (0..6).map(|i| format!("n{i}")).collect();
        for i in 0..6 {
            for j in 0..6 {
                if i != j && j != 0 {
                    edges.push((names[i].clone(), names[j].clone()));
                }
            }
        }
        let g = CompatibilityGraph::from_edges(names.clone(), edges);
        let cfg = MinerConfig { mp_sample_size: 5, rng_seed: 9, ..MinerConfig::default() };
        let a = mine_mp_sequences(&g, &cfg);
        let b = mine_mp_sequences(&g, &cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn pool_dedups_and_consumes_once() {
        let mut pool = SequencePool::new();
        let s = ApiSequence::new(vec!["a".into(), "b".into()], Dimension::Ue, Provenance::Fallback);
        let id = pool.add(s.clone());
        assert_eq!(pool.add(s), id);
        assert_eq!(pool.sequences.len(), 1);
        pool.mark_used(&id).unwrap();
        assert_eq!(pool.mark_used(&id), Err(PoolError::AlreadyUsed(id)));
    }

    #[test]
    fn aggregate_value_matches_single_pointer() {
        let tt = crate::metainfo::TypeTable::new();
        let n = |s: &str| crate::metainfo::normalize_type(s, &tt).unwrap();
        assert!(types_propagate(&n("struct pt"), &n("const struct pt *")));
        assert!(!types_propagate(&n("struct pt"), &n("struct pt **")));
        assert!(!types_propagate(&n("handle_t"), &n("handle_t *")));
        assert!(!types_propagate(&n("int"), &n("int")));
    }
}
