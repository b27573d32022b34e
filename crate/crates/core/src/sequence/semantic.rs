use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ApiSequence, Dimension, MinerConfig, Provenance};
use crate::metainfo::{ApiMetainfo, LibraryModel};
use crate::oracle::{OracleError, SemanticOracle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticDescription {
    pub api: String,
    pub summary: String,
    pub role: String,
    pub preconditions: Vec<String>,
    /// False when the oracle failed; the API still takes part in UE/MP mining.
    pub available: bool,
}

impl SemanticDescription {
    pub fn unavailable(api: &str) -> Self {
        Self {
            api: api.to_string(),
            summary: String::new(),
            role: String::new(),
            preconditions: Vec::new(),
            available: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticRelation {
    pub predecessor: String,
    pub successor: String,
    pub rationale: String,
}

/// One retry on any oracle failure, then an unavailable description.
pub fn extract_semantics(api: &ApiMetainfo, oracle: &dyn SemanticOracle) -> SemanticDescription {
    let mut last: Option<OracleError> = None;
    for _ in 0..2 {
        match oracle.describe(api) {
            Ok(mut d) if d.api == api.name => {
                d.available = true;
                return d;
            }
            Ok(d) => last = Some(OracleError::Malformed(format!("description names `{}`", d.api))),
            Err(e) => last = Some(e),
        }
    }
    if let Some(e) = last {
        tracing::warn!(api = %api.name, error = %e, "semantic description unavailable");
    }
    SemanticDescription::unavailable(&api.name)
}

/// Describes every API, `batch` requests in flight at a time. Output is keyed
/// by API name so completion order does not matter.
pub fn extract_all(
    model: &LibraryModel,
    oracle: &dyn SemanticOracle,
    batch: usize,
) -> BTreeMap<String, SemanticDescription> {
    let mut out = BTreeMap::new();
    for chunk in model.apis.chunks(batch.max(1)) {
        let descs: Vec<SemanticDescription> = std::thread::scope(|s| {
            let handles: Vec<_> =
                chunk.iter().map(|a| s.spawn(move || extract_semantics(a, oracle))).collect();
            handles
                .into_iter()
                .zip(chunk)
                .map(|(h, a)| h.join().unwrap_or_else(|_| SemanticDescription::unavailable(&a.name)))
                .collect()
        });
        for d in descs {
            out.insert(d.api.clone(), d);
        }
    }
    out
}

/// Asks the oracle for predecessor/successor pairs and keeps the ones naming
/// known, distinct APIs. Returns the relations and the transcript id.
pub fn infer_relations(
    descs: &[SemanticDescription],
    oracle: &dyn SemanticOracle,
) -> (BTreeSet<SemanticRelation>, Option<String>) {
    let known: BTreeSet<&str> = descs.iter().map(|d| d.api.as_str()).collect();
    if known.len() < 2 {
        return (BTreeSet::new(), None);
    }
    let mut reply = None;
    for _ in 0..2 {
        match oracle.relate(descs) {
            Ok(r) => {
                reply = Some(r);
                break;
            }
            Err(e) => tracing::warn!(error = %e, "relation inference failed"),
        }
    }
    let Some(reply) = reply else {
        return (BTreeSet::new(), None);
    };
    let mut out = BTreeSet::new();
    for r in reply.relations {
        if !known.contains(r.predecessor.as_str()) || !known.contains(r.successor.as_str()) {
            tracing::warn!(pred = %r.predecessor, succ = %r.successor, "relation names an unknown API; dropped");
            continue;
        }
        if r.predecessor == r.successor {
            tracing::warn!(api = %r.predecessor, "self relation dropped");
            continue;
        }
        // one rationale per pair
        if out.iter().any(|o: &SemanticRelation| {
            o.predecessor == r.predecessor && o.successor == r.successor
        }) {
            continue;
        }
        out.insert(r);
    }
    (out, Some(reply.transcript))
}

fn find_cycle(edges: &BTreeSet<(String, String)>) -> Option<Vec<(String, String)>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<&str, u8> = BTreeMap::new();
    let nodes: Vec<&str> = adj.keys().copied().collect();
    for root in nodes {
        if state.get(root).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(root, 0)];
        state.insert(root, 1);
        while let Some((n, i)) = stack.last().copied() {
            let succ = adj.get(n).map_or(&[][..], Vec::as_slice);
            if i < succ.len() {
                stack.last_mut().unwrap().1 += 1;
                let m = succ[i];
                match state.get(m).copied().unwrap_or(0) {
                    0 => {
                        state.insert(m, 1);
                        stack.push((m, 0));
                    }
                    1 => {
                        let pos = stack.iter().position(|(x, _)| *x == m).unwrap_or(0);
                        let mut cyc: Vec<(String, String)> = stack[pos..]
                            .windows(2)
                            .map(|w| (w[0].0.to_string(), w[1].0.to_string()))
                            .collect();
                        cyc.push((n.to_string(), m.to_string()));
                        return Some(cyc);
                    }
                    _ => {}
                }
            } else {
                state.insert(n, 2);
                stack.pop();
            }
        }
    }
    None
}

/// Precedence edges with cycles removed: while a cycle exists, its
/// lexicographically largest (predecessor, successor) edge is dropped.
pub fn break_cycles(relations: &BTreeSet<SemanticRelation>) -> BTreeSet<(String, String)> {
    let mut edges: BTreeSet<(String, String)> =
        relations.iter().map(|r| (r.predecessor.clone(), r.successor.clone())).collect();
    while let Some(cycle) = find_cycle(&edges) {
        if let Some(max) = cycle.into_iter().max() {
            tracing::debug!(pred = %max.0, succ = %max.1, "precedence cycle broken");
            edges.remove(&max);
        }
    }
    edges
}

/// Maximal chains of the precedence DAG, from sources to sinks, truncated to
/// `max_len` APIs.
pub fn synthesize_sem_sequences(
    relations: &BTreeSet<SemanticRelation>,
    cfg: &MinerConfig,
    transcript: &str,
) -> Vec<ApiSequence> {
    let edges = break_cycles(relations);
    if edges.is_empty() {
        return Vec::new();
    }
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
    for (a, b) in &edges {
        adj.entry(a).or_default().push(b);
        indeg.entry(a).or_insert(0);
        *indeg.entry(b).or_insert(0) += 1;
    }
    let sources: Vec<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();

    let mut chains: Vec<Vec<String>> = Vec::new();
    let mut seen = BTreeSet::new();
    for s in sources {
        let mut stack: Vec<Vec<&str>> = vec![vec![s]];
        while let Some(path) = stack.pop() {
            if chains.len() >= cfg.sem_max_sequences {
                break;
            }
            let last = *path.last().unwrap_or(&s);
            let next = adj.get(last).map_or(&[][..], Vec::as_slice);
            if next.is_empty() || path.len() >= cfg.max_len {
                let chain: Vec<String> = path.iter().map(|x| x.to_string()).collect();
                if seen.insert(chain.clone()) {
                    chains.push(chain);
                }
                continue;
            }
            // reversed so the smallest successor is expanded first
            for n in next.iter().rev() {
                let mut p = path.clone();
                p.push(n);
                stack.push(p);
            }
        }
    }
    chains
        .into_iter()
        .map(|apis| {
            ApiSequence::new(apis, Dimension::Sem, Provenance::Oracle { transcript: transcript.to_string() })
        })
        .collect()
}
