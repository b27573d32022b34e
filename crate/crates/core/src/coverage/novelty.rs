use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sequence::{Dimension, SequencePool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DimensionWeights {
    pub ue: f64,
    pub mp: f64,
    pub sem: f64,
}

impl Default for DimensionWeights {
    fn default() -> Self {
        Self { ue: 1.0, mp: 1.0, sem: 1.0 }
    }
}

impl DimensionWeights {
    /// Scaled to mean 1; untagged tokens always weigh 1.
    pub fn normalized(&self) -> Self {
        let mean = (self.ue + self.mp + self.sem) / 3.0;
        if mean <= 0.0 || !mean.is_finite() {
            return Self::default();
        }
        Self { ue: self.ue / mean, mp: self.mp / mean, sem: self.sem / mean }
    }

    pub fn of(&self, d: Option<Dimension>) -> f64 {
        match d {
            Some(Dimension::Ue) => self.ue,
            Some(Dimension::Mp) => self.mp,
            Some(Dimension::Sem) => self.sem,
            None => 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if [self.ue, self.mp, self.sem].iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(format!("dimension weights must be positive: {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token {
    pub api: String,
    pub dimension: Option<Dimension>,
}

impl Token {
    pub fn untagged(api: &str) -> Self {
        Self { api: api.into(), dimension: None }
    }
}

/// Classical edit distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Insert/delete cost is the token's dimension weight; substituting
/// different API names costs the larger of the two weights. Tokens with
/// equal names match for free whatever their tags.
pub fn weighted_levenshtein(a: &[Token], b: &[Token], w: &DimensionWeights) -> f64 {
    let wt = |t: &Token| w.of(t.dimension);
    let mut prev = vec![0.0; b.len() + 1];
    for j in 0..b.len() {
        prev[j + 1] = prev[j] + wt(&b[j]);
    }
    let mut cur = vec![0.0; b.len() + 1];
    for x in a {
        cur[0] = prev[0] + wt(x);
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + if x.api == y.api { 0.0 } else { wt(x).max(wt(y)) };
            cur[j + 1] = sub.min(prev[j + 1] + wt(x)).min(cur[j] + wt(y));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedSequence {
    pub driver_id: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceHistory {
    pub executed: Vec<ExecutedSequence>,
}

impl SequenceHistory {
    /// Records a driver's sequence; a driver id is recorded once.
    pub fn add(&mut self, driver_id: &str, tokens: Vec<Token>) -> bool {
        if self.contains_driver(driver_id) {
            return false;
        }
        self.executed.push(ExecutedSequence { driver_id: driver_id.into(), tokens });
        true
    }

    pub fn contains_driver(&self, driver_id: &str) -> bool {
        self.executed.iter().any(|e| e.driver_id == driver_id)
    }

    pub fn len(&self) -> usize {
        self.executed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.executed.is_empty()
    }

    /// Executed drivers whose sequence calls each API.
    pub fn invocation_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.executed {
            let mut apis: Vec<&str> = e.tokens.iter().map(|t| t.api.as_str()).collect();
            apis.sort_unstable();
            apis.dedup();
            for a in apis {
                *out.entry(a.to_string()).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Minimum weighted distance to any executed sequence over |seq|; 1 for an
/// empty history (or an empty sequence).
pub fn novelty(seq: &[Token], history: &SequenceHistory, weights: &DimensionWeights) -> f64 {
    if history.is_empty() || seq.is_empty() {
        return 1.0;
    }
    let w = weights.normalized();
    let best = history
        .executed
        .iter()
        .map(|h| weighted_levenshtein(seq, &h.tokens, &w))
        .fold(f64::INFINITY, f64::min);
    best / seq.len() as f64
}

/// Tags each API with the first dimension (UE, MP, SEM) among the driver's
/// source sequences that contains it.
pub fn tag_sequence(apis: &[String], sequences_used: &BTreeMap<Dimension, String>, pool: &SequencePool) -> Vec<Token> {
    apis.iter()
        .map(|a| Token {
            api: a.clone(),
            dimension: Dimension::ALL.into_iter().find(|d| {
                sequences_used.get(d).and_then(|id| pool.get(id)).is_some_and(|s| s.contains(a))
            }),
        })
        .collect()
}
