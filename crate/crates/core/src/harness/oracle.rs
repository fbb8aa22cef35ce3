//! Brute-force reference computations on nested `Vec`s.
//!
//! Nothing here calls the production numerics; the verification harness
//! compares the two.

use crate::numerics::{Linear, Matrix};
use crate::sgeb::{EvictionRule, ScoreMode, SgebConfig};

pub type Dense = Vec<Vec<f64>>;

/// Scores closer than this count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn linear(x: &Dense, l: &Linear) -> Dense {
    let w = &l.weight;
    x.iter()
        .map(|row| {
            (0..w.cols())
                .map(|j| {
                    let mut acc = l.bias.as_ref().map_or(0.0, |b| b[j]);
                    for (i, xi) in row.iter().enumerate() {
                        acc += xi * w.get(i, j);
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// `softmax(Q Kᵀ / √d_h) V` per head, one query row at a time.
pub fn attention(q: &Dense, k: &Dense, v: &Dense, heads: usize) -> Dense {
    let heads = heads.max(1);
    let dq = q.first().map_or(0, Vec::len) / heads;
    let dv = v.first().map_or(0, Vec::len) / heads;
    let mut out = vec![vec![0.0; dv * heads]; q.len()];
    for h in 0..heads {
        let qs = h * dq..(h + 1) * dq;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| qi[qs.clone()].iter().zip(&kj[qs.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dq as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (e, vj) in exps.iter().zip(v) {
                for c in 0..dv {
                    out[i][h * dv + c] += e / z * vj[h * dv + c];
                }
            }
        }
    }
    out
}

/// Block averages with boundaries at `⌊i·H/out⌋`.
pub fn block_pool(tokens: &Dense, grid_h: usize, grid_w: usize, out_h: usize, out_w: usize) -> Dense {
    let d = tokens.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(out_h * out_w);
    for a in 0..out_h {
        for b in 0..out_w {
            let mut acc = vec![0.0; d];
            let mut count = 0usize;
            for y in (a * grid_h / out_h)..((a + 1) * grid_h / out_h) {
                for x in (b * grid_w / out_w)..((b + 1) * grid_w / out_w) {
                    for (s, t) in acc.iter_mut().zip(&tokens[y * grid_w + x]) {
                        *s += t;
                    }
                    count += 1;
                }
            }
            out.push(acc.into_iter().map(|s| s / count as f64).collect());
        }
    }
    out
}

pub fn token_mean(tokens: &Dense) -> Vec<f64> {
    let d = tokens.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    for t in tokens {
        for (s, x) in acc.iter_mut().zip(t) {
            *s += x;
        }
    }
    acc.into_iter().map(|s| s / tokens.len().max(1) as f64).collect()
}

/// `(cos + 1) / 2`, with a zero vector treated as orthogonal to everything.
pub fn normalized_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    };
    (cos + 1.0) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub frame_index: u64,
    pub mean: Vec<f64>,
    pub relevance: f64,
    pub novelty: f64,
}

impl OracleEntry {
    pub fn score(&self) -> f64 {
        self.relevance * self.novelty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleDecision {
    Appended,
    Evicted(u64),
    Rejected,
}

/// Outcome of one reference write.
#[derive(Debug, Clone)]
pub struct OracleWrite {
    pub decision: OracleDecision,
    /// Frame indices sharing the minimum score when more than one did.
    pub tied: Vec<u64>,
    pub survivors: Vec<OracleEntry>,
}

/// A bank of token means updated by exhaustive recomputation.
#[derive(Debug, Clone)]
pub struct OracleBank {
    pub config: SgebConfig,
    pub entries: Vec<OracleEntry>,
}

impl OracleBank {
    pub fn new(config: SgebConfig) -> Self {
        Self {
            config,
            entries: Vec::new(),
        }
    }

    fn scores_novelty(&self) -> bool {
        matches!(self.config.scoring, ScoreMode::Full | ScoreMode::NoveltyOnly)
    }

    fn scores_relevance(&self) -> bool {
        matches!(self.config.scoring, ScoreMode::Full | ScoreMode::RelevanceOnly)
    }

    /// Candidate scored against the current bank.
    pub fn candidate(&self, frame_index: u64, pooled: &Dense, semantic: &[f64], question: &[f64]) -> OracleEntry {
        let mean = token_mean(pooled);
        let c = &self.config;
        let relevance = if self.scores_relevance() {
            c.lambda_r * normalized_similarity(semantic, question)
        } else {
            c.lambda_r
        };
        let novelty = if !self.scores_novelty() || self.entries.is_empty() {
            c.lambda_nu
        } else {
            let max_sim = self
                .entries
                .iter()
                .map(|e| normalized_similarity(&mean, &e.mean))
                .fold(f64::NEG_INFINITY, f64::max);
            c.lambda_nu * (1.0 - max_sim)
        };
        OracleEntry {
            frame_index,
            mean,
            relevance,
            novelty,
        }
    }

    /// Every member's novelty against all the others, by the full O(n²) scan.
    pub fn refresh(&self, set: &[OracleEntry]) -> Vec<OracleEntry> {
        let lambda = self.config.lambda_nu;
        (0..set.len())
            .map(|i| {
                let novelty = if !self.scores_novelty() || set.len() == 1 {
                    lambda
                } else {
                    let max_sim = (0..set.len())
                        .filter(|&j| j != i)
                        .map(|j| normalized_similarity(&set[i].mean, &set[j].mean))
                        .fold(f64::NEG_INFINITY, f64::max);
                    lambda * (1.0 - max_sim)
                };
                OracleEntry {
                    novelty,
                    ..set[i].clone()
                }
            })
            .collect()
    }

    pub fn write(&mut self, candidate: OracleEntry) -> OracleWrite {
        let candidate_index = candidate.frame_index;
        let mut set = self.entries.clone();
        set.push(candidate);
        let mut tied = Vec::new();
        let decision = if self.entries.len() < self.config.capacity {
            OracleDecision::Appended
        } else {
            let drop_at = match self.config.eviction {
                EvictionRule::Oldest => 0,
                EvictionRule::LowestScore => {
                    set = self.refresh(&set);
                    let min = set.iter().map(OracleEntry::score).fold(f64::INFINITY, f64::min);
                    let at_min: Vec<usize> =
                        (0..set.len()).filter(|&i| set[i].score() - min <= TIE_TOLERANCE).collect();
                    if at_min.len() > 1 {
                        tied = at_min.iter().map(|&i| set[i].frame_index).collect();
                    }
                    // Set is oldest-first, so the first minimiser is the oldest.
                    at_min[0]
                }
            };
            let dropped = set.remove(drop_at);
            if dropped.frame_index == candidate_index {
                OracleDecision::Rejected
            } else {
                OracleDecision::Evicted(dropped.frame_index)
            }
        };
        self.entries = self.refresh(&set);
        OracleWrite {
            decision,
            tied,
            survivors: self.entries.clone(),
        }
    }
}
