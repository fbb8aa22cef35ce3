//! Semantic-geometric evidence bank.
//!
//! A fixed-capacity bank of pooled entries. Each entry carries a question
//! relevance `r`, a novelty `ν` against the rest of the bank, and the evidence
//! score `w = r·ν`. The score shifts the entry's keys and scales its values at
//! read time, and the lowest-scoring member of bank ∪ {candidate} is dropped
//! when the bank is full.

use serde::{Deserialize, Serialize};

use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::numerics::{grid_pool, memory_attention, normalized_similarity, token_mean, Linear, Matrix, MemoryBlock, ParamRng};

/// Which factors of the evidence score are live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `w = r·ν`.
    Full,
    /// Novelty pinned to `λ_ν`.
    RelevanceOnly,
    /// Relevance pinned to `λ_r`.
    NoveltyOnly,
    /// Both pinned; reads use `w ≡ 1`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionRule {
    /// Drop the argmin of `r·ν` over bank ∪ {candidate}.
    LowestScore,
    /// Drop the oldest stored entry and always admit the candidate.
    Oldest,
}

/// Resolution of equal minimum scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    Oldest,
    Newest,
}

/// Similarity between two pooled `M x d` entries, mapped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    /// Cosine of the token means.
    TokenMean,
    /// Mean of position-aligned per-token cosines.
    MeanTokenCosine,
}

impl SimilarityKind {
    pub fn between(self, a: &Matrix, b: &Matrix) -> f64 {
        match self {
            SimilarityKind::TokenMean => normalized_similarity(&token_mean(a), &token_mean(b)),
            SimilarityKind::MeanTokenCosine => {
                let n = a.rows().min(b.rows());
                if n == 0 {
                    return 0.5;
                }
                (0..n).map(|i| normalized_similarity(a.row(i), b.row(i))).sum::<f64>() / n as f64
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgebConfig {
    pub capacity: usize,
    pub lambda_r: f64,
    pub lambda_nu: f64,
    pub scoring: ScoreMode,
    pub eviction: EvictionRule,
    pub tie_break: TieBreak,
    pub similarity: SimilarityKind,
}

impl Default for SgebConfig {
    fn default() -> Self {
        Self {
            capacity: 32,
            lambda_r: 1.0,
            lambda_nu: 1.0,
            scoring: ScoreMode::Full,
            eviction: EvictionRule::LowestScore,
            tie_break: TieBreak::Oldest,
            similarity: SimilarityKind::TokenMean,
        }
    }
}

impl SgebConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("evidence bank capacity must be positive".into()));
        }
        if !(self.lambda_r > 0.0 && self.lambda_r.is_finite()) {
            return Err(Error::Config(format!("lambda_r must be positive, got {}", self.lambda_r)));
        }
        if !(self.lambda_nu > 0.0 && self.lambda_nu.is_finite()) {
            return Err(Error::Config(format!("lambda_nu must be positive, got {}", self.lambda_nu)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgebEntry {
    /// `M x d` pooled feature.
    pub pooled: Matrix,
    pub relevance: f64,
    pub novelty: f64,
    pub score: f64,
    pub frame_index: u64,
}

impl SgebEntry {
    fn set_novelty(&mut self, novelty: f64) {
        self.novelty = novelty;
        self.score = evidence_score(self.relevance, novelty);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WriteKind {
    InsertedBelowCapacity,
    InsertedWithEviction { evicted_frame_index: u64 },
    CandidateRejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshedScore {
    pub frame_index: u64,
    pub novelty: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteOutcome {
    pub kind: WriteKind,
    /// Bank contents after the final refresh, oldest first.
    pub refreshed_scores: Vec<RefreshedScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgebParams {
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_v: Linear,
    pub head_count: usize,
    pub pool_h: usize,
    pub pool_w: usize,
}

impl SgebParams {
    pub fn random(seed: u64, dims: &Dims) -> Self {
        let rng = |name: &str| ParamRng::new(seed, &format!("sgeb.{name}"));
        Self {
            proj_q: Linear::random(&mut rng("proj_q"), dims.d, dims.d, false),
            proj_k: Linear::random(&mut rng("proj_k"), dims.d, dims.d, false),
            proj_v: Linear::random(&mut rng("proj_v"), dims.d, dims.d, false),
            head_count: dims.head_count,
            pool_h: dims.pool_h,
            pool_w: dims.pool_w,
        }
    }
}

pub fn pool_entry(f_h: &Matrix, grid_h: usize, grid_w: usize, p: &SgebParams) -> Result<Matrix> {
    grid_pool(f_h, grid_h, grid_w, p.pool_h, p.pool_w)
}

/// `λ_r · (cos + 1) / 2` between a frame's semantic embedding and the pooled question.
pub fn relevance_score(frame_semantic: &[f64], question_pooled: &[f64], lambda_r: f64) -> Result<f64> {
    if frame_semantic.len() != question_pooled.len() {
        return Err(Error::shape("relevance_score", question_pooled.len(), frame_semantic.len()));
    }
    Ok(lambda_r * normalized_similarity(frame_semantic, question_pooled))
}

/// `λ_ν (1 − max sim)` over `others`; `λ_ν` when there is nothing to compare against.
pub fn novelty_score<'a>(candidate: &Matrix, others: impl IntoIterator<Item = &'a Matrix>, lambda_nu: f64) -> f64 {
    novelty_score_with(SimilarityKind::TokenMean, candidate, others, lambda_nu)
}

pub fn novelty_score_with<'a>(
    kind: SimilarityKind,
    candidate: &Matrix,
    others: impl IntoIterator<Item = &'a Matrix>,
    lambda_nu: f64,
) -> f64 {
    others
        .into_iter()
        .map(|o| kind.between(candidate, o))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .map_or(lambda_nu, |max_sim| lambda_nu * (1.0 - max_sim))
}

pub fn evidence_score(r: f64, nu: f64) -> f64 {
    r * nu
}

/// Leave-one-out novelty for every entry; scores follow.
pub fn refresh_novelty(entries: Vec<SgebEntry>, lambda_nu: f64) -> Vec<SgebEntry> {
    refresh_novelty_with(SimilarityKind::TokenMean, entries, lambda_nu)
}

pub fn refresh_novelty_with(kind: SimilarityKind, mut entries: Vec<SgebEntry>, lambda_nu: f64) -> Vec<SgebEntry> {
    let n = entries.len();
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    match kind {
        SimilarityKind::TokenMean => {
            let means: Vec<Vec<f64>> = entries.iter().map(|e| token_mean(&e.pooled)).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = normalized_similarity(&means[i], &means[j]);
                    max_sim[i] = max_sim[i].max(s);
                    max_sim[j] = max_sim[j].max(s);
                }
            }
        }
        SimilarityKind::MeanTokenCosine => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let s = kind.between(&entries[i].pooled, &entries[j].pooled);
                    max_sim[i] = max_sim[i].max(s);
                    max_sim[j] = max_sim[j].max(s);
                }
            }
        }
    }
    for (e, m) in entries.iter_mut().zip(max_sim) {
        let nu = if m == f64::NEG_INFINITY {
            lambda_nu
        } else {
            lambda_nu * (1.0 - m)
        };
        e.set_novelty(nu);
    }
    entries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgebState {
    config: SgebConfig,
    entries: Vec<SgebEntry>,
}

impl SgebState {
    pub fn new(config: SgebConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            entries: Vec::new(),
        })
    }

    /// Rebuilds a bank from stored entries, checking every bank invariant.
    pub fn from_entries(config: SgebConfig, entries: Vec<SgebEntry>) -> Result<Self> {
        config.validate()?;
        if entries.len() > config.capacity {
            return Err(Error::Config(format!(
                "{} entries exceed capacity {}",
                entries.len(),
                config.capacity
            )));
        }
        for pair in entries.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::DuplicateFrame(pair[1].frame_index));
            }
        }
        for e in &entries {
            if e.score != evidence_score(e.relevance, e.novelty) {
                return Err(Error::Config(format!("entry {} score is not relevance x novelty", e.frame_index)));
            }
        }
        Ok(Self { config, entries })
    }

    pub fn config(&self) -> &SgebConfig {
        &self.config
    }

    /// Swaps the tie-break rule; used by the verification harness to inject faults.
    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.config.tie_break = tie_break;
        self
    }

    pub fn entries(&self) -> &[SgebEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn frame_indices(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    /// Per-entry read modulation.
    pub fn read_weights(&self) -> Vec<f64> {
        match self.config.scoring {
            ScoreMode::Uniform => vec![1.0; self.entries.len()],
            _ => self.entries.iter().map(|e| e.score).collect(),
        }
    }

    /// Scores a candidate against the current (pre-write) bank.
    pub fn candidate(
        &self,
        pooled: Matrix,
        frame_semantic: &[f64],
        question_pooled: &[f64],
        frame_index: u64,
    ) -> Result<SgebEntry> {
        let c = &self.config;
        let relevance = match c.scoring {
            ScoreMode::Full | ScoreMode::RelevanceOnly => relevance_score(frame_semantic, question_pooled, c.lambda_r)?,
            ScoreMode::NoveltyOnly | ScoreMode::Uniform => c.lambda_r,
        };
        let novelty = match c.scoring {
            ScoreMode::Full | ScoreMode::NoveltyOnly => {
                novelty_score_with(c.similarity, &pooled, self.entries.iter().map(|e| &e.pooled), c.lambda_nu)
            }
            ScoreMode::RelevanceOnly | ScoreMode::Uniform => c.lambda_nu,
        };
        Ok(SgebEntry {
            pooled,
            relevance,
            novelty,
            score: evidence_score(relevance, novelty),
            frame_index,
        })
    }

    fn refresh(&self, entries: Vec<SgebEntry>) -> Vec<SgebEntry> {
        match self.config.scoring {
            ScoreMode::Full | ScoreMode::NoveltyOnly => {
                refresh_novelty_with(self.config.similarity, entries, self.config.lambda_nu)
            }
            ScoreMode::RelevanceOnly | ScoreMode::Uniform => {
                let mut entries = entries;
                entries.iter_mut().for_each(|e| e.set_novelty(self.config.lambda_nu));
                entries
            }
        }
    }

    /// Position of the member to drop from an oldest-first candidate set.
    fn argmin_position(&self, set: &[SgebEntry]) -> usize {
        let mut best = 0;
        for (i, e) in set.iter().enumerate().skip(1) {
            let better = match self.config.tie_break {
                TieBreak::Oldest => e.score < set[best].score,
                TieBreak::Newest => e.score <= set[best].score,
            };
            if better {
                best = i;
            }
        }
        best
    }

    /// Presents a scored candidate to the bank.
    pub fn write(self, candidate: SgebEntry) -> Result<(Self, WriteOutcome)> {
        if let Some(last) = self.entries.last() {
            if self.entries.iter().any(|e| e.frame_index == candidate.frame_index) {
                return Err(Error::DuplicateFrame(candidate.frame_index));
            }
            if candidate.frame_index < last.frame_index {
                return Err(Error::NonMonotoneFrame {
                    newest: last.frame_index,
                    got: candidate.frame_index,
                });
            }
        }
        let candidate_index = candidate.frame_index;
        let full = self.entries.len() >= self.config.capacity;
        let mut set = self.entries.clone();
        set.push(candidate);

        let (survivors, kind) = if !full {
            (set, WriteKind::InsertedBelowCapacity)
        } else {
            let drop_at = match self.config.eviction {
                EvictionRule::LowestScore => {
                    set = self.refresh(set);
                    self.argmin_position(&set)
                }
                EvictionRule::Oldest => 0,
            };
            let dropped = set.remove(drop_at);
            let kind = if dropped.frame_index == candidate_index {
                WriteKind::CandidateRejected
            } else {
                WriteKind::InsertedWithEviction {
                    evicted_frame_index: dropped.frame_index,
                }
            };
            (set, kind)
        };

        let entries = self.refresh(survivors);
        let refreshed_scores = entries
            .iter()
            .map(|e| RefreshedScore {
                frame_index: e.frame_index,
                novelty: e.novelty,
                score: e.score,
            })
            .collect();
        Ok((
            Self {
                config: self.config,
                entries,
            },
            WriteOutcome { kind, refreshed_scores },
        ))
    }
}

pub fn sgeb_write(state: SgebState, candidate: SgebEntry) -> Result<(SgebState, WriteOutcome)> {
    state.write(candidate)
}

/// Attention of the current feature over every pooled token in the bank. Each
/// entry's read weight is added to its keys and multiplied into its values.
/// An empty bank reads as zeros.
pub fn sgeb_read(state: &SgebState, f_h: &Matrix, p: &SgebParams) -> Result<Matrix> {
    if state.is_empty() {
        return Ok(Matrix::zeros(f_h.rows(), f_h.cols()));
    }
    let mut blocks = Vec::with_capacity(state.len());
    for (entry, w) in state.entries().iter().zip(state.read_weights()) {
        if entry.pooled.cols() != f_h.cols() {
            return Err(Error::shape("sgeb_read", f_h.cols(), entry.pooled.cols()));
        }
        blocks.push(MemoryBlock {
            tokens: &entry.pooled,
            key_shift: w,
            value_scale: w,
        });
    }
    memory_attention(f_h, &blocks, &p.proj_q, &p.proj_k, &p.proj_v, p.head_count)
}
