//! Replays streams against the brute-force oracle and the ablation identities.

use serde::{Deserialize, Serialize};

use crate::cggf::fuse_geometry;
use crate::error::{Error, Result};
use crate::fgcb::{fgcb_read, CameraModulation};
use crate::numerics::{Linear, Matrix};
use crate::pipeline::{ComponentToggles, PipelineState, StepRecord};
use crate::sgeb::{sgeb_read, ScoreMode, SgebConfig, SgebState, TieBreak, WriteKind};

use super::config::RunConfig;
use super::oracle::{self, Dense, OracleBank, OracleDecision};
use super::run::Experiment;
use super::snapshot::{snapshot_from_str, snapshot_to_string};

pub const VERIFY_FORMAT_VERSION: u32 = 1;
pub const SCORE_TOLERANCE: f64 = 1e-9;
pub const ABLATION_TOLERANCE: f64 = 1e-6;
pub const RESUME_STEPS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub capacity: usize,
    /// Runs the bank with newest-first tie-breaking; the oracle keeps oldest-first.
    pub corrupt_tie_break: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            steps: 200,
            capacity: 8,
            corrupt_tie_break: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub seed: u64,
    pub frame_index: u64,
    pub check: String,
    pub expected: String,
    pub got: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps_checked: u64,
    pub evictions_checked: u64,
    pub ties: u64,
    pub first_tie: Option<u64>,
    pub max_score_error: f64,
    pub max_camera_off_error: f64,
    pub max_uniform_read_error: f64,
    pub swiglu_passthrough_exact: bool,
    pub resume_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub passed: bool,
    pub options: VerifyOptions,
    pub seeds: Vec<SeedSummary>,
    pub divergences: Vec<Divergence>,
}

/// The stream replayed for `seed`: the base config at the requested capacity
/// and length, half the frames revisits, and noiseless frames on even seeds
/// so that exact duplicates (and therefore score ties) occur.
pub fn verify_config(base: &RunConfig, seed: u64, steps: usize, capacity: usize) -> RunConfig {
    let mut config = base.clone();
    config.seed = seed;
    config.capacity_k = capacity;
    config.verbose = true;
    config.toggles = ComponentToggles::default();
    config.scenario.length = steps;
    config.scenario.revisit_rate = 0.5;
    if seed % 2 == 0 {
        config.scenario.noise_scale = 0.0;
    }
    config
}

pub fn verify(base: &RunConfig, options: &VerifyOptions) -> Result<VerifyReport> {
    if options.seeds.is_empty() {
        return Err(Error::Config("verify needs at least one seed".into()));
    }
    if options.steps == 0 {
        return Err(Error::Config("verify needs at least one step".into()));
    }
    let mut seeds = Vec::with_capacity(options.seeds.len());
    let mut divergences = Vec::new();
    for &seed in &options.seeds {
        let config = verify_config(base, seed, options.steps, options.capacity);
        let (summary, found) = verify_seed(&config, options.corrupt_tie_break)?;
        seeds.push(summary);
        divergences.extend(found);
    }
    Ok(VerifyReport {
        format_version: VERIFY_FORMAT_VERSION,
        passed: divergences.is_empty(),
        options: options.clone(),
        seeds,
        divergences,
    })
}

fn max_abs_diff(a: &Matrix, b: &Dense) -> f64 {
    if a.rows() != b.len() || b.iter().any(|r| r.len() != a.cols()) {
        return f64::INFINITY;
    }
    (0..a.rows())
        .flat_map(|i| a.row(i).iter().zip(&b[i]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn stacked(blocks: impl Iterator<Item = Dense>) -> Dense {
    blocks.flatten().collect()
}

/// Unmodulated attention of `f_h` over stacked memory tokens.
fn plain_read<'a>(f_h: &Matrix, memory: impl Iterator<Item = &'a Matrix> + Clone, q: &Linear, k: &Linear, v: &Linear, heads: usize) -> Dense {
    let query = oracle::linear(&oracle::dense(f_h), q);
    let keys = stacked(memory.clone().map(|m| oracle::linear(&oracle::dense(m), k)));
    let values = stacked(memory.map(|m| oracle::linear(&oracle::dense(m), v)));
    oracle::attention(&query, &keys, &values, heads)
}

fn describe(kind: &WriteKind) -> String {
    match kind {
        WriteKind::InsertedBelowCapacity => "appended".into(),
        WriteKind::InsertedWithEviction { evicted_frame_index } => format!("evicted {evicted_frame_index}"),
        WriteKind::CandidateRejected => "rejected candidate".into(),
    }
}

fn describe_oracle(d: OracleDecision) -> String {
    match d {
        OracleDecision::Appended => "appended".into(),
        OracleDecision::Evicted(i) => format!("evicted {i}"),
        OracleDecision::Rejected => "rejected candidate".into(),
    }
}

struct SeedRun<'a> {
    seed: u64,
    divergences: Vec<Divergence>,
    summary: &'a mut SeedSummary,
}

impl SeedRun<'_> {
    fn diverge(&mut self, frame_index: u64, check: &str, expected: impl ToString, got: impl ToString) {
        self.divergences.push(Divergence {
            seed: self.seed,
            frame_index,
            check: check.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }

    fn score(&mut self, t: u64, check: &str, expected: f64, got: Option<f64>) {
        match got {
            Some(g) if (g - expected).abs() <= SCORE_TOLERANCE => {
                self.summary.max_score_error = self.summary.max_score_error.max((g - expected).abs());
            }
            other => self.diverge(t, check, expected, format!("{other:?}")),
        }
    }
}

fn verify_seed(config: &RunConfig, corrupt_tie_break: bool) -> Result<(SeedSummary, Vec<Divergence>)> {
    let exp = Experiment::new(config)?;
    let dims = config.dims;
    let params = &exp.pipeline.params;
    let mut summary = SeedSummary {
        seed: config.seed,
        steps_checked: 0,
        evictions_checked: 0,
        ties: 0,
        first_tie: None,
        max_score_error: 0.0,
        max_camera_off_error: 0.0,
        max_uniform_read_error: 0.0,
        swiglu_passthrough_exact: true,
        resume_identical: true,
    };
    let mut run = SeedRun {
        seed: config.seed,
        divergences: Vec::new(),
        summary: &mut summary,
    };

    let mut state = exp.initial_state()?;
    if corrupt_tie_break {
        state.sgeb = state.sgeb.with_tie_break(TieBreak::Newest);
    }
    let mut bank = OracleBank::new(exp.config.bank_config());
    let question = state.question_pooled.clone();

    let mut zero_gate = params.cggf.clone();
    zero_gate.proj_cv = Linear::zeros(zero_gate.proj_cv.in_dim(), zero_gate.proj_cv.out_dim(), true);

    for t in 1..=exp.scenario.length as u64 {
        let frame = exp.observe(t)?;
        let geo = exp.pipeline.geo_feature(&frame.inputs)?;

        if fuse_geometry(&frame.inputs, &zero_gate)?.feature != frame.inputs.visual {
            run.summary.swiglu_passthrough_exact = false;
            run.diverge(t, "swiglu_zero_passthrough", "visual tokens", "modified tokens");
        }
        if !state.fgcb.is_empty() {
            let got = fgcb_read(&state.fgcb, &geo.feature, &geo.camera, &params.fgcb, CameraModulation::Off)?;
            let p = &params.fgcb;
            let want = plain_read(&geo.feature, state.fgcb.entries().iter().map(|e| &e.feature), &p.proj_q, &p.proj_k, &p.proj_v, p.head_count);
            let err = max_abs_diff(&got, &want);
            run.summary.max_camera_off_error = run.summary.max_camera_off_error.max(err);
            if err > ABLATION_TOLERANCE {
                run.diverge(t, "camera_delta_off_read", "plain attention", format!("max error {err:e}"));
            }
        }
        if !state.sgeb.is_empty() {
            let uniform = SgebState::from_entries(
                SgebConfig {
                    scoring: ScoreMode::Uniform,
                    ..*state.sgeb.config()
                },
                state.sgeb.entries().to_vec(),
            )?;
            let got = sgeb_read(&uniform, &geo.feature, &params.sgeb)?;
            let p = &params.sgeb;
            let want = plain_read(&geo.feature, uniform.entries().iter().map(|e| &e.pooled), &p.proj_q, &p.proj_k, &p.proj_v, p.head_count);
            let err = max_abs_diff(&got, &want);
            run.summary.max_uniform_read_error = run.summary.max_uniform_read_error.max(err);
            if err > ABLATION_TOLERANCE {
                run.diverge(t, "uniform_weight_read", "plain attention", format!("max error {err:e}"));
            }
        }

        let out = exp.pipeline.step(state, &frame)?;
        state = out.state;
        let record = &out.record;
        run.summary.steps_checked += 1;

        for (name, frames) in [("fgcb_read_frames", &record.fgcb_read_frames), ("sgeb_read_frames", &record.sgeb_read_frames)] {
            if let Some(bad) = frames.iter().find(|&&i| i >= t) {
                run.diverge(t, name, format!("indices below {t}"), bad);
            }
        }

        let tensors = record
            .tensors
            .as_ref()
            .ok_or_else(|| Error::Config("verification needs verbose step records".into()))?;
        let pooled = oracle::block_pool(&oracle::dense(&tensors.geo_feature), geo.grid_h, geo.grid_w, dims.pool_h, dims.pool_w);
        let candidate = bank.candidate(t, &pooled, &frame.semantic, &question);
        run.score(t, "candidate_relevance", candidate.relevance, record.relevance);
        run.score(t, "candidate_novelty", candidate.novelty, record.novelty);
        run.score(t, "candidate_score", candidate.score(), record.score);

        let expected = bank.write(candidate);
        if !expected.tied.is_empty() {
            run.summary.ties += 1;
            run.summary.first_tie.get_or_insert(t);
        }
        let Some(outcome) = &record.write_outcome else {
            run.diverge(t, "write_outcome", describe_oracle(expected.decision), "missing");
            break;
        };
        if !matches!(expected.decision, OracleDecision::Appended) {
            run.summary.evictions_checked += 1;
        }
        let agrees = matches!(
            (&outcome.kind, expected.decision),
            (WriteKind::InsertedBelowCapacity, OracleDecision::Appended) | (WriteKind::CandidateRejected, OracleDecision::Rejected)
        ) || matches!(
            (&outcome.kind, expected.decision),
            (WriteKind::InsertedWithEviction { evicted_frame_index: a }, OracleDecision::Evicted(b)) if *a == b
        );
        if !agrees {
            let mut want = describe_oracle(expected.decision);
            if !expected.tied.is_empty() {
                want.push_str(&format!(" (tie among {:?})", expected.tied));
            }
            run.diverge(t, "write_decision", want, describe(&outcome.kind));
            break;
        }
        let want_indices: Vec<u64> = expected.survivors.iter().map(|e| e.frame_index).collect();
        if state.sgeb.frame_indices() != want_indices {
            run.diverge(t, "retained_indices", format!("{want_indices:?}"), format!("{:?}", state.sgeb.frame_indices()));
            break;
        }
        for (want, got) in expected.survivors.iter().zip(&outcome.refreshed_scores) {
            run.score(t, "refreshed_novelty", want.novelty, Some(got.novelty));
            run.score(t, "refreshed_score", want.score(), Some(got.score));
        }
    }

    if run.divergences.is_empty() {
        check_resume(&exp, &mut run)?;
    }
    let divergences = run.divergences;
    Ok((summary, divergences))
}

/// Snapshot halfway, reload, and compare the next steps with the uninterrupted run.
fn check_resume(exp: &Experiment, run: &mut SeedRun<'_>) -> Result<()> {
    let length = exp.scenario.length as u64;
    let span = RESUME_STEPS.min(length);
    let mid = (length / 2).min(length - span);
    let (state, _) = exp.advance(exp.initial_state()?, mid)?;
    let text = snapshot_to_string(&state)?;
    let restored: PipelineState = snapshot_from_str(&text)?;
    let restored_identical = restored == state && snapshot_to_string(&restored)? == text;
    let (a_state, a_records): (PipelineState, Vec<StepRecord>) = exp.advance(state, span)?;
    let (b_state, b_records) = exp.advance(restored, span)?;
    if !restored_identical || a_records != b_records || a_state != b_state {
        run.summary.resume_identical = false;
        run.diverge(mid + 1, "snapshot_resume", "identical continuation", "continuation differs");
    }
    Ok(())
}
