//! Per-frame orchestration: fuse geometry, read both banks, gate the readouts
//! into the current feature, then write both banks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cggf::{fuse_geometry, CggfParams, FrameInputs, GeoAwareFeature};
use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::fgcb::{fgcb_read, CameraModulation, FgcbParams, FgcbState};
use crate::numerics::{mean_pool_tokens, Activation, Matrix, MlpParams, ParamRng};
use crate::sgeb::{
    pool_entry, sgeb_read, EvictionRule, ScoreMode, SgebConfig, SgebParams, SgebState, WriteOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// 3d -> d, sigmoid output.
    pub mlp_gate_f: MlpParams,
    /// 3d -> d, sigmoid output.
    pub mlp_gate_s: MlpParams,
}

impl FusionParams {
    pub fn random(seed: u64, dims: &Dims) -> Self {
        let d = dims.d;
        Self {
            mlp_gate_f: MlpParams::two_layer(&mut ParamRng::new(seed, "fusion.gate_f"), 3 * d, d, Activation::Sigmoid),
            mlp_gate_s: MlpParams::two_layer(&mut ParamRng::new(seed, "fusion.gate_s"), 3 * d, d, Activation::Sigmoid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBundle {
    pub cggf: CggfParams,
    pub fgcb: FgcbParams,
    pub sgeb: SgebParams,
    pub fusion: FusionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub feature: Matrix,
    /// `1 x d`, in (0, 1).
    pub gate_f: Matrix,
    pub gate_s: Matrix,
}

/// `f + g_F ⊙ R_F + g_S ⊙ R_S` with gates from the concatenated token means.
pub fn adaptive_fuse(f_h: &Matrix, r_f: &Matrix, r_s: &Matrix, p: &FusionParams) -> Result<Fused> {
    if f_h.shape() != r_f.shape() || f_h.shape() != r_s.shape() {
        return Err(Error::shape(
            "adaptive_fuse",
            format!("{:?} readouts", f_h.shape()),
            format!("{:?} and {:?}", r_f.shape(), r_s.shape()),
        ));
    }
    let summary = mean_pool_tokens(f_h)?
        .hcat(&mean_pool_tokens(r_f)?)?
        .hcat(&mean_pool_tokens(r_s)?)?;
    let gate_f = p.mlp_gate_f.forward(&summary)?;
    let gate_s = p.mlp_gate_s.forward(&summary)?;
    let feature = f_h
        .add(&r_f.mul_row_broadcast(&gate_f)?)?
        .add(&r_s.mul_row_broadcast(&gate_s)?)?;
    Ok(Fused {
        feature,
        gate_f,
        gate_s,
    })
}

/// Write and read policy of the evidence bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    SgebFull,
    Fifo,
    RelevanceOnly,
    NoveltyOnly,
    NoBias,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::SgebFull,
        Policy::Fifo,
        Policy::RelevanceOnly,
        Policy::NoveltyOnly,
        Policy::NoBias,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::SgebFull => "sgeb_full",
            Policy::Fifo => "fifo",
            Policy::RelevanceOnly => "relevance_only",
            Policy::NoveltyOnly => "novelty_only",
            Policy::NoBias => "no_bias",
        }
    }

    pub fn scoring(self) -> ScoreMode {
        match self {
            Policy::SgebFull => ScoreMode::Full,
            Policy::RelevanceOnly => ScoreMode::RelevanceOnly,
            Policy::NoveltyOnly => ScoreMode::NoveltyOnly,
            Policy::Fifo | Policy::NoBias => ScoreMode::Uniform,
        }
    }

    pub fn eviction(self) -> EvictionRule {
        match self {
            Policy::Fifo => EvictionRule::Oldest,
            _ => EvictionRule::LowestScore,
        }
    }

    /// Bank configuration for this policy on top of shared capacity and weights.
    pub fn bank_config(self, base: SgebConfig) -> SgebConfig {
        SgebConfig {
            scoring: self.scoring(),
            eviction: self.eviction(),
            ..base
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown policy `{s}` (expected one of sgeb_full, fifo, relevance_only, novelty_only, no_bias)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentToggles {
    pub cggf_on: bool,
    pub fgcb_on: bool,
    pub sgeb_on: bool,
    pub camera_delta_on: bool,
}

impl Default for ComponentToggles {
    fn default() -> Self {
        Self {
            cggf_on: true,
            fgcb_on: true,
            sgeb_on: true,
            camera_delta_on: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub fgcb: FgcbState,
    pub sgeb: SgebState,
    /// Frames processed so far.
    pub step: u64,
    pub question_pooled: Vec<f64>,
}

impl PipelineState {
    pub fn new(tau: usize, bank: SgebConfig, question_pooled: Vec<f64>) -> Result<Self> {
        Ok(Self {
            fgcb: FgcbState::new(tau)?,
            sgeb: SgebState::new(bank)?,
            step: 0,
            question_pooled,
        })
    }
}

/// One frame as seen by the pipeline: encoder outputs plus the question
/// encoder's semantic embedding of the raw visual tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub inputs: FrameInputs,
    pub semantic: Vec<f64>,
}

/// Full tensors of a step, kept only in verbose mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTensors {
    pub geo_feature: Matrix,
    pub readout_f: Matrix,
    pub readout_s: Matrix,
    pub fused: Matrix,
    pub gate_f: Matrix,
    pub gate_s: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub frame_index: u64,
    /// Evidence-bank diagnostics; absent when the bank is switched off.
    pub relevance: Option<f64>,
    pub novelty: Option<f64>,
    pub score: Option<f64>,
    pub write_outcome: Option<WriteOutcome>,
    pub gate_f_mean: f64,
    pub gate_s_mean: f64,
    pub readout_f_max_abs: f64,
    pub readout_s_max_abs: f64,
    /// Sum of all fused values.
    pub fused_feature_checksum: f64,
    /// Frames visible to each read at this step.
    pub fgcb_read_frames: Vec<u64>,
    pub sgeb_read_frames: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tensors: Option<StepTensors>,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub params: ParamBundle,
    pub toggles: ComponentToggles,
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: PipelineState,
    pub fused: Matrix,
    pub record: StepRecord,
}

fn mean(m: &Matrix) -> f64 {
    m.sum() / m.data().len().max(1) as f64
}

impl Pipeline {
    pub fn new(params: ParamBundle, toggles: ComponentToggles) -> Self {
        Self {
            params,
            toggles,
            verbose: false,
        }
    }

    pub fn geo_feature(&self, inputs: &FrameInputs) -> Result<GeoAwareFeature> {
        if self.toggles.cggf_on {
            fuse_geometry(inputs, &self.params.cggf)
        } else {
            inputs.validate()?;
            Ok(GeoAwareFeature::visual_only(inputs))
        }
    }

    /// Processes frame `state.step + 1`: both reads see only earlier frames.
    pub fn step(&self, state: PipelineState, frame: &FrameObservation) -> Result<StepOutput> {
        let inputs = &frame.inputs;
        if inputs.frame_index != state.step + 1 {
            return Err(Error::NonMonotoneFrame {
                newest: state.step,
                got: inputs.frame_index,
            });
        }
        let PipelineState {
            fgcb,
            sgeb,
            step,
            question_pooled,
        } = state;

        let geo = self.geo_feature(inputs)?;
        let f_h = &geo.feature;
        let zeros = || Matrix::zeros(f_h.rows(), f_h.cols());

        let fgcb_read_frames = if self.toggles.fgcb_on { fgcb.frame_indices() } else { Vec::new() };
        let readout_f = if self.toggles.fgcb_on {
            let modulation = if self.toggles.camera_delta_on {
                CameraModulation::On
            } else {
                CameraModulation::Off
            };
            fgcb_read(&fgcb, f_h, &geo.camera, &self.params.fgcb, modulation)?
        } else {
            zeros()
        };

        let sgeb_read_frames = if self.toggles.sgeb_on { sgeb.frame_indices() } else { Vec::new() };
        let readout_s = if self.toggles.sgeb_on {
            sgeb_read(&sgeb, f_h, &self.params.sgeb)?
        } else {
            zeros()
        };

        let fused = adaptive_fuse(f_h, &readout_f, &readout_s, &self.params.fusion)?;

        let fgcb = fgcb.write(f_h.clone(), geo.camera.clone(), geo.frame_index)?;

        let (sgeb, relevance, novelty, score, write_outcome) = if self.toggles.sgeb_on {
            let pooled = pool_entry(f_h, geo.grid_h, geo.grid_w, &self.params.sgeb)?;
            let candidate = sgeb.candidate(pooled, &frame.semantic, &question_pooled, geo.frame_index)?;
            let (r, nu, w) = (candidate.relevance, candidate.novelty, candidate.score);
            let (sgeb, outcome) = sgeb.write(candidate)?;
            (sgeb, Some(r), Some(nu), Some(w), Some(outcome))
        } else {
            (sgeb, None, None, None, None)
        };

        let record = StepRecord {
            frame_index: inputs.frame_index,
            relevance,
            novelty,
            score,
            write_outcome,
            gate_f_mean: mean(&fused.gate_f),
            gate_s_mean: mean(&fused.gate_s),
            readout_f_max_abs: readout_f.max_abs(),
            readout_s_max_abs: readout_s.max_abs(),
            fused_feature_checksum: fused.feature.sum(),
            fgcb_read_frames,
            sgeb_read_frames,
            tensors: self.verbose.then(|| StepTensors {
                geo_feature: geo.feature.clone(),
                readout_f: readout_f.clone(),
                readout_s: readout_s.clone(),
                fused: fused.feature.clone(),
                gate_f: fused.gate_f.clone(),
                gate_s: fused.gate_s.clone(),
            }),
        };
        Ok(StepOutput {
            state: PipelineState {
                fgcb,
                sgeb,
                step: step + 1,
                question_pooled,
            },
            fused: fused.feature,
            record,
        })
    }
}
