//! Fine-grained context bank: a sliding window of the last `τ` geometry-aware
//! features with their camera tokens, read through camera-delta modulated
//! attention.

use serde::{Deserialize, Serialize};

use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::numerics::{memory_attention, Activation, Linear, Matrix, MemoryBlock, MlpParams, ParamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgcbEntry {
    pub feature: Matrix,
    pub camera: Matrix,
    pub frame_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgcbState {
    entries: Vec<FgcbEntry>,
    capacity: usize,
}

impl FgcbState {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("context window must hold at least one frame".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
        })
    }

    /// Rebuilds a state from stored entries, checking the window invariants.
    pub fn from_entries(capacity: usize, entries: Vec<FgcbEntry>) -> Result<Self> {
        let mut state = Self::new(capacity)?;
        if entries.len() > capacity {
            return Err(Error::Config(format!(
                "{} entries exceed window {capacity}",
                entries.len()
            )));
        }
        for pair in entries.windows(2) {
            if pair[1].frame_index <= pair[0].frame_index {
                return Err(Error::NonMonotoneFrame {
                    newest: pair[0].frame_index,
                    got: pair[1].frame_index,
                });
            }
        }
        state.entries = entries;
        Ok(state)
    }

    pub fn entries(&self) -> &[FgcbEntry] {
        &self.entries
    }

    pub fn capacity(&self) -> usize {
        self.capacity
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

    /// Appends the frame, dropping the oldest entry once the window overflows.
    pub fn write(mut self, feature: Matrix, camera: Matrix, frame_index: u64) -> Result<Self> {
        if let Some(last) = self.entries.last() {
            if frame_index <= last.frame_index {
                return Err(Error::NonMonotoneFrame {
                    newest: last.frame_index,
                    got: frame_index,
                });
            }
        }
        self.entries.push(FgcbEntry {
            feature,
            camera,
            frame_index,
        });
        if self.entries.len() > self.capacity {
            self.entries.remove(0);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgcbParams {
    /// d_g -> 1
    pub mlp_b_delta: MlpParams,
    /// d_g -> 1, sigmoid output
    pub mlp_a_delta: MlpParams,
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_v: Linear,
    pub head_count: usize,
}

impl FgcbParams {
    pub fn random(seed: u64, dims: &Dims) -> Self {
        let rng = |name: &str| ParamRng::new(seed, &format!("fgcb.{name}"));
        Self {
            mlp_b_delta: MlpParams::two_layer(&mut rng("mlp_b_delta"), dims.d_g, 1, Activation::Identity),
            mlp_a_delta: MlpParams::two_layer(&mut rng("mlp_a_delta"), dims.d_g, 1, Activation::Sigmoid),
            proj_q: Linear::random(&mut rng("proj_q"), dims.d, dims.d, false),
            proj_k: Linear::random(&mut rng("proj_k"), dims.d, dims.d, false),
            proj_v: Linear::random(&mut rng("proj_v"), dims.d, dims.d, false),
            head_count: dims.head_count,
        }
    }
}

/// Whether camera deltas modulate the read. `Off` pins `b = 0`, `a = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraModulation {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraDelta {
    /// Added to every key channel of the entry.
    pub bias: f64,
    /// Multiplies every value channel of the entry; in (0, 1).
    pub gate: f64,
}

pub fn camera_delta_signals(cam_now: &Matrix, entry: &FgcbEntry, p: &FgcbParams) -> Result<CameraDelta> {
    let delta = cam_now.sub(&entry.camera)?;
    let bias = p.mlp_b_delta.forward(&delta)?;
    let gate = p.mlp_a_delta.forward(&delta)?;
    if bias.shape() != (1, 1) || gate.shape() != (1, 1) {
        return Err(Error::shape(
            "camera_delta_signals",
            "scalar outputs",
            format!("{:?} and {:?}", bias.shape(), gate.shape()),
        ));
    }
    Ok(CameraDelta {
        bias: bias.get(0, 0),
        gate: gate.get(0, 0),
    })
}

/// Attention of the current feature over every stored token, with each entry's
/// keys shifted by its camera bias and values scaled by its camera gate.
/// An empty window reads as zeros.
pub fn fgcb_read(
    state: &FgcbState,
    f_h: &Matrix,
    cam_now: &Matrix,
    p: &FgcbParams,
    modulation: CameraModulation,
) -> Result<Matrix> {
    if state.is_empty() {
        return Ok(Matrix::zeros(f_h.rows(), f_h.cols()));
    }
    let mut blocks = Vec::with_capacity(state.len());
    for entry in state.entries() {
        if entry.feature.cols() != f_h.cols() {
            return Err(Error::shape("fgcb_read", f_h.cols(), entry.feature.cols()));
        }
        let delta = match modulation {
            CameraModulation::On => camera_delta_signals(cam_now, entry, p)?,
            CameraModulation::Off => CameraDelta { bias: 0.0, gate: 1.0 },
        };
        blocks.push(MemoryBlock {
            tokens: &entry.feature,
            key_shift: delta.bias,
            value_scale: delta.gate,
        });
    }
    memory_attention(f_h, &blocks, &p.proj_q, &p.proj_k, &p.proj_v, p.head_count)
}
