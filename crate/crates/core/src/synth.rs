//! Deterministic stand-ins for the frame encoders and the question encoder,
//! plus planted-relevance scenario generation.
//!
//! Content labels map to low-coherence anchor directions: each label is a
//! polynomial of degree `< k` over `GF(p)` and its anchor is the signed
//! indicator of the polynomial's graph in a `p x p` grid of channels. Two
//! distinct polynomials agree on at most `k - 1` points, so anchor cosines are
//! bounded by `(k - 1) / p`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cggf::{CggfParams, FrameInputs};
use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::fgcb::FgcbParams;
use crate::numerics::{Matrix, ParamRng};
use crate::pipeline::{FusionParams, ParamBundle};
use crate::sgeb::SgebParams;

pub const SCENARIO_FORMAT_VERSION: u32 = 1;
pub const MAX_NOISE_SCALE: f64 = 1.0;
/// Upper bound on the cosine between two distinct label anchors.
pub const ANCHOR_COHERENCE_LIMIT: f64 = 0.3;

/// Half-extent of the square room the camera walks in.
const ROOM_HALF_EXTENT: f64 = 2.0;
const WALK_STEP: f64 = 0.3;
const HEADING_STEP: f64 = 0.4;
/// Spread of per-token spatial patterns around the label anchor.
const TOKEN_PATTERN_SCALE: f64 = 0.5;
const GEOMETRY_POSE_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub content_label: u32,
    pub relevance_strength: f64,
    /// `[x, y, z, heading]`.
    pub camera_pose: [f64; 4],
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    pub length: usize,
    pub frames: Vec<FrameSpec>,
    pub question_label: String,
    pub relevant_labels: BTreeSet<u32>,
    /// 1-based indices of frames showing a relevant label.
    pub relevant_indices: BTreeSet<u64>,
    pub seed: u64,
}

impl Scenario {
    pub fn frame(&self, frame_index: u64) -> &FrameSpec {
        &self.frames[(frame_index - 1) as usize]
    }

    pub fn label_of(&self, frame_index: u64) -> u32 {
        self.frame(frame_index).content_label
    }

    /// Relevant labels that actually occur in the stream.
    pub fn relevant_labels_present(&self) -> BTreeSet<u32> {
        self.frames
            .iter()
            .map(|f| f.content_label)
            .filter(|l| self.relevant_labels.contains(l))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCENARIO_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Snapshot {
                    field: "format_version".into(),
                    reason: format!("unsupported version {v}"),
                })
            }
            None => {
                return Err(Error::Snapshot {
                    field: "format_version".into(),
                    reason: "missing".into(),
                })
            }
        }
        let scenario: Scenario = serde_json::from_value(value)?;
        if scenario.frames.len() != scenario.length {
            return Err(Error::Snapshot {
                field: "frames".into(),
                reason: format!("{} frames for length {}", scenario.frames.len(), scenario.length),
            });
        }
        Ok(scenario)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn checksum(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub seed: u64,
    pub length: usize,
    pub n_labels: usize,
    pub relevant_fraction: f64,
    pub revisit_rate: f64,
    pub noise_scale: f64,
    pub question_label: String,
}

impl ScenarioParams {
    /// Planted-relevance family: about `1.5 K` relevant labels among roughly
    /// as many labels as the stream introduces fresh.
    pub fn planted_family(seed: u64, length: usize, capacity: usize, label_capacity: usize) -> Self {
        let revisit_rate = 0.4;
        let n_labels = (((1.0 - revisit_rate) * length as f64).ceil() as usize).clamp(1, label_capacity.max(1));
        let relevant_fraction = (1.5 * capacity as f64 / n_labels as f64).min(1.0);
        Self {
            seed,
            length,
            n_labels,
            relevant_fraction,
            revisit_rate,
            noise_scale: 0.05,
            question_label: "how-many-chairs".into(),
        }
    }
}

fn reflect(x: f64, half: f64) -> f64 {
    let period = 4.0 * half;
    let mut y = (x + half).rem_euclid(period);
    if y > 2.0 * half {
        y = period - y;
    }
    y - half
}

fn walk(rng: &mut ParamRng, pose: [f64; 4]) -> [f64; 4] {
    [
        reflect(pose[0] + WALK_STEP * rng.normal(), ROOM_HALF_EXTENT),
        reflect(pose[1] + WALK_STEP * rng.normal(), ROOM_HALF_EXTENT),
        reflect(pose[2] + 0.2 * WALK_STEP * rng.normal(), 0.5),
        (pose[3] + HEADING_STEP * rng.normal()).rem_euclid(std::f64::consts::TAU),
    ]
}

fn label_strength(seed: u64, label: u32, relevant: bool) -> f64 {
    let mut rng = ParamRng::indexed(seed, "scenario.strength", u64::from(label));
    if relevant {
        rng.uniform(0.8, 1.0)
    } else {
        rng.uniform(0.0, 0.2)
    }
}

fn jitter_strength(seed: u64, frame_index: u64, base: f64, noise_scale: f64) -> f64 {
    if noise_scale == 0.0 {
        return base;
    }
    let mut rng = ParamRng::indexed(seed, "scenario.jitter", frame_index);
    (base + noise_scale * rng.normal()).clamp(0.0, 1.0)
}

pub fn gen_scenario(params: &ScenarioParams) -> Result<Scenario> {
    let ScenarioParams {
        seed,
        length,
        n_labels,
        relevant_fraction,
        revisit_rate,
        noise_scale,
        ..
    } = *params;
    if length == 0 {
        return Err(Error::Config("scenario length must be at least 1".into()));
    }
    if n_labels == 0 || n_labels > u32::MAX as usize {
        return Err(Error::Config(format!("n_labels = {n_labels} is out of range")));
    }
    if !(0.0..=1.0).contains(&relevant_fraction) {
        return Err(Error::Config(format!("relevant_fraction {relevant_fraction} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&revisit_rate) {
        return Err(Error::Config(format!("revisit_rate {revisit_rate} outside [0, 1]")));
    }
    if !(0.0..=MAX_NOISE_SCALE).contains(&noise_scale) {
        return Err(Error::Config(format!("noise_scale {noise_scale} outside [0, {MAX_NOISE_SCALE}]")));
    }
    if revisit_rate == 0.0 && length > n_labels {
        return Err(Error::Config(format!(
            "{length} frames cannot all show distinct labels from a pool of {n_labels}"
        )));
    }

    let mut rng = ParamRng::new(seed, "scenario.relevant");
    let n_relevant = (relevant_fraction * n_labels as f64).ceil() as usize;
    let mut pool: Vec<u32> = (0..n_labels as u32).collect();
    for i in 0..n_relevant {
        let j = i + rng.below(n_labels - i);
        pool.swap(i, j);
    }
    let relevant_labels: BTreeSet<u32> = pool[..n_relevant].iter().copied().collect();

    let mut seq = ParamRng::new(seed, "scenario.sequence");
    let mut walker = ParamRng::new(seed, "scenario.walk");
    let mut seen: Vec<u32> = Vec::new();
    let mut pose_of: BTreeMap<u32, [f64; 4]> = BTreeMap::new();
    let mut pose = [0.0, 0.0, 0.0, 0.0];
    let mut frames = Vec::with_capacity(length);
    let mut relevant_indices = BTreeSet::new();
    for t in 1..=length as u64 {
        let fresh_left = seen.len() < n_labels;
        let revisit = !seen.is_empty() && (!fresh_left || seq.unit() < revisit_rate);
        let label = if revisit {
            let label = seen[seq.below(seen.len())];
            pose = pose_of[&label];
            label
        } else {
            let label = seen.len() as u32;
            pose = walk(&mut walker, pose);
            pose_of.insert(label, pose);
            seen.push(label);
            label
        };
        let relevant = relevant_labels.contains(&label);
        if relevant {
            relevant_indices.insert(t);
        }
        let base = label_strength(seed, label, relevant);
        frames.push(FrameSpec {
            content_label: label,
            relevance_strength: jitter_strength(seed, t, base, noise_scale),
            camera_pose: pose,
            noise_scale,
        });
    }

    Ok(Scenario {
        format_version: SCENARIO_FORMAT_VERSION,
        length,
        frames,
        question_label: params.question_label.clone(),
        relevant_labels,
        relevant_indices,
        seed,
    })
}

/// Separable stream: `k` planted labels at evenly spaced frames with full
/// relevance, every other frame a distinct zero-relevance distractor, no noise.
pub fn planted_scenario(seed: u64, length: usize, k: usize) -> Result<Scenario> {
    if k == 0 || length < k {
        return Err(Error::Config(format!("cannot plant {k} labels in {length} frames")));
    }
    let stride = length / k;
    let planted_at: BTreeSet<u64> = (0..k).map(|i| (i * stride) as u64 + 1).collect();
    let mut walker = ParamRng::new(seed, "scenario.walk");
    let mut pose = [0.0; 4];
    let mut frames = Vec::with_capacity(length);
    let mut relevant_labels = BTreeSet::new();
    for t in 1..=length as u64 {
        pose = walk(&mut walker, pose);
        let label = (t - 1) as u32;
        let relevant = planted_at.contains(&t);
        if relevant {
            relevant_labels.insert(label);
        }
        frames.push(FrameSpec {
            content_label: label,
            relevance_strength: if relevant { 1.0 } else { 0.0 },
            camera_pose: pose,
            noise_scale: 0.0,
        });
    }
    Ok(Scenario {
        format_version: SCENARIO_FORMAT_VERSION,
        length,
        frames,
        question_label: "planted".into(),
        relevant_labels,
        relevant_indices: planted_at,
        seed,
    })
}

/// Low-coherence unit anchors for content labels.
#[derive(Debug, Clone)]
pub struct AnchorTable {
    d: usize,
    p: usize,
    k: u32,
    /// Grid cell `x * p + y` -> channel.
    channel_of: Vec<usize>,
    seed: u64,
}

fn largest_prime_at_most(n: usize) -> Option<usize> {
    (2..=n).rev().find(|&c| (2..c).take_while(|f| f * f <= c).all(|f| c % f != 0))
}

impl AnchorTable {
    pub fn new(d: usize, seed: u64) -> Result<Self> {
        let root = (d as f64).sqrt().floor() as usize;
        let p = largest_prime_at_most(root)
            .ok_or_else(|| Error::Config(format!("d = {d} is too small for label anchors")))?;
        let mut k = 1u32;
        while (k as f64) / (p as f64) < ANCHOR_COHERENCE_LIMIT && (p as f64).powi(k as i32 + 1) <= 1e6 {
            k += 1;
        }
        let mut channel_of: Vec<usize> = (0..d).collect();
        let mut rng = ParamRng::new(seed, "anchor.channels");
        for i in (1..d).rev() {
            let j = rng.below(i + 1);
            channel_of.swap(i, j);
        }
        channel_of.truncate(p * p);
        Ok(Self {
            d,
            p,
            k,
            channel_of,
            seed,
        })
    }

    /// Number of distinct labels with guaranteed low coherence.
    pub fn capacity(&self) -> usize {
        self.p.pow(self.k)
    }

    /// Bound on `|cos|` between two distinct anchors.
    pub fn coherence_bound(&self) -> f64 {
        (self.k - 1) as f64 / self.p as f64
    }

    pub fn anchor(&self, label: u32) -> Result<Vec<f64>> {
        if label as usize >= self.capacity() {
            return Err(Error::Config(format!(
                "label {label} exceeds the anchor capacity {} for d = {}",
                self.capacity(),
                self.d
            )));
        }
        let p = self.p;
        let mut coeffs = Vec::with_capacity(self.k as usize);
        let mut rest = label as usize;
        for _ in 0..self.k {
            coeffs.push(rest % p);
            rest /= p;
        }
        let mut signs = ParamRng::indexed(self.seed, "anchor.signs", u64::from(label));
        let amp = 1.0 / (p as f64).sqrt();
        let mut v = vec![0.0; self.d];
        for x in 0..p {
            let y = coeffs.iter().rev().fold(0, |acc, c| (acc * x + c) % p);
            v[self.channel_of[x * p + y]] = amp * signs.sign();
        }
        Ok(v)
    }
}

/// Encodes a pose as `[x, y, z, cos h, sin h, 0, ...]` of width `d_g`.
pub fn encode_camera(pose: &[f64; 4], d_g: usize) -> Matrix {
    let mut v = vec![0.0; d_g];
    v[..3].copy_from_slice(&pose[..3]);
    v[3] = pose[3].cos();
    v[4] = pose[3].sin();
    Matrix::row_vector(&v)
}

/// Inverse of [`encode_camera`]; heading returned in `[0, 2π)`.
pub fn decode_camera(camera: &Matrix) -> [f64; 4] {
    let c = camera.row(0);
    let heading = c[4].atan2(c[3]).rem_euclid(std::f64::consts::TAU);
    [c[0], c[1], c[2], heading]
}

/// Frame encoders: label-anchored visual tokens, pose-conditioned geometry
/// tokens, and the camera token.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    dims: Dims,
    seed: u64,
    anchors: AnchorTable,
    /// `N_g x d_g` mixing of the camera token into each geometry token.
    pose_mix: Matrix,
}

impl FrameEncoder {
    pub fn new(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let anchors = AnchorTable::new(dims.d, seed)?;
        let pose_mix = ParamRng::new(seed, "encoder.pose_mix").normal_matrix(dims.n_g, dims.d_g, 1.0);
        Ok(Self {
            dims,
            seed,
            anchors,
            pose_mix,
        })
    }

    pub fn anchors(&self) -> &AnchorTable {
        &self.anchors
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    /// Noise-free visual tokens for a label; their token mean is the anchor.
    pub fn visual_base(&self, label: u32) -> Result<Matrix> {
        let anchor = self.anchors.anchor(label)?;
        let (n, d) = (self.dims.n_v(), self.dims.d);
        let pattern = ParamRng::indexed(self.seed, "encoder.pattern", u64::from(label)).normal_matrix(
            n,
            d,
            TOKEN_PATTERN_SCALE / (d as f64).sqrt(),
        );
        let centre = crate::numerics::token_mean(&pattern);
        let mut base = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                base.set(i, j, anchor[j] + pattern.get(i, j) - centre[j]);
            }
        }
        Ok(base)
    }

    pub fn embed_frame(&self, spec: &FrameSpec, frame_index: u64) -> Result<FrameInputs> {
        let (n, d) = (self.dims.n_v(), self.dims.d);
        let mut visual = self.visual_base(spec.content_label)?;
        if spec.noise_scale > 0.0 {
            let noise = ParamRng::indexed(self.seed, "encoder.noise", frame_index).normal_matrix(
                n,
                d,
                spec.noise_scale / (d as f64).sqrt(),
            );
            visual = visual.add(&noise)?;
        }
        let camera = encode_camera(&spec.camera_pose, self.dims.d_g);
        let label_geo = ParamRng::indexed(self.seed, "encoder.geometry", u64::from(spec.content_label)).normal_matrix(
            self.dims.n_g,
            self.dims.d_g,
            1.0 / (self.dims.d_g as f64).sqrt(),
        );
        let pose_term = self
            .pose_mix
            .mul_row_broadcast(&camera)?
            .scale(GEOMETRY_POSE_SCALE / (self.dims.d_g as f64).sqrt());
        Ok(FrameInputs {
            visual,
            geometry: label_geo.add(&pose_term)?,
            camera,
            frame_index,
            grid_h: self.dims.grid_h,
            grid_w: self.dims.grid_w,
        })
    }
}

pub fn embed_frame(spec: &FrameSpec, frame_index: u64, dims: &Dims, seed: u64) -> Result<FrameInputs> {
    FrameEncoder::new(*dims, seed)?.embed_frame(spec, frame_index)
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Pooled question embedding: a seeded unit vector per question label.
pub fn question_vector(question_label: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ParamRng::indexed(seed, "question", crate::numerics::stream_id(question_label));
    unit(rng.normal_vec(d))
}

/// Semantic embedding whose normalized similarity to the question equals the
/// frame's relevance strength: `c q̂ + √(1 − c²) û` with `c = 2ρ − 1` and `û ⟂ q̂`.
pub fn qformer_stub(spec: &FrameSpec, question_label: &str, d: usize, seed: u64) -> Vec<f64> {
    let q = question_vector(question_label, d, seed);
    let mut rng = ParamRng::indexed(seed, "qformer.distractor", u64::from(spec.content_label));
    let raw = rng.normal_vec(d);
    let along: f64 = raw.iter().zip(&q).map(|(a, b)| a * b).sum();
    let u = unit(raw.iter().zip(&q).map(|(a, b)| a - along * b).collect());
    let c = (2.0 * spec.relevance_strength - 1.0).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    q.iter().zip(&u).map(|(qa, ua)| c * qa + s * ua).collect()
}

pub fn init_params(seed: u64, dims: &Dims) -> Result<ParamBundle> {
    dims.validate()?;
    Ok(ParamBundle {
        cggf: CggfParams::random(seed, dims),
        fgcb: FgcbParams::random(seed, dims),
        sgeb: SgebParams::random(seed, dims),
        fusion: FusionParams::random(seed, dims),
    })
}
