//! Camera-guided geometry fusion.
//!
//! Visual tokens attend to camera-conditioned geometry tokens; the attended
//! residual is projected and injected through a camera-driven SwiGLU channel
//! gate. The output is the geometry-aware feature consumed by both banks.

use serde::{Deserialize, Serialize};

use crate::dims::Dims;
use crate::error::{Error, Result};
use crate::numerics::{attention, silu, Activation, Linear, Matrix, MlpParams, ParamRng};

/// Per-frame encoder outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInputs {
    /// `N_v x d` visual tokens.
    pub visual: Matrix,
    /// `N_g x d_g` geometry tokens.
    pub geometry: Matrix,
    /// `1 x d_g` camera token.
    pub camera: Matrix,
    pub frame_index: u64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl FrameInputs {
    pub fn validate(&self) -> Result<()> {
        if self.visual.rows() == 0 {
            return Err(Error::Empty("no visual tokens"));
        }
        if self.geometry.rows() == 0 {
            return Err(Error::Empty("no geometry tokens"));
        }
        if self.grid_h * self.grid_w != self.visual.rows() {
            return Err(Error::shape(
                "FrameInputs",
                format!("grid {}x{} tokens", self.grid_h, self.grid_w),
                format!("{} visual tokens", self.visual.rows()),
            ));
        }
        if self.camera.rows() != 1 || self.camera.cols() != self.geometry.cols() {
            return Err(Error::shape(
                "FrameInputs",
                format!("camera 1x{}", self.geometry.cols()),
                format!("{}x{}", self.camera.rows(), self.camera.cols()),
            ));
        }
        if !(self.visual.is_finite() && self.geometry.is_finite() && self.camera.is_finite()) {
            return Err(Error::Config("non-finite frame input".into()));
        }
        Ok(())
    }
}

/// Camera-calibrated frame feature shared by both memory banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoAwareFeature {
    /// `N_v x d`.
    pub feature: Matrix,
    pub camera: Matrix,
    pub frame_index: u64,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl GeoAwareFeature {
    /// Skips fusion entirely; used when the geometry branch is switched off.
    pub fn visual_only(inputs: &FrameInputs) -> Self {
        Self {
            feature: inputs.visual.clone(),
            camera: inputs.camera.clone(),
            frame_index: inputs.frame_index,
            grid_h: inputs.grid_h,
            grid_w: inputs.grid_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CggfParams {
    /// d_g -> d
    pub proj_g: Linear,
    /// d_g -> d
    pub proj_c: Linear,
    /// 2d -> d
    pub mlp_b: MlpParams,
    /// d -> 1, sigmoid output
    pub mlp_r: MlpParams,
    pub proj_q: Linear,
    pub proj_k: Linear,
    pub proj_v: Linear,
    pub proj_o: Linear,
    /// d_g -> 2d, split into SwiGLU halves
    pub proj_cv: Linear,
    pub head_count: usize,
}

impl CggfParams {
    pub fn random(seed: u64, dims: &Dims) -> Self {
        let (d, dg) = (dims.d, dims.d_g);
        let rng = |name: &str| ParamRng::new(seed, &format!("cggf.{name}"));
        Self {
            proj_g: Linear::random(&mut rng("proj_g"), dg, d, false),
            proj_c: Linear::random(&mut rng("proj_c"), dg, d, false),
            mlp_b: MlpParams::two_layer(&mut rng("mlp_b"), 2 * d, d, Activation::Identity),
            mlp_r: MlpParams::two_layer(&mut rng("mlp_r"), d, 1, Activation::Sigmoid),
            proj_q: Linear::random(&mut rng("proj_q"), d, d, false),
            proj_k: Linear::random(&mut rng("proj_k"), d, d, false),
            proj_v: Linear::random(&mut rng("proj_v"), d, d, false),
            proj_o: Linear::random(&mut rng("proj_o"), d, d, false),
            proj_cv: Linear::random(&mut rng("proj_cv"), dg, 2 * d, false),
            head_count: dims.head_count,
        }
    }

    pub fn width(&self) -> usize {
        self.proj_q.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.proj_q.in_dim();
        let dg = self.proj_g.in_dim();
        let checks: [(&str, usize, usize); 12] = [
            ("proj_g out", self.proj_g.out_dim(), d),
            ("proj_c in", self.proj_c.in_dim(), dg),
            ("proj_c out", self.proj_c.out_dim(), d),
            ("mlp_b in", self.mlp_b.in_dim(), 2 * d),
            ("mlp_b out", self.mlp_b.out_dim(), d),
            ("mlp_r in", self.mlp_r.in_dim(), d),
            ("mlp_r out", self.mlp_r.out_dim(), 1),
            ("proj_q out", self.proj_q.out_dim(), d),
            ("proj_k", self.proj_k.in_dim() * self.proj_k.out_dim(), d * d),
            ("proj_v", self.proj_v.in_dim() * self.proj_v.out_dim(), d * d),
            ("proj_o", self.proj_o.in_dim() * self.proj_o.out_dim(), d * d),
            ("proj_cv in", self.proj_cv.in_dim(), dg),
        ];
        for (name, got, expected) in checks {
            if got != expected {
                return Err(Error::shape("CggfParams", format!("{name} = {expected}"), got));
            }
        }
        if self.proj_cv.out_dim() != 2 * d {
            return Err(Error::Config(format!(
                "SwiGLU projection must map to 2d = {}, got {}",
                2 * d,
                self.proj_cv.out_dim()
            )));
        }
        Ok(())
    }
}

/// Key bias `b_g` (`N_g x d`) and reliability gate `r_g` (`N_g x 1`).
pub fn geometry_bias_gate(f_g: &Matrix, f_c: &Matrix, p: &CggfParams) -> Result<(Matrix, Matrix)> {
    let geo = p.proj_g.apply(f_g)?;
    let cam = p.proj_c.apply(f_c)?.repeat_rows(f_g.rows())?;
    let b_g = p.mlp_b.forward(&geo.hcat(&cam)?)?;
    let r_g = p.mlp_r.forward(&geo)?;
    Ok((b_g, r_g))
}

/// Attention of projected visual queries over bias-shifted, reliability-gated geometry.
pub fn geometry_residual(f_v: &Matrix, f_g: &Matrix, b_g: &Matrix, r_g: &Matrix, p: &CggfParams) -> Result<Matrix> {
    if f_g.rows() == 0 {
        return Err(Error::Empty("no geometry tokens"));
    }
    let q = p.proj_q.apply(f_v)?;
    let geo = p.proj_g.apply(f_g)?;
    let k = p.proj_k.apply(&geo)?.add(b_g)?;
    let v = p.proj_v.apply(&geo)?.add(b_g)?.mul_col_broadcast(r_g)?;
    attention(&q, &k, &v, p.head_count)
}

/// `a ⊙ SiLU(b)` where `[a ; b]` is the 2d camera projection.
pub fn swiglu_camera_gate(f_c: &Matrix, p: &CggfParams) -> Result<Matrix> {
    let proj = p.proj_cv.apply(f_c)?;
    if proj.cols() % 2 != 0 {
        return Err(Error::Config(format!("odd SwiGLU projection width {}", proj.cols())));
    }
    let half = proj.cols() / 2;
    let a = proj.col_slice(0, half);
    let b = proj.col_slice(half, proj.cols());
    a.hadamard(&b.map(silu))
}

pub fn fuse_geometry(inputs: &FrameInputs, p: &CggfParams) -> Result<GeoAwareFeature> {
    inputs.validate()?;
    let (b_g, r_g) = geometry_bias_gate(&inputs.geometry, &inputs.camera, p)?;
    let residual = geometry_residual(&inputs.visual, &inputs.geometry, &b_g, &r_g, p)?;
    let gate = swiglu_camera_gate(&inputs.camera, p)?;
    let injected = p.proj_o.apply(&residual)?.mul_row_broadcast(&gate)?;
    Ok(GeoAwareFeature {
        feature: inputs.visual.add(&injected)?,
        camera: inputs.camera.clone(),
        frame_index: inputs.frame_index,
        grid_h: inputs.grid_h,
        grid_w: inputs.grid_w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m<const C: usize>(rows: &[[f64; C]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// d = d_g = 2 parameters with every projection set to the identity.
    fn identity_params() -> CggfParams {
        let eye = Linear::projection(Matrix::identity(2));
        let mlp_b = MlpParams::single(
            Linear::new(
                m(&[[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, -1.0]]),
                Some(vec![0.5, 0.0]),
            )
            .unwrap(),
            Activation::Identity,
        );
        let mlp_r = MlpParams::single(Linear::zeros(2, 1, true), Activation::Sigmoid);
        let proj_cv = Linear::projection(m(&[[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]));
        CggfParams {
            proj_g: eye.clone(),
            proj_c: eye.clone(),
            mlp_b,
            mlp_r,
            proj_q: eye.clone(),
            proj_k: eye.clone(),
            proj_v: eye.clone(),
            proj_o: eye,
            proj_cv,
            head_count: 1,
        }
    }

    fn frame(visual: Matrix, geometry: Matrix, camera: Matrix) -> FrameInputs {
        let n = visual.rows();
        FrameInputs {
            visual,
            geometry,
            camera,
            frame_index: 1,
            grid_h: n,
            grid_w: 1,
        }
    }

    #[test]
    fn zero_reliability_mlp_gives_half() {
        let p = identity_params();
        let (_, r) = geometry_bias_gate(&m(&[[3.0, -1.0], [0.0, 2.0]]), &m(&[[1.0, 1.0]]), &p).unwrap();
        assert_eq!(r.data(), &[0.5, 0.5]);
    }

    #[test]
    fn bias_gate_hand_computation() {
        let p = identity_params();
        let (b, _) = geometry_bias_gate(&m(&[[1.0, 2.0]]), &m(&[[3.0, 4.0]]), &p).unwrap();
        // [1, 2, 3, 4] x W + [0.5, 0] = [1 + 6 + 0.5, 2 - 4]
        assert_eq!(b.data(), &[7.5, -2.0]);
    }

    #[test]
    fn zero_camera_reduces_to_geometry_only_input() {
        let p = identity_params();
        let f_g = m(&[[1.0, -2.0], [0.5, 0.25]]);
        let (b, _) = geometry_bias_gate(&f_g, &m(&[[0.0, 0.0]]), &p).unwrap();
        let want = p.mlp_b.forward(&f_g.hcat(&Matrix::zeros(2, 2)).unwrap()).unwrap();
        assert_eq!(b, want);
    }

    #[test]
    fn residual_vanishes_when_reliability_is_zero() {
        let p = identity_params();
        let f_g = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = m(&[[0.3, 0.3], [0.1, 0.2]]);
        let r = Matrix::zeros(2, 1);
        let out = geometry_residual(&m(&[[1.0, 2.0], [3.0, 4.0]]), &f_g, &b, &r, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_single_geometry_token_copies_gated_value() {
        let p = identity_params();
        let f_g = m(&[[2.0, -1.0]]);
        let b = m(&[[1.0, 1.0]]);
        let r = m(&[[0.25]]);
        let out = geometry_residual(&m(&[[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]]), &f_g, &b, &r, &p).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[0.75, 0.0]);
        }
    }

    #[test]
    fn residual_rejects_missing_geometry() {
        let p = identity_params();
        let err = geometry_residual(&Matrix::zeros(1, 2), &Matrix::zeros(0, 2), &Matrix::zeros(0, 2), &Matrix::zeros(0, 1), &p)
            .unwrap_err();
        assert!(err.to_string().contains("no geometry tokens"));
    }

    #[test]
    fn residual_matches_dense_attention_by_hand() {
        let p = identity_params();
        let f_v = m(&[[1.0, 0.0], [0.0, 2.0]]);
        let f_g = m(&[[1.0, 1.0], [-1.0, 0.5]]);
        let b = m(&[[0.0, 0.5], [0.5, 0.0]]);
        let r = m(&[[0.5], [1.0]]);
        let out = geometry_residual(&f_v, &f_g, &b, &r, &p).unwrap();
        let keys = [[1.0, 1.5], [-0.5, 0.5]];
        let vals = [[0.5, 0.75], [-0.5, 0.5]];
        for i in 0..2 {
            let q = f_v.row(i);
            let logits: Vec<f64> = keys
                .iter()
                .map(|k| (q[0] * k[0] + q[1] * k[1]) / 2f64.sqrt())
                .collect();
            let mx = logits[0].max(logits[1]);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z = e[0] + e[1];
            for c in 0..2 {
                let want = (e[0] * vals[0][c] + e[1] * vals[1][c]) / z;
                assert!((out.get(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swiglu_examples() {
        let p = identity_params();
        assert_eq!(swiglu_camera_gate(&m(&[[0.0, 0.0]]), &p).unwrap().data(), &[0.0, 0.0]);

        let mut ones_a = identity_params();
        ones_a.proj_cv = Linear::new(Matrix::zeros(2, 4), Some(vec![1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(swiglu_camera_gate(&m(&[[5.0, 7.0]]), &ones_a).unwrap().data(), &[0.0, 0.0]);

        // a = [1, 2], b = [1, 2]
        let g = swiglu_camera_gate(&m(&[[1.0, 2.0]]), &p).unwrap();
        let s = |x: f64| x / (1.0 + (-x).exp());
        assert!((g.get(0, 0) - s(1.0)).abs() < 1e-15);
        assert!((g.get(0, 1) - 2.0 * s(2.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_gate_is_exact_passthrough() {
        let mut p = CggfParams::random(11, &Dims { d: 4, d_g: 5, ..Dims::desk() });
        p.proj_cv = Linear::zeros(5, 8, false);
        let mut rng = ParamRng::new(1, "frame");
        let inputs = FrameInputs {
            visual: rng.normal_matrix(16, 4, 1.0),
            geometry: rng.normal_matrix(3, 5, 1.0),
            camera: rng.normal_matrix(1, 5, 1.0),
            frame_index: 1,
            grid_h: 4,
            grid_w: 4,
        };
        assert_eq!(fuse_geometry(&inputs, &p).unwrap().feature, inputs.visual);
    }

    #[test]
    fn zero_reliability_is_exact_passthrough() {
        let mut p = identity_params();
        p.mlp_r = MlpParams::single(Linear::new(Matrix::zeros(2, 1), Some(vec![-1e4])).unwrap(), Activation::Sigmoid);
        let inputs = frame(m(&[[1.0, 2.0], [3.0, -4.0]]), m(&[[1.0, 0.0]]), m(&[[0.5, 0.5]]));
        // sigmoid(-1e4) underflows to zero
        assert_eq!(fuse_geometry(&inputs, &p).unwrap().feature, inputs.visual);
    }

    #[test]
    fn rejects_grid_mismatch() {
        let p = identity_params();
        let mut inputs = frame(m(&[[1.0, 2.0], [3.0, -4.0]]), m(&[[1.0, 0.0]]), m(&[[0.5, 0.5]]));
        inputs.grid_w = 3;
        assert!(fuse_geometry(&inputs, &p).is_err());
    }

    #[test]
    fn random_params_validate() {
        CggfParams::random(3, &Dims::desk()).validate().unwrap();
    }
}
