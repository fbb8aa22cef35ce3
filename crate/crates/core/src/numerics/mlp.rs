use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ops, Matrix, ParamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Silu,
    Sigmoid,
}

impl Activation {
    fn apply(self, m: &Matrix) -> Matrix {
        match self {
            Activation::Identity => m.clone(),
            Activation::Silu => m.map(ops::silu),
            Activation::Sigmoid => m.map(ops::sigmoid),
        }
    }
}

/// Affine map `x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weight.cols() {
                return Err(Error::shape("Linear::new", format!("bias of {}", weight.cols()), b.len()));
            }
        }
        Ok(Self { weight, bias })
    }

    /// Bias-free projection.
    pub fn projection(weight: Matrix) -> Self {
        Self { weight, bias: None }
    }

    pub fn random(rng: &mut ParamRng, in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        let weight = rng.uniform_matrix(in_dim, out_dim, in_dim);
        let bias = with_bias.then(|| rng.uniform_matrix(1, out_dim, in_dim).into_data());
        Self { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, with_bias: bool) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: with_bias.then(|| vec![0.0; out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            for r in 0..y.rows() {
                for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
        Ok(y)
    }
}

/// Stack of affine layers with an activation after each hidden layer and an
/// output activation after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Linear>,
    hidden: Vec<Activation>,
    output: Activation,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>, hidden: Vec<Activation>, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("mlp with zero layers"));
        }
        if hidden.len() + 1 != layers.len() {
            return Err(Error::Config(format!(
                "{} layers need {} hidden activations, got {}",
                layers.len(),
                layers.len() - 1,
                hidden.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Layer {
                    layer: i + 1,
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers, hidden, output })
    }

    /// Two affine layers, hidden width equal to the input width, SiLU in between.
    pub fn two_layer(rng: &mut ParamRng, in_dim: usize, out_dim: usize, output: Activation) -> Self {
        let layers = vec![
            Linear::random(rng, in_dim, in_dim, true),
            Linear::random(rng, in_dim, out_dim, true),
        ];
        Self {
            layers,
            hidden: vec![Activation::Silu],
            output,
        }
    }

    pub fn single(layer: Linear, output: Activation) -> Self {
        Self {
            layers: vec![layer],
            hidden: Vec::new(),
            output,
        }
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn hidden(&self) -> &[Activation] {
        &self.hidden
    }

    pub fn output(&self) -> Activation {
        self.output
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if h.cols() != layer.in_dim() {
                return Err(Error::Layer {
                    layer: i,
                    expected: layer.in_dim(),
                    got: h.cols(),
                });
            }
            h = layer.apply(&h)?;
            let act = self.hidden.get(i).copied().unwrap_or(self.output);
            h = act.apply(&h);
        }
        Ok(h)
    }
}

pub fn mlp_forward(p: &MlpParams, x: &Matrix) -> Result<Matrix> {
    p.forward(x)
}
