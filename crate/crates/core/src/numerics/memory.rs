use crate::error::{Error, Result};

use super::{softmax_rows, Linear, Matrix};

/// Stored tokens read with a scalar added to every key channel and a scalar
/// multiplying every value channel.
#[derive(Debug, Clone, Copy)]
pub struct MemoryBlock<'a> {
    pub tokens: &'a Matrix,
    pub key_shift: f64,
    pub value_scale: f64,
}

/// Evaluates
///
/// `attention(x W_q, vcat(t W_k + b_k + s), vcat((t W_v + b_v) a), heads)`
///
/// without projecting the stored tokens. Per head, the queries are pulled back
/// through `W_k` and the attention-weighted tokens pushed forward through
/// `W_v`, so the cost is linear in the memory size times the input width
/// instead of times the squared width.
pub fn memory_attention(
    x: &Matrix,
    blocks: &[MemoryBlock<'_>],
    wq: &Linear,
    wk: &Linear,
    wv: &Linear,
    heads: usize,
) -> Result<Matrix> {
    if blocks.is_empty() {
        return Err(Error::Empty("empty key set"));
    }
    let d_in = wk.in_dim();
    if wv.in_dim() != d_in {
        return Err(Error::shape("memory_attention", format!("value input width {d_in}"), wv.in_dim()));
    }
    if let Some(b) = blocks.iter().find(|b| b.tokens.cols() != d_in) {
        return Err(Error::shape("memory_attention", format!("memory width {d_in}"), b.tokens.cols()));
    }
    let q = wq.apply(x)?;
    if q.cols() != wk.out_dim() {
        return Err(Error::shape("memory_attention", format!("query width {}", wk.out_dim()), q.cols()));
    }
    let heads = heads.max(1);
    let (dk, dv) = (q.cols(), wv.out_dim());
    if dk % heads != 0 || dv % heads != 0 {
        return Err(Error::Config(format!("head count {heads} does not divide widths {dk} and {dv}")));
    }
    let (hk, hv) = (dk / heads, dv / heads);

    let tokens: Vec<Matrix> = blocks.iter().map(|b| b.tokens.clone()).collect();
    let memory = Matrix::vcat(&tokens)?;
    let memory_t = memory.transpose();
    let mut shift = Vec::with_capacity(memory.rows());
    let mut scale = Vec::with_capacity(memory.rows());
    for b in blocks {
        shift.extend(std::iter::repeat(b.key_shift).take(b.tokens.rows()));
        scale.extend(std::iter::repeat(b.value_scale).take(b.tokens.rows()));
    }

    let mut out = Matrix::zeros(x.rows(), dv);
    for h in 0..heads {
        let qh = q.col_slice(h * hk, (h + 1) * hk);
        let pulled = qh.matmul(&wk.weight.col_slice(h * hk, (h + 1) * hk).transpose())?;
        let mut logits = pulled.matmul(&memory_t)?;
        let norm = 1.0 / (hk as f64).sqrt();
        for i in 0..qh.rows() {
            let q_row = qh.row(i);
            let q_sum: f64 = q_row.iter().sum();
            let q_bias: f64 = wk
                .bias
                .as_ref()
                .map_or(0.0, |b| q_row.iter().zip(&b[h * hk..(h + 1) * hk]).map(|(a, c)| a * c).sum());
            for (l, s) in logits.row_mut(i).iter_mut().zip(&shift) {
                *l = (*l + q_bias + q_sum * s) * norm;
            }
        }
        let mut weights = softmax_rows(&logits)?;
        for i in 0..weights.rows() {
            for (w, a) in weights.row_mut(i).iter_mut().zip(&scale) {
                *w *= a;
            }
        }
        let mut part = weights.matmul(&memory)?.matmul(&wv.weight.col_slice(h * hv, (h + 1) * hv))?;
        if let Some(b) = &wv.bias {
            for i in 0..part.rows() {
                let mass: f64 = weights.row(i).iter().sum();
                for (p, c) in part.row_mut(i).iter_mut().zip(&b[h * hv..(h + 1) * hv]) {
                    *p += mass * c;
                }
            }
        }
        for i in 0..x.rows() {
            out.row_mut(i)[h * hv..(h + 1) * hv].copy_from_slice(part.row(i));
        }
    }
    Ok(out)
}
