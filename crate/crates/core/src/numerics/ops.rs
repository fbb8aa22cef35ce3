use crate::error::{Error, Result};

use super::Matrix;

/// Norm below which a vector is treated as zero by [`cosine_similarity`].
pub const ZERO_NORM: f64 = 1e-12;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if m.cols() == 0 || m.rows() == 0 {
        return Err(Error::Empty("empty input"));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Single-head `softmax(q kᵀ / √d) v`.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    if k.rows() == 0 {
        return Err(Error::Empty("empty key set"));
    }
    if q.cols() != k.cols() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("query width {}", k.cols()),
            format!("query width {}", q.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("{} value rows", k.rows()),
            format!("{} value rows", v.rows()),
        ));
    }
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let logits = q.matmul(&k.transpose())?.scale(scale);
    softmax_rows(&logits)?.matmul(v)
}

/// Multi-head attention over equal channel splits; `heads == 1` is [`scaled_dot_attention`].
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Result<Matrix> {
    if heads <= 1 {
        return scaled_dot_attention(q, k, v);
    }
    let d = q.cols();
    if d % heads != 0 || v.cols() % heads != 0 {
        return Err(Error::Config(format!(
            "head count {heads} does not divide widths {d} and {}",
            v.cols()
        )));
    }
    let (dh, dv) = (d / heads, v.cols() / heads);
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for h in 0..heads {
        let part = scaled_dot_attention(
            &q.col_slice(h * dh, (h + 1) * dh),
            &k.col_slice(h * dh, (h + 1) * dh),
            &v.col_slice(h * dv, (h + 1) * dv),
        )?;
        for i in 0..q.rows() {
            out.row_mut(i)[h * dv..(h + 1) * dv].copy_from_slice(part.row(i));
        }
    }
    Ok(out)
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector has norm below [`ZERO_NORM`].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity on unequal lengths");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na.sqrt() < ZERO_NORM || nb.sqrt() < ZERO_NORM {
        return 0.0;
    }
    // sqrt(na * nb) keeps self-similarity at exactly 1
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine mapped affinely onto `[0, 1]`.
pub fn normalized_similarity(a: &[f64], b: &[f64]) -> f64 {
    (cosine_similarity(a, b) + 1.0) / 2.0
}

/// Column-wise mean over tokens, as a `1 x d` matrix.
pub fn mean_pool_tokens(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Empty("empty token set"));
    }
    Ok(Matrix::row_vector(&token_mean(x)))
}

pub(crate) fn token_mean(x: &Matrix) -> Vec<f64> {
    let mut acc = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = x.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Adaptive average pooling of an `H x W` token grid down to `out_h x out_w`.
///
/// Output cell `(i, j)` averages input rows `[⌊iH/out_h⌋, ⌊(i+1)H/out_h⌋)` and
/// columns `[⌊jW/out_w⌋, ⌊(j+1)W/out_w⌋)`, so the blocks partition the grid.
pub fn grid_pool(x: &Matrix, grid_h: usize, grid_w: usize, out_h: usize, out_w: usize) -> Result<Matrix> {
    if x.rows() != grid_h * grid_w {
        return Err(Error::shape(
            "grid_pool",
            format!("{} tokens for a {grid_h}x{grid_w} grid", grid_h * grid_w),
            format!("{} tokens", x.rows()),
        ));
    }
    if out_h == 0 || out_w == 0 || out_h > grid_h || out_w > grid_w {
        return Err(Error::Config(format!(
            "pool {out_h}x{out_w} must be nonzero and fit inside grid {grid_h}x{grid_w}"
        )));
    }
    let d = x.cols();
    let mut out = Matrix::zeros(out_h * out_w, d);
    for i in 0..out_h {
        let (r0, r1) = (i * grid_h / out_h, (i + 1) * grid_h / out_h);
        for j in 0..out_w {
            let (c0, c1) = (j * grid_w / out_w, (j + 1) * grid_w / out_w);
            let cell = out.row_mut(i * out_w + j);
            for r in r0..r1 {
                for c in c0..c1 {
                    for (o, v) in cell.iter_mut().zip(x.row(r * grid_w + c)) {
                        *o += v;
                    }
                }
            }
            let count = ((r1 - r0) * (c1 - c0)) as f64;
            cell.iter_mut().for_each(|o| *o /= count);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&m(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&m(&[&[1000.0, 1000.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&m(&[&[1.0, 2.0, 3.0]])).unwrap();
        for (got, want) in s.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_rejects_empty() {
        let err = softmax_rows(&Matrix::zeros(1, 0)).unwrap_err();
        assert!(err.to_string().contains("empty input"));
    }

    #[test]
    fn attention_single_key_returns_value() {
        let q = m(&[&[0.3, -1.0], &[5.0, 2.0]]);
        let k = m(&[&[1.0, 2.0]]);
        let v = m(&[&[7.0, -3.0]]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[7.0, -3.0]);
        }
    }

    #[test]
    fn attention_identity_two_by_two() {
        let eye = Matrix::identity(2);
        let out = scaled_dot_attention(&eye, &eye, &eye).unwrap();
        // softmax([1/√2, 0]) by hand
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let hi = e / (e + 1.0);
        let lo = 1.0 / (e + 1.0);
        assert!((out.get(0, 0) - hi).abs() < 1e-12);
        assert!((out.get(0, 1) - lo).abs() < 1e-12);
        assert!((out.get(1, 0) - lo).abs() < 1e-12);
        assert!((out.get(1, 1) - hi).abs() < 1e-12);
    }

    #[test]
    fn attention_zero_query_averages_values() {
        let q = Matrix::zeros(2, 3);
        let k = m(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 2.0], &[4.0, 4.0, 4.0]]);
        let v = m(&[&[3.0, 0.0, 1.0], &[0.0, 6.0, 1.0], &[0.0, 0.0, 4.0]]);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for row in out.iter_rows() {
            for (got, want) in row.iter().zip([1.0, 2.0, 2.0]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rejects_empty_keys() {
        let err = scaled_dot_attention(&Matrix::zeros(1, 2), &Matrix::zeros(0, 2), &Matrix::zeros(0, 2)).unwrap_err();
        assert!(err.to_string().contains("empty key set"));
    }

    #[test]
    fn multi_head_matches_per_head_attention() {
        let q = m(&[&[0.1, 0.2, 0.3, 0.4]]);
        let k = m(&[&[1.0, 0.0, 0.5, -0.5], &[0.0, 1.0, -1.0, 2.0]]);
        let v = m(&[&[1.0, 2.0, 3.0, 4.0], &[-1.0, -2.0, -3.0, -4.0]]);
        let out = attention(&q, &k, &v, 2).unwrap();
        let left = scaled_dot_attention(&q.col_slice(0, 2), &k.col_slice(0, 2), &v.col_slice(0, 2)).unwrap();
        let right = scaled_dot_attention(&q.col_slice(2, 4), &k.col_slice(2, 4), &v.col_slice(2, 4)).unwrap();
        assert_eq!(&out.row(0)[..2], left.row(0));
        assert_eq!(&out.row(0)[2..], right.row(0));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]) - 0.70711).abs() < 1e-5);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine_similarity(&[1e-13, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(mean_pool_tokens(&m(&[&[4.0, 5.0]])).unwrap().data(), &[4.0, 5.0]);
        assert_eq!(mean_pool_tokens(&m(&[&[0.0, 2.0], &[2.0, 0.0]])).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(
            mean_pool_tokens(&m(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]])).unwrap().data(),
            &[2.0, 2.0]
        );
        assert!(mean_pool_tokens(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn grid_pool_identity_and_global_mean() {
        let x = m(&[&[1.0], &[2.0], &[3.0], &[4.0]]);
        assert_eq!(grid_pool(&x, 2, 2, 2, 2).unwrap(), x);
        assert_eq!(grid_pool(&x, 2, 2, 1, 1).unwrap().data(), &[2.5]);
    }

    #[test]
    fn grid_pool_blocks_match_direct_summation() {
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let out = grid_pool(&x, 4, 4, 2, 2).unwrap();
        for bi in 0..2 {
            for bj in 0..2 {
                let mut sum = [0.0; 2];
                for r in 2 * bi..2 * bi + 2 {
                    for c in 2 * bj..2 * bj + 2 {
                        sum[0] += rows[r * 4 + c][0];
                        sum[1] += rows[r * 4 + c][1];
                    }
                }
                assert_eq!(out.row(bi * 2 + bj), &[sum[0] / 4.0, sum[1] / 4.0]);
            }
        }
    }

    #[test]
    fn grid_pool_rejects_bad_token_count() {
        assert!(grid_pool(&Matrix::zeros(5, 1), 2, 2, 1, 1).is_err());
        assert!(grid_pool(&Matrix::zeros(4, 1), 2, 2, 3, 1).is_err());
    }
}
