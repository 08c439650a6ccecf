//! Prototype assignment, Sinkhorn targets and the two HIO losses.

use thiserror::Error;

use crate::nn::l2_normalize_rows;
use crate::num::{gemm, Real};

#[derive(Debug, Error, PartialEq)]
pub enum SinkhornError {
    #[error("degenerate score row {0}")]
    DegenerateRow(usize),
    #[error("score matrix has {got} values, expected {rows}x{cols}")]
    Shape { got: usize, rows: usize, cols: usize },
}

/// Smallest probability fed to the log in [`swav_loss`].
pub const LOG_FLOOR: f64 = 1e-12;

/// `S = L E^T` for row-normalized latents `L` (B x d) and prototypes `E` (K x d).
pub fn prototype_scores<T: Real>(latents: &[T], protos: &[T], dim: usize) -> Vec<T> {
    let b = latents.len() / dim;
    let k = protos.len() / dim;
    let mut s = vec![T::zero(); b * k];
    gemm(false, true, b, k, dim, T::one(), latents, protos, T::zero(), &mut s);
    s
}

/// Row-wise softmax of `scores / tau`.
pub fn softmax_rows<T: Real>(scores: &[T], k: usize, tau: f64) -> Vec<T> {
    let inv = T::lit(1.0 / tau);
    let mut p = vec![T::zero(); scores.len()];
    for (row, out) in scores.chunks_exact(k).zip(p.chunks_exact_mut(k)) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for (o, &s) in out.iter_mut().zip(row) {
            *o = ((s - m) * inv).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }
    p
}

/// Assignment probabilities of latents to prototypes: softmax over the
/// temperature of cosine similarities (both sides are L2-normalized first).
pub fn assign_probs<T: Real>(latents: &[T], protos: &[T], dim: usize, tau: f64) -> Vec<T> {
    let k = protos.len() / dim;
    let (mut l, mut e) = (latents.to_vec(), protos.to_vec());
    l2_normalize_rows(&mut l, dim);
    l2_normalize_rows(&mut e, dim);
    softmax_rows(&prototype_scores(&l, &e, dim), k, tau)
}

/// Equipartitioned soft assignment of `b` samples to `k` prototypes.
///
/// Starts from `exp(scores / eps)`, alternates column normalization (to mass
/// 1/K each) and row normalization (to 1/B each) `n_iter` times, then scales
/// rows to sum to one. Runs in f64 internally.
pub fn sinkhorn<T: Real>(scores: &[T], b: usize, k: usize, eps: f64, n_iter: usize) -> Result<Vec<T>, SinkhornError> {
    if scores.len() != b * k || b == 0 || k == 0 {
        return Err(SinkhornError::Shape { got: scores.len(), rows: b, cols: k });
    }
    let s: Vec<f64> = scores.iter().map(|v| v.to_f64_lossy()).collect();
    for (r, row) in s.chunks_exact(k).enumerate() {
        if row.iter().any(|v| v.is_nan()) || row.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(SinkhornError::DegenerateRow(r));
        }
    }
    let max = s.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let max = if max.is_finite() { max } else { 0.0 };
    let mut q: Vec<f64> = s.iter().map(|&v| ((v - max) / eps).exp()).collect();
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter_mut().for_each(|v| *v /= total);
    }
    let (col_mass, row_mass) = (1.0 / k as f64, 1.0 / b as f64);
    let mut col = vec![0.0; k];
    for _ in 0..n_iter {
        col.iter_mut().for_each(|c| *c = 0.0);
        for row in q.chunks_exact(k) {
            for (c, v) in col.iter_mut().zip(row) {
                *c += v;
            }
        }
        for row in q.chunks_exact_mut(k) {
            for (v, c) in row.iter_mut().zip(&col) {
                if *c > 0.0 {
                    *v *= col_mass / c;
                }
            }
        }
        for row in q.chunks_exact_mut(k) {
            let r: f64 = row.iter().sum();
            if r > 0.0 {
                row.iter_mut().for_each(|v| *v *= row_mass / r);
            }
        }
    }
    // Final rescale so each row is a distribution.
    for (i, row) in q.chunks_exact_mut(k).enumerate() {
        let r: f64 = row.iter().sum();
        if !(r > 0.0) {
            return Err(SinkhornError::DegenerateRow(i));
        }
        row.iter_mut().for_each(|v| *v /= r);
    }
    Ok(q.into_iter().map(T::lit).collect())
}

/// Swapped prediction loss
/// `-(1/2B) sum_b (q_s . log p_t + q_t . log p_s)`.
pub fn swav_loss<T: Real>(p_source: &[T], p_target: &[T], q_source: &[T], q_target: &[T], k: usize) -> T {
    let b = p_source.len() / k;
    let floor = T::lit(LOG_FLOOR);
    let mut acc = T::zero();
    for i in 0..b * k {
        if q_source[i] != T::zero() {
            acc += q_source[i] * p_target[i].max(floor).ln();
        }
        if q_target[i] != T::zero() {
            acc += q_target[i] * p_source[i].max(floor).ln();
        }
    }
    (T::zero() - acc) / T::lit(2.0 * b as f64)
}

/// Gradients of [`swav_loss`] with respect to the raw scores `S_source` and
/// `S_target` (before division by the temperature).
pub fn swav_score_grads<T: Real>(
    p_source: &[T],
    p_target: &[T],
    q_source: &[T],
    q_target: &[T],
    k: usize,
    tau: f64,
) -> (Vec<T>, Vec<T>) {
    let b = p_source.len() / k;
    let c = T::lit(1.0 / (2.0 * b as f64 * tau));
    let ds = p_source.iter().zip(q_target).map(|(&p, &q)| (p - q) * c).collect();
    let dt = p_target.iter().zip(q_source).map(|(&p, &q)| (p - q) * c).collect();
    (ds, dt)
}

/// Mean squared error over every component.
pub fn velocity_loss<T: Real>(pred: &[T], truth: &[T]) -> T {
    assert_eq!(pred.len(), truth.len());
    if pred.is_empty() {
        return T::zero();
    }
    let s: T = pred.iter().zip(truth).map(|(&a, &b)| (a - b) * (a - b)).sum();
    s / T::lit(pred.len() as f64)
}

pub fn velocity_loss_grad<T: Real>(pred: &[T], truth: &[T]) -> Vec<T> {
    let c = T::lit(2.0 / pred.len().max(1) as f64);
    pred.iter().zip(truth).map(|(&a, &b)| (a - b) * c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_sinkhorn(s: &[Vec<f64>], eps: f64, iters: usize) -> Vec<Vec<f64>> {
        let b = s.len();
        let k = s[0].len();
        let mut q: Vec<Vec<f64>> = s.iter().map(|r| r.iter().map(|v| (v / eps).exp()).collect()).collect();
        let tot: f64 = q.iter().flatten().sum();
        for r in q.iter_mut() {
            for v in r.iter_mut() {
                *v /= tot;
            }
        }
        for _ in 0..iters {
            for j in 0..k {
                let c: f64 = (0..b).map(|i| q[i][j]).sum();
                for i in 0..b {
                    q[i][j] /= c * k as f64;
                }
            }
            for r in q.iter_mut() {
                let t: f64 = r.iter().sum();
                for v in r.iter_mut() {
                    *v /= t * b as f64;
                }
            }
        }
        for r in q.iter_mut() {
            let t: f64 = r.iter().sum();
            for v in r.iter_mut() {
                *v /= t;
            }
        }
        q
    }

    #[test]
    fn constant_scores_give_uniform_targets() {
        let q = sinkhorn(&[0.3f64; 8 * 4], 8, 4, 0.05, 3).unwrap();
        assert!(q.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_by_two_matches_loop_oracle() {
        let s = [1.0f64, 0.0, 0.0, 1.0];
        let q = sinkhorn(&s, 2, 2, 0.05, 3).unwrap();
        let want = naive_sinkhorn(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.05, 3);
        for i in 0..2 {
            for j in 0..2 {
                assert!((q[i * 2 + j] - want[i][j]).abs() < 1e-6);
            }
        }
        assert!(q[0] > 0.99 && q[3] > 0.99);
    }

    #[test]
    fn all_negative_infinity_row_is_rejected() {
        let s = [0.0f64, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY];
        assert_eq!(sinkhorn(&s, 2, 2, 0.05, 3), Err(SinkhornError::DegenerateRow(1)));
    }

    #[test]
    fn orthogonal_prototype_softmax() {
        let k = 16;
        let mut protos = vec![0.0f64; k * k];
        for i in 0..k {
            protos[i * k + i] = 1.0;
        }
        let mut l = vec![0.0f64; k];
        l[0] = 1.0;
        let p = assign_probs(&l, &protos, k, 1.0);
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 15.0)).abs() < 1e-15);
        assert!((p[0] - 0.1534168).abs() < 1e-6);
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let p = assign_probs(&[0.6f64, 0.8], &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0], 2, 1e6);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn swav_loss_closed_forms() {
        let k = 16;
        let b = 4;
        let mut one_hot = vec![0.0f64; b * k];
        for i in 0..b {
            one_hot[i * k + (i * 3) % k] = 1.0;
        }
        assert_eq!(swav_loss(&one_hot, &one_hot, &one_hot, &one_hot, k), 0.0);
        let u = vec![1.0 / k as f64; b * k];
        assert!((swav_loss(&u, &u, &u, &u, k) - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn velocity_loss_offset() {
        let pred = [1.0f64, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!((velocity_loss(&pred, &[0.0; 6]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(velocity_loss(&pred, &pred), 0.0);
    }
}
