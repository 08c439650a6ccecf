use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major `rows x cols` matrix with orthonormal rows (or columns, when
/// `rows > cols`) scaled by `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (r, c) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut a: Vec<f64> = (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // Modified Gram-Schmidt over the `r` short-side vectors of length `c`.
    for i in 0..r {
        for j in 0..i {
            let dot: f64 = (0..c).map(|k| a[i * c + k] * a[j * c + k]).sum();
            for k in 0..c {
                a[i * c + k] -= dot * a[j * c + k];
            }
        }
        let n = (0..c).map(|k| a[i * c + k].powi(2)).sum::<f64>().sqrt();
        if n > 1e-12 {
            for k in 0..c {
                a[i * c + k] /= n;
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        for k in 0..c {
            let v = gain * a[i * c + k];
            if rows <= cols {
                out[i * cols + k] = v;
            } else {
                out[k * cols + i] = v;
            }
        }
    }
    out
}
