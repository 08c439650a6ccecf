use crate::num::Real;

/// Moment buffers, laid out like the parameter list they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().map(|g| {
        let g = g.to_f64_lossy();
        g * g
    }).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

impl<T: Real> Adam<T> {
    pub fn new(sizes: &[usize], lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            state: AdamState {
                step: 0,
                m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
                v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            },
        }
    }

    pub fn for_params(params: &[&[T]], lr: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(&sizes, lr, eps)
    }

    /// Clips `grads` to `max_norm` (if given) and applies one bias-corrected
    /// update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &mut [Vec<T>], max_norm: Option<f64>) -> f64 {
        assert_eq!(params.len(), self.state.m.len(), "parameter list does not match optimizer state");
        assert_eq!(grads.len(), params.len(), "gradient list does not match parameters");
        let norm = match max_norm {
            Some(c) => clip_global_norm(grads, c),
            None => grads.iter().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt(),
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (i, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.state.m[i], &mut self.state.v[i], &grads[i]);
            assert_eq!(p.len(), g.len());
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        norm
    }
}
