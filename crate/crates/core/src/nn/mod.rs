//! Dense networks with hand-written reverse mode.

mod adam;
mod init;

pub use adam::{clip_global_norm, Adam, AdamState};
pub use init::orthogonal;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{gemm, Real};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input has {got} values, expected a multiple of {dim}")]
    InputDim { got: usize, dim: usize },
    #[error("gradient has {got} values, expected {want}")]
    GradDim { got: usize, want: usize },
    #[error("array `{0}` has the wrong shape")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative written in terms of the activation output.
    #[inline]
    fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Elu => {
                if y > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Stack of affine layers. Weights are stored row-major as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T: Real> {
    dims: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    acts: Vec<Activation>,
}

/// Values recorded by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub batch: usize,
    /// `values[0]` is the input, `values[l + 1]` the output of layer `l`.
    values: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn input(&self) -> &[T] {
        &self.values[0]
    }
}

impl<T: Real> DenseNet<T> {
    /// Zero-initialized network. `dims` lists input, hidden and output sizes.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(dims.len() >= 2, "a network needs at least one layer");
        let n = dims.len() - 1;
        let weights = (0..n).map(|l| vec![T::zero(); dims[l] * dims[l + 1]]).collect();
        let biases = (0..n).map(|l| vec![T::zero(); dims[l + 1]]).collect();
        let acts = (0..n).map(|l| if l + 1 == n { output } else { hidden }).collect();
        Self { dims: dims.to_vec(), weights, biases, acts }
    }

    /// Orthogonal weights with `gain` on hidden layers and `out_gain` on the
    /// last one; zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        gain: f64,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(dims, hidden, output);
        let n = net.num_layers();
        for l in 0..n {
            let g = if l + 1 == n { out_gain } else { gain };
            let w = orthogonal(dims[l + 1], dims[l], g, rng);
            net.weights[l] = w.into_iter().map(T::lit).collect();
        }
        net
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.acts
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        &self.weights[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        &mut self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.biases[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        &mut self.biases[layer]
    }

    /// Parameter tensors in the fixed order `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * self.num_layers());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * self.num_layers());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    /// Shapes matching [`params`](Self::params).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            out.push(vec![self.dims[l + 1], self.dims[l]]);
            out.push(vec![self.dims[l + 1]]);
        }
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.num_layers() {
            out.push(format!("{prefix}.w{l}"));
            out.push(format!("{prefix}.b{l}"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Zeroed gradient buffers with the layout of [`params`](Self::params).
    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    fn layer_forward(&self, l: usize, x: &[T], batch: usize) -> Vec<T> {
        let (din, dout) = (self.dims[l], self.dims[l + 1]);
        let mut y = Vec::with_capacity(batch * dout);
        for _ in 0..batch {
            y.extend_from_slice(&self.biases[l]);
        }
        gemm(false, true, batch, dout, din, T::one(), x, &self.weights[l], T::one(), &mut y);
        let act = self.acts[l];
        if act != Activation::Identity {
            for v in y.iter_mut() {
                *v = act.apply(*v);
            }
        }
        y
    }

    /// Forward pass over a row-major batch, keeping what backward needs.
    pub fn forward(&self, x: &[T]) -> Result<Tape<T>, NnError> {
        let batch = self.batch_of(x)?;
        let mut values = Vec::with_capacity(self.num_layers() + 1);
        values.push(x.to_vec());
        for l in 0..self.num_layers() {
            let y = self.layer_forward(l, &values[l], batch);
            values.push(y);
        }
        Ok(Tape { batch, values })
    }

    /// Forward pass without a tape.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        let batch = self.batch_of(x)?;
        let mut cur = self.layer_forward(0, x, batch);
        for l in 1..self.num_layers() {
            cur = self.layer_forward(l, &cur, batch);
        }
        Ok(cur)
    }

    fn batch_of(&self, x: &[T]) -> Result<usize, NnError> {
        let d = self.input_dim();
        if d == 0 || x.len() % d != 0 {
            return Err(NnError::InputDim { got: x.len(), dim: d });
        }
        Ok(x.len() / d)
    }

    /// Accumulates parameter gradients of `dL/d(output)` into `grads` and
    /// returns `dL/d(input)`.
    pub fn backward(&self, tape: &Tape<T>, d_out: &[T], grads: &mut [Vec<T>]) -> Result<Vec<T>, NnError> {
        let batch = tape.batch;
        let want = batch * self.output_dim();
        if d_out.len() != want {
            return Err(NnError::GradDim { got: d_out.len(), want });
        }
        assert_eq!(grads.len(), 2 * self.num_layers(), "gradient buffer layout mismatch");
        let mut dy = d_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let y = &tape.values[l + 1];
            let act = self.acts[l];
            if act != Activation::Identity {
                for (g, &yv) in dy.iter_mut().zip(y) {
                    *g *= act.grad_from_output(yv);
                }
            }
            let x = &tape.values[l];
            gemm(true, false, dout, din, batch, T::one(), &dy, x, T::one(), &mut grads[2 * l]);
            let db = &mut grads[2 * l + 1];
            for row in dy.chunks_exact(dout) {
                for (b, &g) in db.iter_mut().zip(row) {
                    *b += g;
                }
            }
            let mut dx = vec![T::zero(); batch * din];
            gemm(false, false, batch, din, dout, T::one(), &dy, &self.weights[l], T::zero(), &mut dx);
            dy = dx;
        }
        Ok(dy)
    }

    /// Replaces every parameter from `arrays`, checked against the layout.
    pub fn load_params(&mut self, arrays: &[Vec<T>]) -> Result<(), NnError> {
        let shapes = self.param_shapes();
        if arrays.len() != shapes.len() {
            return Err(NnError::Shape(format!("expected {} tensors, got {}", shapes.len(), arrays.len())));
        }
        for (i, (dst, src)) in self.params_mut().into_iter().zip(arrays).enumerate() {
            if dst.len() != src.len() {
                return Err(NnError::Shape(format!("tensor {i}")));
            }
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    /// Same network with its parameters converted to another scalar type.
    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        DenseNet {
            dims: self.dims.clone(),
            weights: self.weights.iter().map(conv).collect(),
            biases: self.biases.iter().map(conv).collect(),
            acts: self.acts.clone(),
        }
    }
}

/// Below this norm a vector is treated as zero by [`l2_normalize_rows`].
pub const NORM_FLOOR: f64 = 1e-12;

/// Normalizes each `dim`-wide row in place and returns the pre-normalization
/// norms. Rows with norm under [`NORM_FLOOR`] become the first basis vector.
pub fn l2_normalize_rows<T: Real>(x: &mut [T], dim: usize) -> Vec<T> {
    let floor = T::lit(NORM_FLOOR);
    let mut norms = Vec::with_capacity(x.len() / dim.max(1));
    let mut warned = false;
    for row in x.chunks_exact_mut(dim) {
        let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if n < floor || !n.is_finite() {
            if !warned {
                log::warn!("l2_normalize: degenerate row (norm {n}), using basis vector");
                warned = true;
            }
            row.iter_mut().for_each(|v| *v = T::zero());
            row[0] = T::one();
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
        norms.push(n);
    }
    norms
}

/// Backward of row normalization: `(I - u u^T) g / |v|`. Degenerate rows get
/// zero gradient.
pub fn l2_normalize_rows_backward<T: Real>(unit: &[T], norms: &[T], d_unit: &[T], dim: usize) -> Vec<T> {
    let floor = T::lit(NORM_FLOOR);
    let mut out = vec![T::zero(); unit.len()];
    for (r, ((u, g), o)) in unit
        .chunks_exact(dim)
        .zip(d_unit.chunks_exact(dim))
        .zip(out.chunks_exact_mut(dim))
        .enumerate()
    {
        let n = norms[r];
        if n < floor || !n.is_finite() {
            continue;
        }
        let dot: T = u.iter().zip(g).map(|(a, b)| *a * *b).sum();
        for k in 0..dim {
            o[k] = (g[k] - u[k] * dot) / n;
        }
    }
    out
}

/// Normalizes a single vector.
pub fn l2_normalize<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    l2_normalize_rows(&mut out, v.len());
    out
}
