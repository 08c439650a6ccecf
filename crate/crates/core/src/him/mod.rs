//! Hybrid internal model: history encoder, next-frame encoder, prototypes,
//! and the alternating update that trains them.

mod losses;

pub use losses::{
    assign_probs, prototype_scores, sinkhorn, softmax_rows, swav_loss, swav_score_grads, velocity_loss,
    velocity_loss_grad, SinkhornError, LOG_FLOOR,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{AblationSpec, HimConfig};
use crate::nn::{l2_normalize_rows, l2_normalize_rows_backward, Activation, Adam, DenseNet, Tape};
use crate::num::{gemm, Real};

pub const VEL_DIM: usize = 3;

/// Which objective shapes the latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentObjective {
    SwappedPrediction,
    /// MSE between source latent and the gradient-stopped target latent.
    Regression,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridInternalModel<T: Real> {
    pub source: DenseNet<T>,
    pub target: DenseNet<T>,
    /// Raw prototypes, `K x latent_dim`; always normalized before use.
    pub prototypes: Vec<T>,
    pub frame_dim: usize,
    pub history_len: usize,
    pub latent_dim: usize,
    pub num_prototypes: usize,
    pub temperature: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub contrastive_scale: f64,
    pub velocity_scale: f64,
    pub objective: LatentObjective,
    pub freeze_prototypes: bool,
}

/// Encoder outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    /// `B x 3`.
    pub velocity: Vec<T>,
    /// `B x latent_dim`, unit rows.
    pub latent: Vec<T>,
}

/// What the backward pass through the source encoder needs.
#[derive(Debug, Clone)]
pub struct EncodeTape<T> {
    tape: Tape<T>,
    latent: Vec<T>,
    norms: Vec<T>,
}

/// Transition pairs for one HIO batch.
#[derive(Debug, Clone, Copy)]
pub struct HioBatch<'a, T> {
    /// `B x (H + 1) * frame_dim`, oldest frame first.
    pub histories: &'a [T],
    /// `B x frame_dim`.
    pub next_frames: &'a [T],
    /// `B x 3`, ground-truth base velocity in the body frame.
    pub velocities: &'a [T],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HioLosses {
    /// Swapped-prediction or latent-regression loss, by objective.
    pub latent: f64,
    pub velocity: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HioStats {
    pub latent_loss: f64,
    pub velocity_loss: f64,
    pub updates: usize,
    pub skipped: bool,
}

impl<T: Real> HybridInternalModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &HimConfig, frame_dim: usize, ablation: &AblationSpec, rng: &mut R) -> Self {
        let hist_dim = frame_dim * (cfg.history_len + 1);
        let mut sdims = vec![hist_dim];
        sdims.extend(&cfg.encoder_hidden);
        sdims.push(VEL_DIM + cfg.latent_dim);
        let mut tdims = vec![frame_dim];
        tdims.extend(&cfg.target_hidden);
        tdims.push(cfg.latent_dim);
        let gain = std::f64::consts::SQRT_2;
        let source = DenseNet::orthogonal(&sdims, Activation::Elu, Activation::Identity, gain, 1.0, rng);
        let target = DenseNet::orthogonal(&tdims, Activation::Elu, Activation::Identity, gain, 1.0, rng);
        let prototypes = (0..cfg.num_prototypes * cfg.latent_dim)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let objective = if ablation.drop_latent_loss {
            LatentObjective::None
        } else if ablation.regression_mode {
            LatentObjective::Regression
        } else {
            LatentObjective::SwappedPrediction
        };
        Self {
            source,
            target,
            prototypes,
            frame_dim,
            history_len: cfg.history_len,
            latent_dim: cfg.latent_dim,
            num_prototypes: cfg.num_prototypes,
            temperature: cfg.temperature,
            sinkhorn_epsilon: cfg.sinkhorn_epsilon,
            sinkhorn_iters: cfg.sinkhorn_iters,
            contrastive_scale: cfg.contrastive_scale,
            velocity_scale: if ablation.drop_velocity_loss { 0.0 } else { cfg.velocity_scale },
            objective,
            freeze_prototypes: cfg.freeze_prototypes,
        }
    }

    pub fn history_dim(&self) -> usize {
        self.frame_dim * (self.history_len + 1)
    }

    pub fn embedding_dim(&self) -> usize {
        VEL_DIM + self.latent_dim
    }

    pub fn normalized_prototypes(&self) -> (Vec<T>, Vec<T>) {
        let mut e = self.prototypes.clone();
        let n = l2_normalize_rows(&mut e, self.latent_dim);
        (e, n)
    }

    fn split(&self, raw: &[T]) -> (Vec<T>, Vec<T>) {
        let w = self.embedding_dim();
        let b = raw.len() / w;
        let mut vel = Vec::with_capacity(b * VEL_DIM);
        let mut lat = Vec::with_capacity(b * self.latent_dim);
        for row in raw.chunks_exact(w) {
            vel.extend_from_slice(&row[..VEL_DIM]);
            lat.extend_from_slice(&row[VEL_DIM..]);
        }
        (vel, lat)
    }

    /// Velocity estimate and unit latent for each history row.
    pub fn encode(&self, histories: &[T]) -> Embedding<T> {
        let raw = self.source.predict(histories).expect("history width mismatch");
        let (velocity, mut latent) = self.split(&raw);
        l2_normalize_rows(&mut latent, self.latent_dim);
        Embedding { velocity, latent }
    }

    pub fn encode_with_tape(&self, histories: &[T]) -> (Embedding<T>, EncodeTape<T>) {
        let tape = self.source.forward(histories).expect("history width mismatch");
        let (velocity, mut latent) = self.split(tape.output());
        let norms = l2_normalize_rows(&mut latent, self.latent_dim);
        let emb = Embedding { velocity, latent: latent.clone() };
        (emb, EncodeTape { tape, latent, norms })
    }

    /// Accumulates source-encoder gradients for upstream gradients on the
    /// velocity and the unit latent.
    pub fn backward_source(&self, et: &EncodeTape<T>, d_vel: &[T], d_latent: &[T], grads: &mut [Vec<T>]) {
        let d_raw_lat = l2_normalize_rows_backward(&et.latent, &et.norms, d_latent, self.latent_dim);
        let w = self.embedding_dim();
        let b = et.tape.batch;
        let mut d_out = vec![T::zero(); b * w];
        for i in 0..b {
            d_out[i * w..i * w + VEL_DIM].copy_from_slice(&d_vel[i * VEL_DIM..(i + 1) * VEL_DIM]);
            d_out[i * w + VEL_DIM..(i + 1) * w]
                .copy_from_slice(&d_raw_lat[i * self.latent_dim..(i + 1) * self.latent_dim]);
        }
        self.source.backward(&et.tape, &d_out, grads).expect("gradient shape");
    }

    /// Unit latent of single frames.
    pub fn encode_target(&self, frames: &[T]) -> Vec<T> {
        let mut z = self.target.predict(frames).expect("frame width mismatch");
        l2_normalize_rows(&mut z, self.latent_dim);
        z
    }

    /// Parameters in the order source, target, prototypes.
    pub fn params(&self) -> Vec<&[T]> {
        let mut p = self.source.params();
        p.extend(self.target.params());
        p.push(&self.prototypes);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = self.source.params_mut();
        p.extend(self.target.params_mut());
        p.push(&mut self.prototypes);
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.source.param_names("him.source");
        n.extend(self.target.param_names("him.target"));
        n.push("him.prototypes".into());
        n
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut s = self.source.param_shapes();
        s.extend(self.target.param_shapes());
        s.push(vec![self.num_prototypes, self.latent_dim]);
        s
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    fn n_source(&self) -> usize {
        2 * self.source.num_layers()
    }

    fn n_target(&self) -> usize {
        2 * self.target.num_layers()
    }

    /// Loss and gradients over all parameters for one batch.
    pub fn loss_and_grads(&self, batch: &HioBatch<'_, T>) -> Result<(HioLosses, Vec<Vec<T>>), SinkhornError> {
        self.loss_and_grads_with_targets(batch, None)
    }

    /// Sinkhorn assignment targets `(q_source, q_target)` for a batch.
    pub fn assignment_targets(&self, batch: &HioBatch<'_, T>) -> Result<(Vec<T>, Vec<T>), SinkhornError> {
        let b = batch.histories.len() / self.history_dim();
        let (d, k) = (self.latent_dim, self.num_prototypes);
        let emb = self.encode(batch.histories);
        let mut zt = self.encode_target(batch.next_frames);
        l2_normalize_rows(&mut zt, d);
        let (e, _) = self.normalized_prototypes();
        let qs = sinkhorn(&prototype_scores(&emb.latent, &e, d), b, k, self.sinkhorn_epsilon, self.sinkhorn_iters)?;
        let qt = sinkhorn(&prototype_scores(&zt, &e, d), b, k, self.sinkhorn_epsilon, self.sinkhorn_iters)?;
        Ok((qs, qt))
    }

    /// As [`Self::loss_and_grads`], optionally with fixed assignment targets.
    /// The targets are constants either way; fixing them lets a finite
    /// difference see the same function the gradient describes.
    pub fn loss_and_grads_with_targets(
        &self,
        batch: &HioBatch<'_, T>,
        targets: Option<&(Vec<T>, Vec<T>)>,
    ) -> Result<(HioLosses, Vec<Vec<T>>), SinkhornError> {
        let b = batch.histories.len() / self.history_dim();
        let d = self.latent_dim;
        let k = self.num_prototypes;
        let mut grads = self.zero_grads();
        let (emb, et) = self.encode_with_tape(batch.histories);

        let vel = velocity_loss(&emb.velocity, batch.velocities);
        let vs = T::lit(self.velocity_scale);
        let d_vel: Vec<T> = velocity_loss_grad(&emb.velocity, batch.velocities).into_iter().map(|g| g * vs).collect();

        let mut d_lat = vec![T::zero(); b * d];
        let mut latent_loss = T::zero();
        match self.objective {
            LatentObjective::None => {}
            LatentObjective::Regression => {
                let z = self.encode_target(batch.next_frames);
                latent_loss = velocity_loss(&emb.latent, &z);
                let cs = T::lit(self.contrastive_scale);
                for (g, v) in d_lat.iter_mut().zip(velocity_loss_grad(&emb.latent, &z)) {
                    *g = v * cs;
                }
            }
            LatentObjective::SwappedPrediction => {
                let ttape = self.target.forward(batch.next_frames).expect("frame width mismatch");
                let mut zt = ttape.output().to_vec();
                let tnorms = l2_normalize_rows(&mut zt, d);
                let (e, enorms) = self.normalized_prototypes();
                let ss = prototype_scores(&emb.latent, &e, d);
                let st = prototype_scores(&zt, &e, d);
                let ps = softmax_rows(&ss, k, self.temperature);
                let pt = softmax_rows(&st, k, self.temperature);
                let (qs, qt) = match targets {
                    Some((qs, qt)) => (qs.clone(), qt.clone()),
                    None => (
                        sinkhorn(&ss, b, k, self.sinkhorn_epsilon, self.sinkhorn_iters)?,
                        sinkhorn(&st, b, k, self.sinkhorn_epsilon, self.sinkhorn_iters)?,
                    ),
                };
                latent_loss = swav_loss(&ps, &pt, &qs, &qt, k);
                let (mut dss, mut dst) = swav_score_grads(&ps, &pt, &qs, &qt, k, self.temperature);
                let cs = T::lit(self.contrastive_scale);
                dss.iter_mut().chain(dst.iter_mut()).for_each(|g| *g *= cs);

                // S = L E^T: dL = dS E, dE = dS^T L.
                gemm(false, false, b, d, k, T::one(), &dss, &e, T::zero(), &mut d_lat);
                let mut d_zt = vec![T::zero(); b * d];
                gemm(false, false, b, d, k, T::one(), &dst, &e, T::zero(), &mut d_zt);

                let d_zt_raw = l2_normalize_rows_backward(&zt, &tnorms, &d_zt, d);
                let ns = self.n_source();
                let nt = self.n_target();
                self.target.backward(&ttape, &d_zt_raw, &mut grads[ns..ns + nt]).expect("gradient shape");

                if !self.freeze_prototypes {
                    let mut de = vec![T::zero(); k * d];
                    gemm(true, false, k, d, b, T::one(), &dss, &emb.latent, T::zero(), &mut de);
                    gemm(true, false, k, d, b, T::one(), &dst, &zt, T::one(), &mut de);
                    let de_raw = l2_normalize_rows_backward(&e, &enorms, &de, d);
                    grads[ns + nt].copy_from_slice(&de_raw);
                }
            }
        }
        let ns = self.n_source();
        self.backward_source(&et, &d_vel, &d_lat, &mut grads[..ns]);

        let latent = latent_loss.to_f64_lossy();
        let velocity = vel.to_f64_lossy();
        let latent_weight = match self.objective {
            LatentObjective::None => 0.0,
            _ => self.contrastive_scale,
        };
        let losses = HioLosses { latent, velocity, total: latent_weight * latent + self.velocity_scale * velocity };
        Ok((losses, grads))
    }
}

/// Flat HIO training set gathered from one rollout.
#[derive(Debug, Clone, Default)]
pub struct HioData<T> {
    pub histories: Vec<T>,
    pub next_frames: Vec<T>,
    pub velocities: Vec<T>,
}

impl<T: Real> HioData<T> {
    pub fn len(&self, frame_dim: usize) -> usize {
        self.next_frames.len() / frame_dim.max(1)
    }
}

/// Runs the configured number of epochs x minibatches of Adam steps on the
/// encoders and prototypes. Augmentation adds one Gaussian offset per
/// sequence, shared by every history frame and the next frame.
pub fn hio_update<T: Real, R: Rng + ?Sized>(
    model: &mut HybridInternalModel<T>,
    opt: &mut Adam<T>,
    data: &HioData<T>,
    cfg: &HimConfig,
    rng: &mut R,
) -> HioStats {
    let fd = model.frame_dim;
    let hd = model.history_dim();
    let n = data.len(fd);
    let mb = n / cfg.num_minibatches.max(1);
    if mb < model.num_prototypes.max(2) {
        log::warn!("hio_update: {n} transitions are too few for a batch, skipping");
        return HioStats { skipped: true, ..Default::default() };
    }
    let sigma = cfg.augmentation_noise;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = HioStats::default();
    let mut hist = vec![T::zero(); mb * hd];
    let mut next = vec![T::zero(); mb * fd];
    let mut vel = vec![T::zero(); mb * VEL_DIM];
    let mut noise = vec![T::zero(); fd];
    for _ in 0..cfg.num_epochs {
        order.shuffle(rng);
        for chunk in order.chunks_exact(mb).take(cfg.num_minibatches) {
            for (r, &i) in chunk.iter().enumerate() {
                if sigma > 0.0 {
                    for v in noise.iter_mut() {
                        *v = T::lit(sigma * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                let src = &data.histories[i * hd..(i + 1) * hd];
                for (dst, s) in hist[r * hd..(r + 1) * hd].chunks_exact_mut(fd).zip(src.chunks_exact(fd)) {
                    for ((o, &x), &e) in dst.iter_mut().zip(s).zip(&noise) {
                        *o = x + e;
                    }
                }
                for ((o, &x), &e) in next[r * fd..(r + 1) * fd]
                    .iter_mut()
                    .zip(&data.next_frames[i * fd..(i + 1) * fd])
                    .zip(&noise)
                {
                    *o = x + e;
                }
                vel[r * VEL_DIM..(r + 1) * VEL_DIM].copy_from_slice(&data.velocities[i * VEL_DIM..(i + 1) * VEL_DIM]);
            }
            let batch = HioBatch { histories: &hist, next_frames: &next, velocities: &vel };
            let (losses, mut grads) = match model.loss_and_grads(&batch) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("hio_update: {e}, skipping minibatch");
                    continue;
                }
            };
            if !losses.total.is_finite() {
                log::warn!("hio_update: non-finite loss, skipping minibatch");
                continue;
            }
            opt.step(model.params_mut(), &mut grads, Some(cfg.grad_clip));
            stats.latent_loss += losses.latent;
            stats.velocity_loss += losses.velocity;
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        stats.latent_loss /= stats.updates as f64;
        stats.velocity_loss /= stats.updates as f64;
    }
    stats
}
