//! Actor-critic with a diagonal Gaussian policy and the clipped PPO update.

mod gae;

pub use gae::{compute_gae, normalize_advantages};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::PpoConfig;
use crate::him::{HybridInternalModel, VEL_DIM};
use crate::nn::{Activation, Adam, DenseNet};
use crate::num::Real;

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LR_MIN: f64 = 1e-6;
pub const LR_MAX: f64 = 1e-2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T: Real> {
    pub actor: DenseNet<T>,
    pub critic: DenseNet<T>,
    /// State-independent log standard deviation per action dimension.
    pub log_std: Vec<T>,
}

/// Output of a rollout forward pass.
#[derive(Debug, Clone, Default)]
pub struct ActOutput<T> {
    pub actions: Vec<T>,
    pub mean: Vec<T>,
    pub log_prob: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> ActorCritic<T> {
    pub fn new<R: Rng + ?Sized>(actor_in: usize, critic_in: usize, action_dim: usize, cfg: &PpoConfig, rng: &mut R) -> Self {
        let mut adims = vec![actor_in];
        adims.extend(&cfg.actor_hidden);
        adims.push(action_dim);
        let mut cdims = vec![critic_in];
        cdims.extend(&cfg.critic_hidden);
        cdims.push(1);
        let g = std::f64::consts::SQRT_2;
        Self {
            actor: DenseNet::orthogonal(&adims, Activation::Elu, Activation::Identity, g, 0.01, rng),
            critic: DenseNet::orthogonal(&cdims, Activation::Elu, Activation::Identity, g, 1.0, rng),
            log_std: vec![T::lit(cfg.init_log_std); action_dim],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Log std after clamping to the allowed band.
    pub fn effective_log_std(&self) -> Vec<T> {
        self.log_std.iter().map(|&l| l.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX))).collect()
    }

    /// Parameters in the order actor, critic, log std.
    pub fn params(&self) -> Vec<&[T]> {
        let mut p = self.actor.params();
        p.extend(self.critic.params());
        p.push(&self.log_std);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut p = self.actor.params_mut();
        p.extend(self.critic.params_mut());
        p.push(&mut self.log_std);
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n = self.actor.param_names("actor");
        n.extend(self.critic.param_names("critic"));
        n.push("actor.log_std".into());
        n
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut s = self.actor.param_shapes();
        s.extend(self.critic.param_shapes());
        s.push(vec![self.log_std.len()]);
        s
    }

    pub fn zero_grads(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn values(&self, critic_in: &[T]) -> Vec<T> {
        self.critic.predict(critic_in).expect("critic input width")
    }

    /// Samples actions; `deterministic` returns the mean.
    pub fn act<R: Rng + ?Sized>(&self, actor_in: &[T], critic_in: &[T], deterministic: bool, rng: &mut R) -> ActOutput<T> {
        let mean = self.actor.predict(actor_in).expect("actor input width");
        let ls = self.effective_log_std();
        let d = self.action_dim();
        let mut actions = mean.clone();
        if !deterministic {
            for (i, a) in actions.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *a += ls[i % d].exp() * T::lit(z);
            }
        }
        let log_prob = gaussian_log_prob(&actions, &mean, &ls);
        let values = if critic_in.is_empty() { Vec::new() } else { self.values(critic_in) };
        ActOutput { actions, mean, log_prob, values }
    }
}

/// Row-wise diagonal Gaussian log density.
pub fn gaussian_log_prob<T: Real>(x: &[T], mean: &[T], log_std: &[T]) -> Vec<T> {
    let d = log_std.len();
    let c = T::lit(HALF_LN_2PI);
    let half = T::lit(0.5);
    x.chunks_exact(d)
        .zip(mean.chunks_exact(d))
        .map(|(xr, mr)| {
            let mut s = T::zero();
            for j in 0..d {
                let z = (xr[j] - mr[j]) / log_std[j].exp();
                s -= half * z * z + log_std[j] + c;
            }
            s
        })
        .collect()
}

/// Entropy of the diagonal Gaussian (identical for every state).
pub fn gaussian_entropy<T: Real>(log_std: &[T]) -> T {
    log_std.iter().map(|&l| l + T::lit(0.5 + HALF_LN_2PI)).sum()
}

/// Everything one PPO minibatch needs, row aligned.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a, T> {
    pub actor_in: &'a [T],
    pub critic_in: &'a [T],
    pub actions: &'a [T],
    pub old_log_prob: &'a [T],
    pub old_mean: &'a [T],
    /// Effective log std used during the rollout.
    pub old_log_std: &'a [T],
    pub advantages: &'a [T],
    pub returns: &'a [T],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoLosses {
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

/// Mean KL(old || new) between diagonal Gaussians.
pub fn mean_kl<T: Real>(old_mean: &[T], old_log_std: &[T], new_mean: &[T], new_log_std: &[T]) -> f64 {
    let d = new_log_std.len();
    let b = new_mean.len() / d;
    let mut kl = 0.0;
    for r in 0..b {
        for j in 0..d {
            let (so, sn) = (old_log_std[j].to_f64_lossy(), new_log_std[j].to_f64_lossy());
            let dm = old_mean[r * d + j].to_f64_lossy() - new_mean[r * d + j].to_f64_lossy();
            kl += sn - so + ((2.0 * so).exp() + dm * dm) / (2.0 * (2.0 * sn).exp()) - 0.5;
        }
    }
    kl / b.max(1) as f64
}

impl<T: Real> ActorCritic<T> {
    /// Clipped surrogate + value MSE - entropy bonus, with gradients for all
    /// parameters and for the actor input.
    pub fn loss_and_grads(&self, mb: &Minibatch<'_, T>, cfg: &PpoConfig) -> (PpoLosses, Vec<Vec<T>>, Vec<T>) {
        let d = self.action_dim();
        let atape = self.actor.forward(mb.actor_in).expect("actor input width");
        let ctape = self.critic.forward(mb.critic_in).expect("critic input width");
        let mean = atape.output();
        let values = ctape.output();
        let b = values.len();
        let ls = self.effective_log_std();
        let logp = gaussian_log_prob(mb.actions, mean, &ls);
        let bt = T::lit(b as f64);
        let eps = T::lit(cfg.clip_range);
        let one = T::one();

        let mut surrogate = T::zero();
        let mut d_logp = vec![T::zero(); b];
        let mut clipped = 0usize;
        for i in 0..b {
            let ratio = (logp[i] - mb.old_log_prob[i]).exp();
            let a = mb.advantages[i];
            let r_clip = ratio.max(one - eps).min(one + eps);
            let s1 = ratio * a;
            let s2 = r_clip * a;
            if r_clip != ratio {
                clipped += 1;
            }
            if s1 <= s2 {
                surrogate -= s1;
                d_logp[i] = -a * ratio / bt;
            } else {
                surrogate -= s2;
                // Gradient flows through the clipped branch only inside the band.
                if r_clip == ratio {
                    d_logp[i] = -a * ratio / bt;
                }
            }
        }
        surrogate /= bt;

        let vc = T::lit(cfg.value_loss_coef);
        let mut value_loss = T::zero();
        let mut d_v = vec![T::zero(); b];
        for i in 0..b {
            let e = values[i] - mb.returns[i];
            value_loss += e * e;
            d_v[i] = T::lit(2.0) * e * vc / bt;
        }
        value_loss /= bt;
        let entropy = gaussian_entropy(&ls);
        let ec = T::lit(cfg.entropy_coef);
        let total = surrogate + vc * value_loss - ec * entropy;

        // d logp / d mean = (x - mu) / sigma^2; d logp / d log_std = z^2 - 1.
        let mut d_mean = vec![T::zero(); b * d];
        let mut d_ls = vec![T::zero(); d];
        for i in 0..b {
            for j in 0..d {
                let s2 = (ls[j] + ls[j]).exp();
                let diff = mb.actions[i * d + j] - mean[i * d + j];
                d_mean[i * d + j] = d_logp[i] * diff / s2;
                d_ls[j] += d_logp[i] * (diff * diff / s2 - one);
            }
        }
        for j in 0..d {
            d_ls[j] -= ec;
            let raw = self.log_std[j];
            if raw < T::lit(LOG_STD_MIN) || raw > T::lit(LOG_STD_MAX) {
                d_ls[j] = T::zero();
            }
        }

        let mut grads = self.zero_grads();
        let na = 2 * self.actor.num_layers();
        let nc = 2 * self.critic.num_layers();
        let d_in = self.actor.backward(&atape, &d_mean, &mut grads[..na]).expect("gradient shape");
        self.critic.backward(&ctape, &d_v, &mut grads[na..na + nc]).expect("gradient shape");
        grads[na + nc].copy_from_slice(&d_ls);

        let kl = mean_kl(mb.old_mean, mb.old_log_std, mean, &ls);
        let losses = PpoLosses {
            surrogate: surrogate.to_f64_lossy(),
            value: value_loss.to_f64_lossy(),
            entropy: entropy.to_f64_lossy(),
            total: total.to_f64_lossy(),
            kl,
            clip_fraction: clipped as f64 / b.max(1) as f64,
        };
        (losses, grads, d_in)
    }
}

/// Full-rollout training set, row aligned. `old_log_std` is shared.
#[derive(Debug, Clone, Default)]
pub struct PpoData<T> {
    pub obs: Vec<T>,
    pub obs_dim: usize,
    /// Encoder inputs, used when gradients flow into the encoder.
    pub histories: Vec<T>,
    /// Actor inputs built with the current encoder.
    pub actor_in: Vec<T>,
    pub actor_in_dim: usize,
    pub critic_in: Vec<T>,
    pub critic_in_dim: usize,
    pub actions: Vec<T>,
    pub old_log_prob: Vec<T>,
    pub old_mean: Vec<T>,
    pub old_log_std: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoStats {
    pub surrogate: f64,
    pub value: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub updates: usize,
    pub lr_decreased: bool,
    pub aborted: bool,
}

/// Which embedding parts the actor sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InputMask {
    pub zero_velocity: bool,
    pub zero_latent: bool,
}

/// Concatenates `obs ++ v ++ l` per row, zeroing masked parts.
pub fn build_actor_input<T: Real>(obs: &[T], obs_dim: usize, vel: &[T], latent: &[T], latent_dim: usize, mask: InputMask) -> Vec<T> {
    let b = obs.len() / obs_dim;
    let w = obs_dim + VEL_DIM + latent_dim;
    let mut out = vec![T::zero(); b * w];
    for i in 0..b {
        let row = &mut out[i * w..(i + 1) * w];
        row[..obs_dim].copy_from_slice(&obs[i * obs_dim..(i + 1) * obs_dim]);
        if !mask.zero_velocity {
            row[obs_dim..obs_dim + VEL_DIM].copy_from_slice(&vel[i * VEL_DIM..(i + 1) * VEL_DIM]);
        }
        if !mask.zero_latent {
            row[obs_dim + VEL_DIM..].copy_from_slice(&latent[i * latent_dim..(i + 1) * latent_dim]);
        }
    }
    out
}

/// Encoder trained jointly with the policy (gradient flows from the actor).
pub struct JointEncoder<'a, T: Real> {
    pub him: &'a mut HybridInternalModel<T>,
    pub opt: &'a mut Adam<T>,
    pub mask: InputMask,
    pub grad_clip: f64,
}

fn gather<T: Real>(src: &[T], width: usize, idx: &[usize], out: &mut Vec<T>) {
    out.clear();
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
}

/// Epochs x minibatches of clipped PPO with KL-adaptive learning rate.
/// On a non-finite loss the parameters from before the call are restored.
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    ac: &mut ActorCritic<T>,
    opt: &mut Adam<T>,
    data: &PpoData<T>,
    cfg: &PpoConfig,
    rng: &mut R,
    mut joint: Option<JointEncoder<'_, T>>,
) -> PpoStats {
    let n = data.returns.len();
    let d = ac.action_dim();
    let mb_size = n / cfg.num_minibatches.max(1);
    let mut stats = PpoStats { lr: opt.lr, ..Default::default() };
    if mb_size == 0 {
        return stats;
    }
    let snapshot = (ac.clone(), opt.clone());
    let him_snapshot = joint.as_ref().map(|j| (j.him.clone(), j.opt.clone()));
    let mut order: Vec<usize> = (0..n).collect();
    let (mut ai, mut ci, mut act, mut olp, mut om, mut adv, mut ret, mut hist, mut obs) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    'outer: for _ in 0..cfg.num_epochs {
        order.shuffle(rng);
        for idx in order.chunks_exact(mb_size).take(cfg.num_minibatches) {
            gather(&data.critic_in, data.critic_in_dim, idx, &mut ci);
            gather(&data.actions, d, idx, &mut act);
            gather(&data.old_log_prob, 1, idx, &mut olp);
            gather(&data.old_mean, d, idx, &mut om);
            gather(&data.advantages, 1, idx, &mut adv);
            gather(&data.returns, 1, idx, &mut ret);
            let mut enc = None;
            if let Some(j) = joint.as_ref() {
                let hd = j.him.history_dim();
                gather(&data.histories, hd, idx, &mut hist);
                gather(&data.obs, data.obs_dim, idx, &mut obs);
                let (emb, tape) = j.him.encode_with_tape(&hist);
                ai = build_actor_input(&obs, data.obs_dim, &emb.velocity, &emb.latent, j.him.latent_dim, j.mask);
                enc = Some(tape);
            } else {
                gather(&data.actor_in, data.actor_in_dim, idx, &mut ai);
            }
            let mb = Minibatch {
                actor_in: &ai,
                critic_in: &ci,
                actions: &act,
                old_log_prob: &olp,
                old_mean: &om,
                old_log_std: &data.old_log_std,
                advantages: &adv,
                returns: &ret,
            };
            let (losses, mut grads, d_in) = ac.loss_and_grads(&mb, cfg);
            if !losses.total.is_finite() {
                log::warn!("ppo_update: non-finite loss, restoring parameters");
                *ac = snapshot.0;
                *opt = snapshot.1;
                if let (Some(j), Some((h, o))) = (joint.as_mut(), him_snapshot) {
                    *j.him = h;
                    *j.opt = o;
                }
                stats.aborted = true;
                stats.lr = opt.lr;
                return stats;
            }
            if losses.kl > 2.0 * cfg.desired_kl {
                opt.lr = (opt.lr / 1.5).max(LR_MIN);
                stats.lr_decreased = true;
            } else if losses.kl < 0.5 * cfg.desired_kl && losses.kl > 0.0 {
                opt.lr = (opt.lr * 1.5).min(LR_MAX);
            }
            opt.step(ac.params_mut(), &mut grads, Some(cfg.grad_clip));

            if let (Some(j), Some(tape)) = (joint.as_mut(), enc) {
                let w = data.obs_dim + VEL_DIM + j.him.latent_dim;
                let ld = j.him.latent_dim;
                let b = idx.len();
                let mut dv = vec![T::zero(); b * VEL_DIM];
                let mut dl = vec![T::zero(); b * ld];
                for r in 0..b {
                    let row = &d_in[r * w..(r + 1) * w];
                    if !j.mask.zero_velocity {
                        dv[r * VEL_DIM..(r + 1) * VEL_DIM].copy_from_slice(&row[data.obs_dim..data.obs_dim + VEL_DIM]);
                    }
                    if !j.mask.zero_latent {
                        dl[r * ld..(r + 1) * ld].copy_from_slice(&row[data.obs_dim + VEL_DIM..]);
                    }
                }
                let mut hg = j.him.zero_grads();
                let ns = 2 * j.him.source.num_layers();
                j.him.backward_source(&tape, &dv, &dl, &mut hg[..ns]);
                j.opt.step(j.him.params_mut(), &mut hg, Some(j.grad_clip));
            }

            stats.surrogate += losses.surrogate;
            stats.value += losses.value;
            stats.entropy += losses.entropy;
            stats.kl += losses.kl;
            stats.clip_fraction += losses.clip_fraction;
            stats.updates += 1;
            if !ac.all_finite() {
                break 'outer;
            }
        }
    }
    if stats.updates > 0 {
        let u = stats.updates as f64;
        stats.surrogate /= u;
        stats.value /= u;
        stats.entropy /= u;
        stats.kl /= u;
        stats.clip_fraction /= u;
    }
    stats.lr = opt.lr;
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_matches_closed_form() {
        let x = [0.3f64, -1.2];
        let m = [0.1f64, -1.0];
        let ls = [-0.5f64, 0.2];
        let mut want = 0.0;
        for j in 0..2 {
            let s: f64 = ls[j];
            let s = s.exp();
            want += -((x[j] - m[j]) / s).powi(2) / 2.0 - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let got = gaussian_log_prob(&x, &m, &ls)[0];
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn deterministic_action_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ac = ActorCritic::<f64>::new(5, 4, 2, &PpoConfig { actor_hidden: vec![8], critic_hidden: vec![8], ..Default::default() }, &mut rng);
        let o = ac.act(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0.0; 4], true, &mut rng);
        assert_eq!(o.actions, o.mean);
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let m = [0.1f64, 0.2, 0.3, 0.4];
        let ls = [0.0f64, -1.0];
        assert!(mean_kl(&m, &ls, &m, &ls).abs() < 1e-15);
    }

    #[test]
    fn actor_input_layout_and_masks() {
        let obs = [1.0f64, 2.0];
        let v = [3.0, 4.0, 5.0];
        let l = [6.0, 7.0];
        assert_eq!(build_actor_input(&obs, 2, &v, &l, 2, InputMask::default()), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let m = InputMask { zero_velocity: true, zero_latent: true };
        assert_eq!(build_actor_input(&obs, 2, &v, &l, 2, m), vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = PpoConfig { actor_hidden: vec![6], critic_hidden: vec![5], clip_range: 0.2, ..Default::default() };
        let mut ac = ActorCritic::<f64>::new(4, 3, 2, &cfg, &mut rng);
        ac.log_std = vec![-0.3, 0.2];
        let b = 8;
        let r = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let ai = r(&mut rng, b * 4);
        let ci = r(&mut rng, b * 3);
        let old = ac.act(&ai, &ci, false, &mut rng);
        // Perturb so ratios differ from one but stay mostly inside the band.
        for p in ac.actor.params_mut() {
            p.iter_mut().for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
        }
        let adv = r(&mut rng, b);
        let ret = r(&mut rng, b);
        let ls = vec![-0.3, 0.2];
        let mb = Minibatch {
            actor_in: &ai,
            critic_in: &ci,
            actions: &old.actions,
            old_log_prob: &old.log_prob,
            old_mean: &old.mean,
            old_log_std: &ls,
            advantages: &adv,
            returns: &ret,
        };
        let (_, grads, _) = ac.loss_and_grads(&mb, &cfg);
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let mut plus = ac.clone();
                plus.params_mut()[pi][k] += h;
                let mut minus = ac.clone();
                minus.params_mut()[pi][k] -= h;
                let fd = (plus.loss_and_grads(&mb, &cfg).0.total - minus.loss_and_grads(&mb, &cfg).0.total) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {pi}[{k}]: fd {fd} vs {}", g[k]);
            }
        }
    }
}
