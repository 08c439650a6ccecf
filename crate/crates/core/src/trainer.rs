//! Alternating HIO / PPO training loop, metrics logging and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container};
use crate::config::{ConfigError, TrainConfig};
use crate::env::{EpisodeSummary, VecEnv, VecEnvState, ACTION_DIM, CRITIC_OBS_DIM, OBS_DIM};
use crate::him::{hio_update, HioData, HioStats, HybridInternalModel, LatentObjective, VEL_DIM};
use crate::nn::Adam;
use crate::num::Real;
use crate::ppo::{build_actor_input, compute_gae, normalize_advantages, ppo_update, ActorCritic, InputMask, JointEncoder, PpoData, PpoStats};
use crate::rewards::{NUM_TERMS, TERM_NAMES};
use crate::terrain::{build_field_with, HeightField, TerrainError};

/// Consecutive failed iterations tolerated before training aborts.
pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at iteration {iteration}; partial checkpoint written to {checkpoint}")]
    Diverged { iteration: usize, checkpoint: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.display().to_string(), source }
}

/// Encoder, actor and critic together: everything needed to act.
#[derive(Debug, Clone)]
pub struct Agent<T: Real> {
    pub him: HybridInternalModel<T>,
    pub ac: ActorCritic<T>,
    pub mask: InputMask,
    /// Encoder reads critic-frame histories.
    pub oracle: bool,
}

/// One batch of observations and the derived network inputs.
#[derive(Debug, Clone)]
pub struct Observation<T> {
    pub obs: Vec<T>,
    pub encoder_in: Vec<T>,
    pub critic: Vec<T>,
    pub velocity: Vec<T>,
    pub latent: Vec<T>,
    pub actor_in: Vec<T>,
}

impl<T: Real> Agent<T> {
    pub fn new(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let oracle = cfg.ablation.oracle_mode;
        let frame_dim = if oracle { CRITIC_OBS_DIM } else { OBS_DIM };
        let him = HybridInternalModel::new(&cfg.him, frame_dim, &cfg.ablation, rng);
        let actor_in = OBS_DIM + VEL_DIM + cfg.him.latent_dim;
        let ac = ActorCritic::new(actor_in, CRITIC_OBS_DIM, ACTION_DIM, &cfg.ppo, rng);
        Self { him, ac, mask: mask_of(cfg), oracle }
    }

    pub fn actor_input_dim(&self) -> usize {
        OBS_DIM + VEL_DIM + self.him.latent_dim
    }

    pub fn observe(&self, env: &VecEnv) -> Observation<T> {
        let n = env.num_envs();
        let mut obs = vec![T::zero(); n * OBS_DIM];
        env.write_obs(&mut obs);
        let mut encoder_in = vec![T::zero(); n * self.him.history_dim()];
        if self.oracle {
            env.write_critic_history(&mut encoder_in);
        } else {
            env.write_history(&mut encoder_in);
        }
        let mut critic = vec![T::zero(); n * CRITIC_OBS_DIM];
        env.write_critic_obs(&mut critic);
        let emb = self.him.encode(&encoder_in);
        let actor_in = build_actor_input(&obs, OBS_DIM, &emb.velocity, &emb.latent, self.him.latent_dim, self.mask);
        Observation { obs, encoder_in, critic, velocity: emb.velocity, latent: emb.latent, actor_in }
    }

    /// Named parameter arrays of encoder, actor and critic.
    pub fn named_params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for ((n, s), p) in self.him.param_names().into_iter().zip(self.him.param_shapes()).zip(self.him.params()) {
            out.push((n, s, p));
        }
        for ((n, s), p) in self.ac.param_names().into_iter().zip(self.ac.param_shapes()).zip(self.ac.params()) {
            out.push((n, s, p));
        }
        out
    }

    fn load_from(&mut self, c: &Container) -> Result<(), CheckpointError> {
        let names = self.him.param_names();
        let shapes = self.him.param_shapes();
        for ((p, n), s) in self.him.params_mut().into_iter().zip(&names).zip(&shapes) {
            p.copy_from_slice(&c.read::<T>(n, s)?);
        }
        let names = self.ac.param_names();
        let shapes = self.ac.param_shapes();
        for ((p, n), s) in self.ac.params_mut().into_iter().zip(&names).zip(&shapes) {
            p.copy_from_slice(&c.read::<T>(n, s)?);
        }
        Ok(())
    }

    /// Rebuilds the agent stored in a checkpoint.
    pub fn from_checkpoint(c: &Container) -> Result<(TrainConfig, Self), CheckpointError> {
        let cfg = read_config(c)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut agent = Self::new(&cfg, &mut rng);
        agent.load_from(c)?;
        Ok((cfg, agent))
    }
}

pub fn mask_of(cfg: &TrainConfig) -> InputMask {
    InputMask { zero_velocity: cfg.ablation.zero_velocity_input, zero_latent: cfg.ablation.zero_latent_input }
}

fn read_config(c: &Container) -> Result<TrainConfig, CheckpointError> {
    serde_json::from_slice(c.read_bytes("config")?)
        .map_err(|e| CheckpointError::Corrupted(format!("config blob: {e}")))
}

/// Transitions of one iteration, laid out `[step][env]`.
#[derive(Debug, Clone, Default)]
pub struct Rollout<T> {
    pub num_envs: usize,
    pub steps: usize,
    pub obs: Vec<T>,
    pub encoder_in: Vec<T>,
    /// Actor inputs as the frozen encoder produced them during the rollout.
    pub actor_in: Vec<T>,
    pub critic: Vec<T>,
    pub actions: Vec<T>,
    pub log_prob: Vec<T>,
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
    pub values: Vec<T>,
    /// Rewards with the truncation bootstrap folded in.
    pub rewards: Vec<T>,
    pub dones: Vec<bool>,
    pub next_frames: Vec<T>,
    pub velocities: Vec<T>,
    pub last_values: Vec<T>,
    pub raw_reward_sum: f64,
    pub term_sums: [f64; NUM_TERMS],
    pub episodes: Vec<EpisodeSummary>,
}

impl<T> Rollout<T> {
    pub fn len(&self) -> usize {
        self.num_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub mean_step_reward: f64,
    pub mean_episode_return: f64,
    pub episodes: usize,
    pub nlts: f64,
    pub nats: f64,
    pub mean_level: f64,
    pub level_by_type: [f64; 4],
    pub latent_loss: f64,
    pub velocity_loss: f64,
    pub surrogate_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub lr: f64,
    pub terms: [f64; NUM_TERMS],
}

/// Name of the latent-loss column for a given objective.
pub fn latent_column(obj: LatentObjective) -> &'static str {
    match obj {
        LatentObjective::SwappedPrediction => "swav_loss",
        LatentObjective::Regression => "regression_loss",
        LatentObjective::None => "latent_loss",
    }
}

pub fn metrics_header(obj: LatentObjective) -> String {
    let mut cols: Vec<String> = [
        "iteration",
        "mean_step_reward",
        "mean_episode_return",
        "episodes",
        "nlts",
        "nats",
        "mean_level",
        "level_slope",
        "level_rough",
        "level_stairs",
        "level_obstacles",
        latent_column(obj),
        "velocity_loss",
        "surrogate_loss",
        "value_loss",
        "entropy",
        "kl",
        "clip_fraction",
        "lr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend(TERM_NAMES.iter().map(|t| format!("rew_{t}")));
    cols.join(",")
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let mut f = vec![
            self.iteration.to_string(),
            self.mean_step_reward.to_string(),
            self.mean_episode_return.to_string(),
            self.episodes.to_string(),
            self.nlts.to_string(),
            self.nats.to_string(),
            self.mean_level.to_string(),
        ];
        f.extend(self.level_by_type.iter().map(|v| v.to_string()));
        f.extend(
            [
                self.latent_loss,
                self.velocity_loss,
                self.surrogate_loss,
                self.value_loss,
                self.entropy,
                self.kl,
                self.clip_fraction,
                self.lr,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        f.extend(self.terms.iter().map(|v| v.to_string()));
        f.join(",")
    }
}

/// Serializable trainer state that is not a parameter array.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    iteration: usize,
    consecutive_failures: usize,
    rng: ChaCha8Rng,
    env: VecEnvState,
    ppo_lr: f64,
    ppo_step: u64,
    him_lr: f64,
    him_step: u64,
}

pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub env: VecEnv,
    pub agent: Agent<T>,
    pub him_opt: Adam<T>,
    pub ppo_opt: Adam<T>,
    pub rng: ChaCha8Rng,
    /// Completed iterations.
    pub iteration: usize,
    pub consecutive_failures: usize,
}

/// Wall-clock seconds per phase (kept out of the metrics file so metrics stay
/// reproducible).
#[derive(Debug, Clone, Copy, Default)]
pub struct Timing {
    pub rollout: f64,
    pub hio: f64,
    pub ppo: f64,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        let violations = crate::config::validate(&cfg);
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations).into());
        }
        let field = Arc::new(build_field_with(cfg.seed, &cfg.terrain)?);
        Ok(Self::with_field(cfg, field))
    }

    /// Builds a trainer on an existing height field (shared between runs).
    pub fn with_field(cfg: TrainConfig, field: Arc<HeightField>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let agent = Agent::new(&cfg, &mut rng);
        let him_opt = Adam::for_params(&agent.him.params(), cfg.him.learning_rate, cfg.him.adam_epsilon);
        let ppo_opt = Adam::for_params(&agent.ac.params(), cfg.ppo.learning_rate, cfg.ppo.adam_epsilon);
        let env = VecEnv::new(&cfg, field, cfg.seed);
        Self { cfg, env, agent, him_opt, ppo_opt, rng, iteration: 0, consecutive_failures: 0 }
    }

    /// Collects `rollout_length` steps from every env with frozen networks.
    pub fn collect(&mut self) -> Rollout<T> {
        let n = self.env.num_envs();
        let steps = self.cfg.rollout_length;
        let gamma = T::lit(self.cfg.ppo.gamma);
        let frame_dim = self.agent.him.frame_dim;
        let mut r = Rollout::<T> { num_envs: n, steps, log_std: self.agent.ac.effective_log_std(), ..Default::default() };
        let mut vel = vec![T::zero(); n * VEL_DIM];
        for _ in 0..steps {
            let o = self.agent.observe(&self.env);
            self.env.write_velocities(&mut vel);
            let out = self.agent.ac.act(&o.actor_in, &o.critic, false, &mut self.rng);
            let recs = self.env.step(&out.actions);

            let trunc: Vec<usize> = (0..n).filter(|&i| recs[i].truncated && !recs[i].terminated).collect();
            let mut boot = vec![T::zero(); n];
            if !trunc.is_empty() {
                let mut c = Vec::with_capacity(trunc.len() * CRITIC_OBS_DIM);
                for &i in &trunc {
                    c.extend(recs[i].next_critic.iter().map(|&v| T::lit(v)));
                }
                for (&i, v) in trunc.iter().zip(self.agent.ac.values(&c)) {
                    boot[i] = gamma * v;
                }
            }
            for (i, rec) in recs.iter().enumerate() {
                r.rewards.push(T::lit(rec.reward) + boot[i]);
                r.dones.push(rec.done());
                r.raw_reward_sum += rec.reward;
                for (s, t) in r.term_sums.iter_mut().zip(&rec.terms) {
                    *s += t;
                }
                if self.agent.oracle {
                    r.next_frames.extend(rec.next_critic.iter().map(|&v| T::lit(v)));
                } else {
                    debug_assert_eq!(frame_dim, OBS_DIM);
                    r.next_frames.extend(rec.next_frame.iter().map(|&v| T::lit(v)));
                }
                if let Some(ep) = &rec.episode {
                    r.episodes.push(*ep);
                }
            }
            r.obs.extend(o.obs);
            r.encoder_in.extend(o.encoder_in);
            r.actor_in.extend(o.actor_in);
            r.critic.extend(o.critic);
            r.actions.extend(out.actions);
            r.log_prob.extend(out.log_prob);
            r.mean.extend(out.mean);
            r.values.extend(out.values);
            r.velocities.extend_from_slice(&vel);
        }
        let mut critic = vec![T::zero(); n * CRITIC_OBS_DIM];
        self.env.write_critic_obs(&mut critic);
        r.last_values = self.agent.ac.values(&critic);
        r
    }

    /// Updates the encoders and prototypes on the rollout.
    pub fn hio_phase(&mut self, r: &Rollout<T>) -> HioStats {
        let data = HioData { histories: r.encoder_in.clone(), next_frames: r.next_frames.clone(), velocities: r.velocities.clone() };
        hio_update(&mut self.agent.him, &mut self.him_opt, &data, &self.cfg.him, &mut self.rng)
    }

    /// PPO on the rollout. The actor sees the embeddings it acted on, so the
    /// ratio starts at one; the encoder update reaches the policy next rollout.
    pub fn ppo_phase(&mut self, r: &Rollout<T>) -> PpoStats {
        let (mut adv, returns) = compute_gae(
            &r.rewards,
            &r.values,
            &r.dones,
            &r.last_values,
            r.num_envs,
            self.cfg.ppo.gamma,
            self.cfg.ppo.gae_lambda,
        );
        normalize_advantages(&mut adv);
        let data = PpoData {
            obs: r.obs.clone(),
            obs_dim: OBS_DIM,
            histories: r.encoder_in.clone(),
            actor_in: r.actor_in.clone(),
            actor_in_dim: self.agent.actor_input_dim(),
            critic_in: r.critic.clone(),
            critic_in_dim: CRITIC_OBS_DIM,
            actions: r.actions.clone(),
            old_log_prob: r.log_prob.clone(),
            old_mean: r.mean.clone(),
            old_log_std: r.log_std.clone(),
            advantages: adv,
            returns,
        };
        let joint = if self.cfg.ppo.backprop_into_him {
            Some(JointEncoder {
                him: &mut self.agent.him,
                opt: &mut self.him_opt,
                mask: self.agent.mask,
                grad_clip: self.cfg.him.grad_clip,
            })
        } else {
            None
        };
        ppo_update(&mut self.agent.ac, &mut self.ppo_opt, &data, &self.cfg.ppo, &mut self.rng, joint)
    }

    /// Runs one full iteration: rollout, HIO, PPO.
    pub fn iterate(&mut self) -> (MetricsRow, Timing) {
        let t0 = Instant::now();
        let r = self.collect();
        let t1 = Instant::now();
        let hio = self.hio_phase(&r);
        let t2 = Instant::now();
        let ppo = self.ppo_phase(&r);
        let t3 = Instant::now();
        self.iteration += 1;
        let failed = ppo.aborted || !hio.latent_loss.is_finite() || !hio.velocity_loss.is_finite();
        self.consecutive_failures = if failed { self.consecutive_failures + 1 } else { 0 };

        let n = r.len().max(1) as f64;
        let episodes = r.episodes.len();
        let mean_episode_return = if episodes > 0 {
            r.episodes.iter().map(|e| e.ret).sum::<f64>() / episodes as f64
        } else {
            f64::NAN
        };
        let levels = self.env.levels();
        let row = MetricsRow {
            iteration: self.iteration,
            mean_step_reward: r.raw_reward_sum / n,
            mean_episode_return,
            episodes,
            nlts: r.term_sums[0] / n,
            nats: r.term_sums[1] / n,
            mean_level: levels.iter().map(|&l| l as f64).sum::<f64>() / levels.len().max(1) as f64,
            level_by_type: self.env.mean_level_by_type(),
            latent_loss: hio.latent_loss,
            velocity_loss: hio.velocity_loss,
            surrogate_loss: ppo.surrogate,
            value_loss: ppo.value,
            entropy: ppo.entropy,
            kl: ppo.kl,
            clip_fraction: ppo.clip_fraction,
            lr: ppo.lr,
            terms: std::array::from_fn(|k| r.term_sums[k] / n),
        };
        let timing = Timing {
            rollout: (t1 - t0).as_secs_f64(),
            hio: (t2 - t1).as_secs_f64(),
            ppo: (t3 - t2).as_secs_f64(),
        };
        (row, timing)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        let cfg = serde_json::to_vec(&self.cfg).expect("config serializes");
        c.push("config", vec![cfg.len()], &cfg);
        let state = TrainerState {
            iteration: self.iteration,
            consecutive_failures: self.consecutive_failures,
            rng: self.rng.clone(),
            env: self.env.state.clone(),
            ppo_lr: self.ppo_opt.lr,
            ppo_step: self.ppo_opt.state.step,
            him_lr: self.him_opt.lr,
            him_step: self.him_opt.state.step,
        };
        let state = serde_json::to_vec(&state).expect("trainer state serializes");
        c.push("state", vec![state.len()], &state);
        for (name, shape, p) in self.agent.named_params() {
            c.push(name, shape, p);
        }
        push_adam(&mut c, "opt.him", &self.him_opt, &self.agent.him.param_names(), &self.agent.him.param_shapes());
        push_adam(&mut c, "opt.ppo", &self.ppo_opt, &self.agent.ac.param_names(), &self.agent.ac.param_shapes());
        c
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        Ok(self.to_container().save(path)?)
    }

    /// Restores a trainer from a checkpoint. `overrides` may change only the
    /// iteration budget and checkpoint cadence; a different env count is an
    /// incompatibility.
    pub fn from_container(c: &Container, overrides: Option<&TrainConfig>) -> Result<Self, TrainError> {
        let mut cfg = read_config(c)?;
        if let Some(o) = overrides {
            if o.num_envs != cfg.num_envs {
                return Err(CheckpointError::Incompatible(format!(
                    "checkpoint was trained with num_envs = {}, config asks for {}",
                    cfg.num_envs, o.num_envs
                ))
                .into());
            }
            cfg.num_iterations = o.num_iterations;
            cfg.checkpoint_every = o.checkpoint_every;
        }
        let state: TrainerState = serde_json::from_slice(c.read_bytes("state")?)
            .map_err(|e| CheckpointError::Corrupted(format!("state blob: {e}")))?;
        if state.env.envs.len() != cfg.num_envs {
            return Err(CheckpointError::Corrupted("env state count differs from num_envs".into()).into());
        }
        let mut t = Self::new(cfg)?;
        t.agent.load_from(c)?;
        read_adam(c, "opt.him", &mut t.him_opt, &t.agent.him.param_names(), &t.agent.him.param_shapes())?;
        read_adam(c, "opt.ppo", &mut t.ppo_opt, &t.agent.ac.param_names(), &t.agent.ac.param_shapes())?;
        t.him_opt.lr = state.him_lr;
        t.him_opt.state.step = state.him_step;
        t.ppo_opt.lr = state.ppo_lr;
        t.ppo_opt.state.step = state.ppo_step;
        t.rng = state.rng;
        t.env.state = state.env;
        t.iteration = state.iteration;
        t.consecutive_failures = state.consecutive_failures;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>, overrides: Option<&TrainConfig>) -> Result<Self, TrainError> {
        Self::from_container(&Container::load(path)?, overrides)
    }

    /// Trains until `cfg.num_iterations`, writing metrics, timing and
    /// checkpoints into `out`. Existing metrics rows past the current
    /// iteration are dropped first, so a resumed run appends cleanly.
    pub fn run(&mut self, out: &Path) -> Result<PathBuf, TrainError> {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        let header = metrics_header(self.agent.him.objective);
        let metrics_path = out.join("metrics.csv");
        let timing_path = out.join("timing.csv");
        prepare_csv(&metrics_path, &header, self.iteration)?;
        prepare_csv(&timing_path, "iteration,rollout_s,hio_s,ppo_s", self.iteration)?;
        let mut metrics = append(&metrics_path)?;
        let mut timing = append(&timing_path)?;
        let mut last = out.join(format!("ckpt_{}.bin", self.iteration));
        if self.iteration == 0 && self.cfg.num_iterations == 0 {
            self.save(&last)?;
        }
        while self.iteration < self.cfg.num_iterations {
            let (row, tm) = self.iterate();
            writeln!(metrics, "{}", row.to_csv()).map_err(io_err(&metrics_path))?;
            metrics.flush().map_err(io_err(&metrics_path))?;
            writeln!(timing, "{},{:.4},{:.4},{:.4}", row.iteration, tm.rollout, tm.hio, tm.ppo).map_err(io_err(&timing_path))?;
            log::info!(
                "iter {:>5}  nlts {:.3}  nats {:.3}  level {:.2}  vel {:.4}  latent {:.4}  kl {:.4}  {:.1}s",
                row.iteration,
                row.nlts,
                row.nats,
                row.mean_level,
                row.velocity_loss,
                row.latent_loss,
                row.kl,
                tm.rollout + tm.hio + tm.ppo
            );
            if self.consecutive_failures > MAX_CONSECUTIVE_FAILURES {
                let p = out.join(format!("ckpt_{}.bin", self.iteration));
                self.save(&p)?;
                return Err(TrainError::Diverged { iteration: self.iteration, checkpoint: p.display().to_string() });
            }
            if self.iteration % self.cfg.checkpoint_every == 0 || self.iteration == self.cfg.num_iterations {
                last = out.join(format!("ckpt_{}.bin", self.iteration));
                self.save(&last)?;
            }
        }
        Ok(last)
    }
}

fn push_adam<T: Real>(c: &mut Container, prefix: &str, opt: &Adam<T>, names: &[String], shapes: &[Vec<usize>]) {
    for (i, (n, s)) in names.iter().zip(shapes).enumerate() {
        c.push(format!("{prefix}.m.{n}"), s.clone(), &opt.state.m[i]);
        c.push(format!("{prefix}.v.{n}"), s.clone(), &opt.state.v[i]);
    }
}

fn read_adam<T: Real>(c: &Container, prefix: &str, opt: &mut Adam<T>, names: &[String], shapes: &[Vec<usize>]) -> Result<(), CheckpointError> {
    for (i, (n, s)) in names.iter().zip(shapes).enumerate() {
        opt.state.m[i] = c.read(&format!("{prefix}.m.{n}"), s)?;
        opt.state.v[i] = c.read(&format!("{prefix}.v.{n}"), s)?;
    }
    Ok(())
}

/// Makes sure `path` starts with `header` and holds no rows past `keep`.
fn prepare_csv(path: &Path, header: &str, keep: usize) -> Result<(), TrainError> {
    let mut lines = vec![header.to_string()];
    if keep > 0 && path.exists() {
        let f = File::open(path).map_err(io_err(path))?;
        for line in BufReader::new(f).lines().skip(1) {
            let line = line.map_err(io_err(path))?;
            let it: Option<usize> = line.split(',').next().and_then(|s| s.parse().ok());
            if matches!(it, Some(i) if i <= keep) {
                lines.push(line);
            }
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn append(path: &Path) -> Result<File, TrainError> {
    OpenOptions::new().append(true).open(path).map_err(io_err(path))
}

/// Reads a metrics file into (header, rows of numbers).
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), TrainError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
        .collect();
    Ok((header, rows))
}

/// Mean of a named column over the last `n` rows.
pub fn tail_mean(header: &[String], rows: &[Vec<f64>], column: &str, n: usize) -> Option<f64> {
    let k = header.iter().position(|h| h == column)?;
    let tail = &rows[rows.len().saturating_sub(n)..];
    if tail.is_empty() {
        return None;
    }
    Some(tail.iter().map(|r| r[k]).sum::<f64>() / tail.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TerrainConfig;

    pub(crate) fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig {
            num_envs: 16,
            rollout_length: 8,
            num_iterations: 2,
            terrain: TerrainConfig { tile_rows: 4, tile_cols: 10, ..TerrainConfig::default() },
            ..TrainConfig::default()
        };
        cfg.ppo.actor_hidden = vec![16];
        cfg.ppo.critic_hidden = vec![16];
        cfg.him.encoder_hidden = vec![16];
        cfg.him.target_hidden = vec![16];
        cfg.him.num_prototypes = 4;
        cfg
    }

    #[test]
    fn rollout_shapes() {
        let mut t = Trainer::<f64>::new(tiny_cfg()).unwrap();
        let r = t.collect();
        assert_eq!(r.len(), 128);
        assert_eq!(r.encoder_in.len(), 128 * OBS_DIM * 6);
        assert_eq!(r.next_frames.len(), 128 * OBS_DIM);
        assert_eq!(r.critic.len(), 128 * CRITIC_OBS_DIM);
        assert_eq!(r.last_values.len(), 16);
    }

    #[test]
    fn hio_touches_only_encoder_and_ppo_only_policy() {
        let mut t = Trainer::<f64>::new(tiny_cfg()).unwrap();
        let r = t.collect();
        let (h0, a0) = (t.agent.him.clone(), t.agent.ac.clone());
        t.hio_phase(&r);
        assert_ne!(t.agent.him, h0);
        assert_eq!(t.agent.ac, a0);
        let h1 = t.agent.him.clone();
        t.ppo_phase(&r);
        assert_eq!(t.agent.him, h1);
        assert_ne!(t.agent.ac, a0);
    }

    #[test]
    fn container_round_trip_restores_state() {
        let mut t = Trainer::<f64>::new(tiny_cfg()).unwrap();
        t.iterate();
        let c = t.to_container();
        let back = Trainer::<f64>::from_container(&c, None).unwrap();
        assert_eq!(back.agent.ac, t.agent.ac);
        assert_eq!(back.agent.him, t.agent.him);
        assert_eq!(back.him_opt, t.him_opt);
        assert_eq!(back.ppo_opt, t.ppo_opt);
        assert_eq!(back.iteration, 1);
        assert_eq!(back.to_container(), c);
    }

    #[test]
    fn env_count_mismatch_is_incompatible() {
        let t = Trainer::<f64>::new(tiny_cfg()).unwrap();
        let c = t.to_container();
        let mut other = tiny_cfg();
        other.num_envs = 8;
        assert!(matches!(
            Trainer::<f64>::from_container(&c, Some(&other)),
            Err(TrainError::Checkpoint(CheckpointError::Incompatible(_)))
        ));
    }

    #[test]
    fn regression_mode_renames_latent_column() {
        assert!(metrics_header(LatentObjective::SwappedPrediction).contains("swav_loss"));
        let h = metrics_header(LatentObjective::Regression);
        assert!(h.contains("regression_loss") && !h.contains("swav_loss"));
    }
}
