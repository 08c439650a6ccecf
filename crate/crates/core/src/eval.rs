//! Tracking benchmark, latent probe, ablation and prototype sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AblationSpec, ConfigError, TrainConfig};
use crate::env::{CommandMode, CommandRanges, VecEnv};
use crate::num::Real;
use crate::terrain::{build_field_with, TerrainError, TerrainType};
use crate::trainer::{read_metrics, tail_mean, Agent, TrainError, Trainer};

/// Denominator of the tracking scores.
pub const SCORE_SCALE: f64 = 0.25;
pub const EVAL_EPISODE_S: f64 = 10.0;
pub const EVAL_ENVS: usize = 64;
pub const EVAL_LEVELS: [u8; 4] = [1, 2, 3, 4];
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const MIN_PROBE_PER_CLASS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("insufficient samples: class {class} has {got}, need {need}")]
    InsufficientSamples { class: usize, got: usize, need: usize },
}

/// Normalized linear tracking score `exp(-|v_xy - v*_xy|^2 / 0.25)`.
pub fn nlts(v: [f64; 2], target: [f64; 2]) -> f64 {
    let e = (v[0] - target[0]).powi(2) + (v[1] - target[1]).powi(2);
    (-e / SCORE_SCALE).exp()
}

/// Normalized angular tracking score `exp(-(w_z - w*_z)^2 / 0.25)`.
pub fn nats(w: f64, target: f64) -> f64 {
    (-(w - target).powi(2) / SCORE_SCALE).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Lin,
    Ang,
    Combined,
}

impl FromStr for Regime {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lin" => Ok(Self::Lin),
            "ang" => Ok(Self::Ang),
            "combined" => Ok(Self::Combined),
            o => Err(EvalError::Invalid(format!("unknown regime {o:?}"))),
        }
    }
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lin => "lin",
            Self::Ang => "ang",
            Self::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Protocol {
    pub terrain: TerrainType,
    pub regime: Regime,
    /// Command range index 1..=3: forward and yaw within +-range, lateral within +-1.
    pub range: u8,
    pub num_envs: usize,
    pub episode_s: f64,
    pub seed: u64,
}

impl Protocol {
    pub fn new(terrain: TerrainType, regime: Regime, range: u8) -> Result<Self, EvalError> {
        if !(1..=3).contains(&range) {
            return Err(EvalError::Invalid(format!("range must be 1, 2 or 3 (got {range})")));
        }
        Ok(Self { terrain, regime, range, num_envs: EVAL_ENVS, episode_s: EVAL_EPISODE_S, seed: 0 })
    }

    pub fn command_ranges(&self) -> CommandRanges {
        let k = self.range as f64;
        let full = CommandRanges { lin_x: k, lin_y: 1.0, ang: k };
        match self.regime {
            Regime::Lin => CommandRanges { ang: 0.0, ..full },
            Regime::Ang => CommandRanges { lin_x: 0.0, lin_y: 0.0, ..full },
            Regime::Combined => full,
        }
    }
}

/// Mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

impl Estimate {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, half_width: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Self { mean, half_width: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self { mean, half_width: Z95 * (var / n as f64).sqrt() }
    }
}

/// Running per-episode tracking statistics.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeScore {
    pub steps: usize,
    pub lin_err: f64,
    pub ang_err: f64,
    pub nlts: f64,
    pub nats: f64,
}

impl EpisodeScore {
    pub fn add(&mut self, lin_vel: [f64; 3], ang_vel: [f64; 3], cmd: [f64; 3]) {
        let dv = ((lin_vel[0] - cmd[0]).powi(2) + (lin_vel[1] - cmd[1]).powi(2)).sqrt();
        self.lin_err += dv;
        self.ang_err += (ang_vel[2] - cmd[2]).abs();
        self.nlts += nlts([lin_vel[0], lin_vel[1]], [cmd[0], cmd[1]]);
        self.nats += nats(ang_vel[2], cmd[2]);
        self.steps += 1;
    }

    /// Per-step means `(lin_err, ang_err, nlts, nats)`.
    pub fn means(&self) -> [f64; 4] {
        let n = self.steps.max(1) as f64;
        [self.lin_err / n, self.ang_err / n, self.nlts / n, self.nats / n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub terrain: String,
    pub regime: String,
    pub range: u8,
    pub trials: usize,
    pub lin_error: Estimate,
    pub ang_error: Estimate,
    pub nlts: Estimate,
    pub nats: Estimate,
}

impl EvalReport {
    pub fn header() -> &'static str {
        "terrain,regime,range,trials,lin_error,lin_error_hw,ang_error,ang_error_hw,nlts,nlts_hw,nats,nats_hw"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.terrain,
            self.regime,
            self.range,
            self.trials,
            self.lin_error.mean,
            self.lin_error.half_width,
            self.ang_error.mean,
            self.ang_error.half_width,
            self.nlts.mean,
            self.nlts.half_width,
            self.nats.mean,
            self.nats.half_width
        )
    }

    pub fn from_scores(p: &Protocol, scores: &[EpisodeScore]) -> Self {
        let m: Vec<[f64; 4]> = scores.iter().map(EpisodeScore::means).collect();
        let col = |k: usize| m.iter().map(|r| r[k]).collect::<Vec<_>>();
        Self {
            terrain: p.terrain.name().to_string(),
            regime: p.regime.name().to_string(),
            range: p.range,
            trials: scores.len(),
            lin_error: Estimate::of(&col(0)),
            ang_error: Estimate::of(&col(1)),
            nlts: Estimate::of(&col(2)),
            nats: Estimate::of(&col(3)),
        }
    }
}

/// Evaluation env: fixed commands, no curricula, no resampling, envs spread
/// evenly over levels 1..=4 of the protocol's terrain type.
fn eval_env(cfg: &TrainConfig, kind: TerrainType, levels: &[u8], num_envs: usize, episode_s: f64, ranges: CommandRanges, seed: u64) -> Result<VecEnv, EvalError> {
    let mut cfg = cfg.clone();
    cfg.num_envs = num_envs;
    cfg.env.episode_length_s = episode_s;
    cfg.curriculum.terrain_curriculum = false;
    cfg.curriculum.resample_interval = usize::MAX;
    let mut p = [0.0; 4];
    p[kind.index()] = 1.0;
    cfg.terrain.proportions = p;
    let field = Arc::new(build_field_with(cfg.seed, &cfg.terrain)?);
    let rows = field.rows_of_type(kind);
    let mut env = VecEnv::new(&cfg, field, seed);
    env.command_mode = CommandMode::Fixed(ranges);
    env.curriculum = false;
    env.max_level = 9;
    for i in 0..num_envs {
        env.set_terrain(i, rows[(i / levels.len()) % rows.len()], levels[i % levels.len()]);
    }
    env.reset_all();
    Ok(env)
}

/// Runs one deterministic episode per env and scores it. Episodes that end
/// early are scored over the steps they lasted.
pub fn evaluate<T: Real>(agent: &Agent<T>, cfg: &TrainConfig, p: &Protocol) -> Result<EvalReport, EvalError> {
    let mut env = eval_env(cfg, p.terrain, &EVAL_LEVELS, p.num_envs, p.episode_s, p.command_ranges(), p.seed)?;
    let steps = env.cfg().episode_steps();
    let n = env.num_envs();
    let mut scores = vec![EpisodeScore::default(); n];
    let mut active = vec![true; n];
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    for _ in 0..steps {
        let o = agent.observe(&env);
        let out = agent.ac.act(&o.actor_in, &[], true, &mut rng);
        let recs = env.step(&out.actions);
        for (i, r) in recs.iter().enumerate() {
            if active[i] {
                scores[i].add(r.lin_vel, r.ang_vel, r.command);
                if r.done() {
                    active[i] = false;
                }
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }
    }
    Ok(EvalReport::from_scores(p, &scores))
}

/// Held-out accuracy of a linear classifier on latents, with a permuted-label control.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub shuffled_accuracy: f64,
    pub chance: f64,
    /// Binomial 95% band around chance for the held-out size.
    pub chance_band: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
    pub labels: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
}

impl ProbeReport {
    pub fn control_in_band(&self) -> bool {
        self.shuffled_accuracy >= self.chance_band.0 && self.shuffled_accuracy <= self.chance_band.1
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent on
/// standardized features.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub classes: usize,
    pub dim: usize,
    pub w: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, iters: usize, lr: f64, l2: f64) -> Self {
        let dim = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for r in x {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        scale.iter_mut().for_each(|s| *s = 1.0 / s.sqrt().max(1e-8));
        let mut probe = Self { classes, dim, w: vec![0.0; classes * (dim + 1)], mean, scale };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| probe.features(r)).collect();
        let mut grad = vec![0.0; probe.w.len()];
        for _ in 0..iters {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (f, &label) in xs.iter().zip(y) {
                let p = probe.probs_of(f);
                for c in 0..classes {
                    let d = p[c] - if c == label { 1.0 } else { 0.0 };
                    for (g, v) in grad[c * (dim + 1)..(c + 1) * (dim + 1)].iter_mut().zip(f) {
                        *g += d * v / n;
                    }
                }
            }
            for (w, g) in probe.w.iter_mut().zip(&grad) {
                *w -= lr * (g + l2 * *w);
            }
        }
        probe
    }

    fn features(&self, r: &[f64]) -> Vec<f64> {
        let mut f: Vec<f64> = r.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s).collect();
        f.push(1.0);
        f
    }

    fn probs_of(&self, f: &[f64]) -> Vec<f64> {
        let d = self.dim + 1;
        let z: Vec<f64> = (0..self.classes).map(|c| self.w[c * d..(c + 1) * d].iter().zip(f).map(|(a, b)| a * b).sum()).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, r: &[f64]) -> usize {
        let p = self.probs_of(&self.features(r));
        (0..self.classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}

/// Fits the probe on a seeded 70/30 split, then refits on permuted labels.
pub fn probe_accuracy(latents: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize, seed: u64) -> Result<ProbeReport, EvalError> {
    for c in 0..classes {
        let got = labels.iter().filter(|&&l| l == c).count();
        if got < MIN_PROBE_PER_CLASS {
            return Err(EvalError::InsufficientSamples { class: c, got, need: MIN_PROBE_PER_CLASS });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..latents.len()).collect();
    idx.shuffle(&mut rng);
    let cut = idx.len() * 7 / 10;
    let split = |ids: &[usize], y: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (ids.iter().map(|&i| latents[i].clone()).collect(), ids.iter().map(|&i| y[i]).collect())
    };
    let (xtr, ytr) = split(&idx[..cut], &labels);
    let (xte, yte) = split(&idx[cut..], &labels);
    let probe = LinearProbe::fit(&xtr, &ytr, classes, 500, 0.5, 1e-4);
    let accuracy = probe.accuracy(&xte, &yte);

    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng);
    let (xtr, ytr) = split(&idx[..cut], &shuffled);
    let (xte, yte) = split(&idx[cut..], &shuffled);
    let control = LinearProbe::fit(&xtr, &ytr, classes, 500, 0.5, 1e-4);
    let shuffled_accuracy = control.accuracy(&xte, &yte);

    let chance = 1.0 / classes as f64;
    let n_test = xte.len();
    let hw = Z95 * (chance * (1.0 - chance) / n_test.max(1) as f64).sqrt();
    Ok(ProbeReport {
        accuracy,
        shuffled_accuracy,
        chance,
        chance_band: (chance - hw, chance + hw),
        n_train: cut,
        n_test,
        labels,
        latents,
    })
}

/// Rolls the deterministic policy on all four terrain types and collects
/// `(latent, terrain type)` pairs, `per_class` per type.
pub fn collect_latents<T: Real>(agent: &Agent<T>, cfg: &TrainConfig, per_class: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>), EvalError> {
    const ENVS_PER_TYPE: usize = 16;
    const WARMUP: usize = 10;
    const EVERY: usize = 5;
    let mut cfg = cfg.clone();
    cfg.num_envs = ENVS_PER_TYPE * 4;
    cfg.terrain.proportions = [0.25; 4];
    cfg.curriculum.terrain_curriculum = false;
    let field = Arc::new(build_field_with(cfg.seed, &cfg.terrain)?);
    let mut env = VecEnv::new(&cfg, field.clone(), seed);
    env.curriculum = false;
    env.command_mode = CommandMode::Fixed(CommandRanges { lin_x: 1.0, lin_y: 1.0, ang: 1.0 });
    for i in 0..cfg.num_envs {
        let kind = TerrainType::ALL[i % 4];
        let rows = field.rows_of_type(kind);
        env.set_terrain(i, rows[(i / 4) % rows.len()], EVAL_LEVELS[(i / 4) % 4]);
    }
    env.reset_all();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    let mut count = [0usize; 4];
    let ld = agent.him.latent_dim;
    let mut step = 0;
    while count.iter().any(|&c| c < per_class) {
        let o = agent.observe(&env);
        if step >= WARMUP && step % EVERY == 0 {
            for i in 0..cfg.num_envs {
                let k = env.state.envs[i].kind.index();
                if count[k] < per_class {
                    latents.push(o.latent[i * ld..(i + 1) * ld].iter().map(|v| v.to_f64_lossy()).collect());
                    labels.push(k);
                    count[k] += 1;
                }
            }
        }
        let out = agent.ac.act(&o.actor_in, &[], true, &mut rng);
        env.step(&out.actions);
        step += 1;
    }
    Ok((latents, labels))
}

pub fn latent_probe<T: Real>(agent: &Agent<T>, cfg: &TrainConfig, per_class: usize, seed: u64) -> Result<ProbeReport, EvalError> {
    let (x, y) = collect_latents(agent, cfg, per_class, seed)?;
    probe_accuracy(x, y, 4, seed)
}

/// Mean squared error of `estimator`'s velocity estimate against the true
/// body-frame velocity over a fresh stochastic rollout driven by `driver`.
pub fn velocity_mse<T: Real>(driver: &Agent<T>, estimator: &Agent<T>, cfg: &TrainConfig, steps: usize, seed: u64) -> Result<f64, EvalError> {
    let field = Arc::new(build_field_with(cfg.seed, &cfg.terrain)?);
    let mut env = VecEnv::new(cfg, field, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = env.num_envs();
    let mut truth = vec![T::zero(); n * 3];
    let (mut se, mut count) = (0.0, 0usize);
    for _ in 0..steps {
        let o = driver.observe(&env);
        let est = estimator.observe(&env);
        env.write_velocities(&mut truth);
        for (a, b) in est.velocity.iter().zip(&truth) {
            se += (a.to_f64_lossy() - b.to_f64_lossy()).powi(2);
            count += 1;
        }
        let out = driver.ac.act(&o.actor_in, &[], false, &mut rng);
        env.step(&out.actions);
    }
    Ok(se / count.max(1) as f64)
}

/// Ablation file: a base config and named variants. A bare ablation table
/// is compared against the full method.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFile {
    pub config: Option<PathBuf>,
    pub num_iterations: Option<usize>,
    pub variants: BTreeMap<String, AblationSpec>,
}

impl AblationFile {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        if let Ok(f) = crate::config::parse_unvalidated::<AblationFile>(text) {
            if !f.variants.is_empty() {
                return Ok(f);
            }
        }
        let spec: AblationSpec = crate::config::parse_unvalidated(text)?;
        let mut variants = BTreeMap::new();
        variants.insert("full".to_string(), AblationSpec::default());
        variants.insert("ablated".to_string(), spec);
        Ok(Self { variants, ..Default::default() })
    }
}

/// Final-window summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub seed: u64,
    pub nlts: f64,
    pub nats: f64,
    pub mean_level: f64,
    pub checkpoint: PathBuf,
}

/// Number of final iterations averaged in summaries.
pub const FINAL_WINDOW: usize = 10;

/// Trains one run into `out` and summarizes its last iterations.
pub fn train_and_summarize(cfg: TrainConfig, variant: &str, out: &Path) -> Result<RunSummary, EvalError> {
    let seed = cfg.seed;
    let mut t = Trainer::<f32>::new(cfg)?;
    let checkpoint = t.run(out)?;
    let (h, rows) = read_metrics(&out.join("metrics.csv"))?;
    let get = |c: &str| tail_mean(&h, &rows, c, FINAL_WINDOW).unwrap_or(f64::NAN);
    Ok(RunSummary { variant: variant.to_string(), seed, nlts: get("nlts"), nats: get("nats"), mean_level: get("mean_level"), checkpoint })
}

pub fn summary_header() -> &'static str {
    "variant,seed,final_nlts,final_nats,final_mean_level"
}

pub fn summary_csv(s: &RunSummary) -> String {
    format!("{},{},{:.6},{:.6},{:.4}", s.variant, s.seed, s.nlts, s.nats, s.mean_level)
}

/// Trains every variant for seeds `base.seed + 0..seeds`, each into
/// `out/<variant>/seed_<s>`, and returns the per-run summaries.
pub fn run_ablation(base: &TrainConfig, variants: &BTreeMap<String, AblationSpec>, seeds: usize, out: &Path) -> Result<Vec<RunSummary>, EvalError> {
    let mut rows = Vec::new();
    for (name, spec) in variants {
        for s in 0..seeds as u64 {
            let mut cfg = base.clone();
            cfg.ablation = spec.clone();
            cfg.seed = base.seed + s;
            let dir = out.join(name).join(format!("seed_{}", cfg.seed));
            rows.push(train_and_summarize(cfg, name, &dir)?);
        }
    }
    Ok(rows)
}

/// Parses and validates a comma-separated list of prototype counts.
pub fn parse_k_values(s: &str) -> Result<Vec<usize>, EvalError> {
    let ks = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| EvalError::Invalid(format!("bad K value {t:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if ks.is_empty() {
        return Err(EvalError::Invalid("no K values".into()));
    }
    if let Some(k) = ks.iter().find(|&&k| k < 2) {
        return Err(EvalError::Invalid(format!("number of prototypes must be ≥ 2 (got {k})")));
    }
    Ok(ks)
}

/// Trains per (K, seed) into `out/k<K>/seed_<s>`.
pub fn sweep_prototypes(base: &TrainConfig, ks: &[usize], seeds: usize, out: &Path) -> Result<Vec<RunSummary>, EvalError> {
    if let Some(k) = ks.iter().find(|&&k| k < 2) {
        return Err(EvalError::Invalid(format!("number of prototypes must be ≥ 2 (got {k})")));
    }
    let mut rows = Vec::new();
    for &k in ks {
        for s in 0..seeds as u64 {
            let mut cfg = base.clone();
            cfg.him.num_prototypes = k;
            cfg.seed = base.seed + s;
            let dir = out.join(format!("k{k}")).join(format!("seed_{}", cfg.seed));
            rows.push(train_and_summarize(cfg, &format!("k{k}"), &dir)?);
        }
    }
    Ok(rows)
}

/// Per-variant means of the final NLTS over seeds, as a table.
pub fn summarize_table(rows: &[RunSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", summary_header());
    for r in rows {
        let _ = writeln!(out, "{}", summary_csv(r));
    }
    let mut by: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in rows {
        by.entry(&r.variant).or_default().push(r);
    }
    let _ = writeln!(out, "\nvariant,seeds,mean_final_nlts,mean_final_nats,mean_final_level");
    for (v, rs) in by {
        let n = rs.len() as f64;
        let m = |f: fn(&RunSummary) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        let _ = writeln!(out, "{v},{},{:.6},{:.6},{:.4}", rs.len(), m(|r| r.nlts), m(|r| r.nats), m(|r| r.mean_level));
    }
    out
}

/// Random labels drawn uniformly, for chance-level checks.
pub fn random_labels<R: Rng + ?Sized>(n: usize, classes: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(nlts([0.3, -0.2], [0.3, -0.2]), 1.0);
        assert!((nlts([0.5, 0.0], [0.0, 0.0]) - (-1f64).exp()).abs() < 1e-15);
        assert!((nats(0.5f64.sqrt(), 0.0) - (-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn injected_error_gives_expected_report() {
        let p = Protocol::new(TerrainType::Slope, Regime::Lin, 1).unwrap();
        let mut perfect = EpisodeScore::default();
        let mut off = EpisodeScore::default();
        for _ in 0..10 {
            perfect.add([0.4, 0.1, 0.0], [0.0, 0.0, 0.0], [0.4, 0.1, 0.0]);
            off.add([0.9, 0.1, 0.0], [0.0, 0.0, 0.0], [0.4, 0.1, 0.0]);
        }
        let r = EvalReport::from_scores(&p, &[perfect]);
        assert_eq!(r.nlts.mean, 1.0);
        let r = EvalReport::from_scores(&p, &[off]);
        assert!((r.nlts.mean - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!((r.lin_error.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn regimes_zero_the_other_component() {
        let p = Protocol::new(TerrainType::Stairs, Regime::Lin, 2).unwrap();
        assert_eq!(p.command_ranges(), CommandRanges { lin_x: 2.0, lin_y: 1.0, ang: 0.0 });
        let p = Protocol::new(TerrainType::Stairs, Regime::Ang, 3).unwrap();
        assert_eq!(p.command_ranges(), CommandRanges { lin_x: 0.0, lin_y: 0.0, ang: 3.0 });
        assert!(Protocol::new(TerrainType::Stairs, Regime::Ang, 4).is_err());
    }

    #[test]
    fn k_values_are_validated() {
        assert_eq!(parse_k_values("4,16,64").unwrap(), vec![4, 16, 64]);
        assert!(parse_k_values("16,1").is_err());
        assert!(parse_k_values("a").is_err());
    }

    #[test]
    fn probe_separates_shifted_clusters_and_control_stays_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..800 {
            let c = i % 4;
            let mut v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            v[c] += 1.5;
            x.push(v);
            y.push(c);
        }
        let r = probe_accuracy(x, y, 4, 1).unwrap();
        assert!(r.accuracy > 0.8, "{}", r.accuracy);
        assert!(r.control_in_band(), "{} not in {:?}", r.shuffled_accuracy, r.chance_band);
    }

    #[test]
    fn probe_rejects_small_classes() {
        let x = vec![vec![0.0]; 40];
        let y = (0..40).map(|i| i % 4).collect();
        assert!(matches!(probe_accuracy(x, y, 4, 0), Err(EvalError::InsufficientSamples { .. })));
    }

    #[test]
    fn bare_spec_is_compared_with_full() {
        let f = AblationFile::parse("zero_latent_input = true\n").unwrap();
        assert_eq!(f.variants.len(), 2);
        assert!(f.variants["ablated"].zero_latent_input);
        let f = AblationFile::parse("[variants.a]\nregression_mode = true\n[variants.b]\n").unwrap();
        assert_eq!(f.variants.len(), 2);
    }
}
