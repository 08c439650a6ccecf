//! Run configuration: robot description, terrain layout, randomization ranges,
//! encoder/PPO hyperparameters and curriculum settings.
//!
//! Files use flat `dotted.key = value` lines (a subset of TOML). Any key left
//! out takes its default, so an empty file is a complete configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

/// Kinematic and inertial description of a 12-joint quadruped.
///
/// Leg order is FR, FL, RR, RL; each leg has hip abduction, hip pitch and knee.
/// The defaults approximate a Unitree A1-class robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotDescription {
    pub num_joints: usize,
    pub nominal_joint_positions: Vec<f64>,
    /// Hip abduction link (lateral), thigh, calf.
    pub leg_link_lengths: [f64; 3],
    /// Longitudinal and lateral distance from the base origin to each hip mount.
    pub hip_mount_offset: [f64; 2],
    pub base_mass_nominal: f64,
    pub link_masses_nominal: Vec<f64>,
    /// Row-major 3x3.
    pub base_inertia_nominal: [f64; 9],
    pub motor_torque_nominal: f64,
    pub base_height_target: f64,
    pub foot_clearance_target: f64,
    pub joint_lower_limits: [f64; 3],
    pub joint_upper_limits: [f64; 3],
    pub joint_inertia: f64,
    pub joint_damping: f64,
}

impl Default for RobotDescription {
    fn default() -> Self {
        Self {
            num_joints: 12,
            nominal_joint_positions: vec![
                -0.1, 0.8, -1.5, // FR
                0.1, 0.8, -1.5, // FL
                -0.1, 1.0, -1.5, // RR
                0.1, 1.0, -1.5, // RL
            ],
            leg_link_lengths: [0.0838, 0.2, 0.2],
            hip_mount_offset: [0.1805, 0.047],
            base_mass_nominal: 12.0,
            link_masses_nominal: vec![0.2, 0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1, 0.2, 0.3, 0.1],
            base_inertia_nominal: [0.1, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.2],
            motor_torque_nominal: 33.5,
            base_height_target: 0.28,
            foot_clearance_target: 0.08,
            joint_lower_limits: [-0.80, -1.05, -2.70],
            joint_upper_limits: [0.80, 4.19, -0.92],
            joint_inertia: 0.05,
            joint_damping: 0.01,
        }
    }
}

/// Per-episode domain randomization ranges.
///
/// Scale-type entries multiply the nominal value; `kp_scale` and `kd_scale`
/// multiply `kp_nominal` and `kd_nominal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    pub body_mass_scale: Interval,
    pub link_mass_scale: Interval,
    pub com_offset: [Interval; 3],
    pub payload: Interval,
    pub friction: Interval,
    pub restitution: Interval,
    pub motor_strength_scale: Interval,
    pub kp_scale: Interval,
    pub kp_nominal: f64,
    pub kd_scale: Interval,
    pub kd_nominal: f64,
    pub init_joint_scale: Interval,
    /// Whole control ticks.
    pub delay_steps: [u32; 2],
    pub external_force: [Interval; 3],
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            body_mass_scale: Interval::new(0.8, 1.2),
            link_mass_scale: Interval::new(0.8, 1.2),
            com_offset: [Interval::new(-0.1, 0.1); 3],
            payload: Interval::new(-1.0, 3.0),
            friction: Interval::new(0.2, 2.75),
            restitution: Interval::new(0.0, 1.0),
            motor_strength_scale: Interval::new(0.8, 1.2),
            kp_scale: Interval::new(0.8, 1.2),
            kp_nominal: 20.0,
            kd_scale: Interval::new(0.8, 1.2),
            kd_nominal: 0.5,
            init_joint_scale: Interval::new(0.5, 1.5),
            delay_steps: [0, 3],
            external_force: [Interval::new(-30.0, 30.0); 3],
        }
    }
}

impl RandomizationRanges {
    /// Ranges collapsed to the nominal values (no randomization).
    pub fn nominal() -> Self {
        Self {
            body_mass_scale: Interval::point(1.0),
            link_mass_scale: Interval::point(1.0),
            com_offset: [Interval::point(0.0); 3],
            payload: Interval::point(0.0),
            friction: Interval::point(1.0),
            restitution: Interval::point(0.0),
            motor_strength_scale: Interval::point(1.0),
            kp_scale: Interval::point(1.0),
            kp_nominal: 20.0,
            kd_scale: Interval::point(1.0),
            kd_nominal: 0.5,
            init_joint_scale: Interval::point(1.0),
            delay_steps: [0, 0],
            external_force: [Interval::point(0.0); 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    /// Slope, rough slope, stairs, discrete obstacles.
    pub proportions: [f64; 4],
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub tile_side: f64,
    pub cell_size: f64,
    /// Highest level the curriculum may reach (levels are 0..=9).
    pub max_level: u8,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            proportions: [0.1, 0.2, 0.6, 0.1],
            tile_rows: 20,
            tile_cols: 10,
            tile_side: 10.0,
            cell_size: 0.05,
            max_level: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_length_s: f64,
    pub action_scale: f64,
    pub action_clip: f64,
    /// Contact stiffness in N/m.
    pub contact_stiffness: f64,
    /// Normal damping at zero restitution, N*s/m.
    pub contact_damping_max: f64,
    /// Normal damping floor that remains at full restitution.
    pub contact_damping_min: f64,
    /// Viscous tangential coefficient before the Coulomb clamp, N*s/m.
    pub contact_tangential_damping: f64,
    /// Stiffness of the spring holding a sticking foot to its touchdown point, N/m.
    pub contact_tangential_stiffness: f64,
    /// Integration substeps per simulation step.
    pub physics_substeps: usize,
    /// Clip the summed step reward at zero so falling never pays.
    pub only_positive_rewards: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_length_s: 20.0,
            action_scale: 0.25,
            action_clip: 100.0,
            contact_stiffness: 2.0e4,
            contact_damping_max: 500.0,
            contact_damping_min: 50.0,
            contact_tangential_damping: 300.0,
            contact_tangential_stiffness: 2.0e4,
            physics_substeps: 4,
            only_positive_rewards: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_range: f64,
    pub entropy_coef: f64,
    pub value_loss_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub desired_kl: f64,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub num_minibatches: usize,
    pub grad_clip: f64,
    pub adam_epsilon: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Let the policy gradient flow into the source encoder.
    pub backprop_into_him: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_range: 0.2,
            entropy_coef: 0.01,
            value_loss_coef: 1.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            desired_kl: 0.01,
            learning_rate: 1e-3,
            num_epochs: 5,
            num_minibatches: 4,
            grad_clip: 10.0,
            adam_epsilon: 1e-8,
            actor_hidden: vec![512, 256, 128],
            critic_hidden: vec![512, 256, 128],
            init_log_std: 0.0,
            backprop_into_him: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HimConfig {
    pub history_len: usize,
    pub latent_dim: usize,
    pub num_prototypes: usize,
    pub temperature: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub contrastive_scale: f64,
    pub velocity_scale: f64,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub adam_epsilon: f64,
    pub num_epochs: usize,
    pub num_minibatches: usize,
    pub encoder_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    /// Std of the per-sequence observation noise; 0 disables augmentation.
    pub augmentation_noise: f64,
    pub freeze_prototypes: bool,
}

impl Default for HimConfig {
    fn default() -> Self {
        Self {
            history_len: 5,
            latent_dim: 16,
            num_prototypes: 16,
            temperature: 0.1,
            sinkhorn_epsilon: 0.05,
            sinkhorn_iters: 3,
            contrastive_scale: 1.0,
            velocity_scale: 1.0,
            learning_rate: 1e-3,
            grad_clip: 10.0,
            adam_epsilon: 1e-8,
            num_epochs: 5,
            num_minibatches: 4,
            encoder_hidden: vec![512, 256, 128],
            target_hidden: vec![128, 64],
            augmentation_noise: 0.01,
            freeze_prototypes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub terrain_curriculum: bool,
    /// Fraction of the maximum per-step linear tracking reward needed to promote.
    pub promote_threshold: f64,
    /// Fraction of the tile side an episode must cover to avoid demotion.
    pub demote_distance_fraction: f64,
    pub resample_interval: usize,
    /// Widen slope command ranges from the base range toward the maximum as tracking improves.
    pub command_curriculum: bool,
    pub command_step: f64,
    pub base_lin_range: f64,
    pub base_ang_range: f64,
    pub slope_max_lin_range: f64,
    pub slope_max_ang_range: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            terrain_curriculum: true,
            promote_threshold: 0.8,
            demote_distance_fraction: 0.5,
            resample_interval: 25,
            command_curriculum: true,
            command_step: 0.5,
            base_lin_range: 1.0,
            base_ang_range: 2.0,
            slope_max_lin_range: 3.0,
            slope_max_ang_range: 3.0,
        }
    }
}

/// Ablation switches. All off means the full method.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub zero_velocity_input: bool,
    pub drop_velocity_loss: bool,
    pub zero_latent_input: bool,
    pub drop_latent_loss: bool,
    /// Replace the swapped-prediction loss by an MSE to the stop-gradient target latent.
    pub regression_mode: bool,
    /// The encoder reads a history of full critic observations.
    pub oracle_mode: bool,
}

impl AblationSpec {
    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    pub rollout_length: usize,
    pub num_iterations: usize,
    pub seed: u64,
    pub sim_dt: f64,
    pub control_decimation: usize,
    pub checkpoint_every: usize,
    pub robot: RobotDescription,
    pub randomization: RandomizationRanges,
    pub terrain: TerrainConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub him: HimConfig,
    pub curriculum: CurriculumConfig,
    pub ablation: AblationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 4096,
            rollout_length: 100,
            num_iterations: 1000,
            seed: 0,
            sim_dt: 0.005,
            control_decimation: 4,
            checkpoint_every: 50,
            robot: RobotDescription::default(),
            randomization: RandomizationRanges::default(),
            terrain: TerrainConfig::default(),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            him: HimConfig::default(),
            curriculum: CurriculumConfig::default(),
            ablation: AblationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn policy_dt(&self) -> f64 {
        self.sim_dt * self.control_decimation as f64
    }

    pub fn episode_steps(&self) -> usize {
        (self.env.episode_length_s / self.policy_dt()).round().max(1.0) as usize
    }
}

/// Reads, defaults and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let cfg = parse_unvalidated::<TrainConfig>(text)?;
    let violations = validate(&cfg);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Parses any defaulted config section (used for stand-alone ablation specs too).
pub fn parse_unvalidated<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        ConfigError::Parse {
            line,
            message: e.message().to_string(),
        }
    })
}

/// Writes the flat `dotted.key = value` form; reparsing yields an equal config.
pub fn serialize<T: Serialize>(cfg: &T) -> String {
    let value = toml::Value::try_from(cfg).expect("config values are always representable");
    let mut out = String::new();
    if let toml::Value::Table(table) = value {
        flatten_into(&mut out, "", &table);
    }
    out
}

fn flatten_into(out: &mut String, prefix: &str, table: &toml::Table) {
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match value {
            toml::Value::Table(inner) => flatten_into(out, &path, inner),
            other => {
                let _ = writeln!(out, "{path} = {other}");
            }
        }
    }
}

/// Lists every violated invariant; empty iff the config is usable.
pub fn validate(cfg: &TrainConfig) -> Vec<String> {
    let mut v = Vec::new();
    let mut check = |ok: bool, msg: &str| {
        if !ok {
            v.push(msg.to_string());
        }
    };

    check(cfg.num_envs >= 1, "num_envs must be ≥ 1");
    // TOML integers are signed 64-bit.
    check(cfg.seed <= i64::MAX as u64, "seed must be ≤ 2^63 - 1");
    check(cfg.rollout_length >= 2, "rollout_length must be ≥ 2");
    check(cfg.sim_dt > 0.0 && cfg.sim_dt.is_finite(), "sim_dt must be > 0");
    check(cfg.control_decimation >= 1, "control_decimation must be ≥ 1");
    check(cfg.checkpoint_every >= 1, "checkpoint_every must be ≥ 1");

    let ppo = &cfg.ppo;
    check(ppo.gamma > 0.0 && ppo.gamma <= 1.0, "gamma must be in (0,1]");
    check((0.0..=1.0).contains(&ppo.gae_lambda), "gae_lambda must be in [0,1]");
    check(ppo.clip_range > 0.0, "clip_range must be > 0");
    check(ppo.learning_rate > 0.0, "ppo.learning_rate must be > 0");
    check(ppo.desired_kl > 0.0, "desired_kl must be > 0");
    check(ppo.num_epochs >= 1, "ppo.num_epochs must be ≥ 1");
    check(ppo.num_minibatches >= 1, "ppo.num_minibatches must be ≥ 1");
    check(ppo.grad_clip > 0.0, "ppo.grad_clip must be > 0");
    check(ppo.entropy_coef >= 0.0, "entropy_coef must be ≥ 0");

    let him = &cfg.him;
    check(him.history_len >= 1, "history_len must be ≥ 1");
    check(him.latent_dim >= 1, "latent_dim must be ≥ 1");
    check(him.num_prototypes >= 2, "num_prototypes must be ≥ 2");
    check(him.temperature > 0.0, "temperature must be > 0");
    check(him.sinkhorn_epsilon > 0.0, "sinkhorn_epsilon must be > 0");
    check(him.learning_rate > 0.0, "him.learning_rate must be > 0");
    check(him.grad_clip > 0.0, "him.grad_clip must be > 0");
    check(him.num_epochs >= 1, "him.num_epochs must be ≥ 1");
    check(him.num_minibatches >= 1, "him.num_minibatches must be ≥ 1");
    check(him.augmentation_noise >= 0.0, "augmentation_noise must be ≥ 0");

    let r = &cfg.robot;
    check(r.num_joints == 12, "num_joints must be 12");
    check(r.nominal_joint_positions.len() == 12, "nominal_joint_positions must have 12 entries");
    check(r.link_masses_nominal.len() == 12, "link_masses_nominal must have 12 entries");
    check(r.leg_link_lengths.iter().all(|&l| l > 0.0), "leg_link_lengths must be > 0");
    check(r.base_mass_nominal > 0.0, "base_mass_nominal must be > 0");
    check(r.link_masses_nominal.iter().all(|&m| m > 0.0), "link_masses_nominal must be > 0");
    check(r.motor_torque_nominal > 0.0, "motor_torque_nominal must be > 0");
    check(r.joint_inertia > 0.0, "joint_inertia must be > 0");
    check(
        [0, 4, 8].iter().all(|&i| r.base_inertia_nominal[i] > 0.0),
        "base_inertia_nominal diagonal must be > 0",
    );
    let within_limits = r.nominal_joint_positions.iter().enumerate().all(|(j, &q)| {
        let k = j % 3;
        q >= r.joint_lower_limits[k] && q <= r.joint_upper_limits[k]
    });
    check(within_limits, "nominal_joint_positions must lie within joint limits");

    check(cfg.env.physics_substeps >= 1, "physics_substeps must be ≥ 1");
    check(cfg.env.contact_stiffness > 0.0, "contact_stiffness must be > 0");

    let t = &cfg.terrain;
    let total: f64 = t.proportions.iter().sum();
    check(
        (total - 1.0).abs() <= 1e-9 && t.proportions.iter().all(|&p| p >= 0.0),
        "terrain.proportions must be non-negative and sum to 1",
    );
    check(t.tile_rows >= 1 && t.tile_cols >= 1, "terrain tiles must be ≥ 1");
    check(t.cell_size > 0.0 && t.tile_side > 0.0, "terrain sizes must be > 0");
    check(t.max_level <= 9, "terrain.max_level must be ≤ 9");

    let e = &cfg.env;
    check(e.episode_length_s > 0.0, "episode_length_s must be > 0");
    check(e.action_scale > 0.0 && e.action_scale <= 1.0, "action_scale must be in (0,1]");
    check(e.action_clip > 0.0, "action_clip must be > 0");
    check(e.contact_stiffness > 0.0, "contact_stiffness must be > 0");

    check(cfg.curriculum.resample_interval >= 1, "resample_interval must be ≥ 1");

    let rr = &cfg.randomization;
    let named = [
        ("body_mass_scale", rr.body_mass_scale),
        ("link_mass_scale", rr.link_mass_scale),
        ("com_offset.x", rr.com_offset[0]),
        ("com_offset.y", rr.com_offset[1]),
        ("com_offset.z", rr.com_offset[2]),
        ("payload", rr.payload),
        ("friction", rr.friction),
        ("restitution", rr.restitution),
        ("motor_strength_scale", rr.motor_strength_scale),
        ("kp_scale", rr.kp_scale),
        ("kd_scale", rr.kd_scale),
        ("init_joint_scale", rr.init_joint_scale),
        ("external_force.x", rr.external_force[0]),
        ("external_force.y", rr.external_force[1]),
        ("external_force.z", rr.external_force[2]),
    ];
    for (name, iv) in named {
        if !(iv.min.is_finite() && iv.max.is_finite()) {
            v.push(format!("{name}: bounds must be finite"));
        } else if iv.min > iv.max {
            v.push(format!("{name}: min > max"));
        }
    }
    if rr.delay_steps[0] > rr.delay_steps[1] {
        v.push("delay_steps: min > max".to_string());
    }
    if rr.delay_steps[1] > 3 {
        v.push("delay_steps: max must be ≤ 3".to_string());
    }
    if rr.friction.min < 0.0 {
        v.push("friction: must be ≥ 0".to_string());
    }
    if !(rr.restitution.min >= 0.0 && rr.restitution.max <= 1.0) {
        v.push("restitution: must lie in [0,1]".to_string());
    }
    v
}
