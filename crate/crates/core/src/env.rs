//! Batched RL environment on top of the surrogate simulator.

use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CurriculumConfig, TrainConfig};
use crate::num::Real;
use crate::rewards::{self, RewardInputs, RewardTargets, NUM_TERMS};
use crate::sim::{self, ContactModel, EnvPhysicsParams, RobotModel, RobotState, NUM_JOINTS};
use crate::terrain::{HeightField, TerrainType, NUM_HEIGHT_SAMPLES};

pub const ACTION_DIM: usize = NUM_JOINTS;
pub const OBS_DIM: usize = 45;
pub const CRITIC_OBS_DIM: usize = OBS_DIM + 3 + NUM_HEIGHT_SAMPLES;

pub const JOINT_VEL_SCALE: f64 = 0.05;
pub const ANG_VEL_SCALE: f64 = 0.25;
pub const FORCE_SCALE: f64 = 0.1;
pub const HEIGHT_SCALE: f64 = 5.0;
/// Random spawn offset from the tile center, m.
pub const SPAWN_JITTER: f64 = 0.5;

/// Half-widths of the uniform command distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRanges {
    pub lin_x: f64,
    pub lin_y: f64,
    pub ang: f64,
}

impl CommandRanges {
    pub fn initial(kind: TerrainType, cfg: &CurriculumConfig) -> Self {
        let base = Self { lin_x: cfg.base_lin_range, lin_y: cfg.base_lin_range, ang: cfg.base_ang_range };
        if kind.is_sloped() && !cfg.command_curriculum {
            Self { lin_x: cfg.slope_max_lin_range, ang: cfg.slope_max_ang_range, ..base }
        } else {
            base
        }
    }
}

pub fn sample_command<R: Rng + ?Sized>(r: &CommandRanges, rng: &mut R) -> [f64; 3] {
    let mut u = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
    [u(r.lin_x), u(r.lin_y), u(r.ang)]
}

/// New terrain level after an episode: promotion beats demotion; a promoted
/// robot at the top level is respawned at a uniform random level.
pub fn next_level<R: Rng + ?Sized>(
    level: u8,
    mean_lin_track: f64,
    distance: f64,
    tile_side: f64,
    max_level: u8,
    cfg: &CurriculumConfig,
    rng: &mut R,
) -> u8 {
    if mean_lin_track >= cfg.promote_threshold {
        if level >= max_level {
            rng.random_range(0..=max_level)
        } else {
            level + 1
        }
    } else if distance < cfg.demote_distance_fraction * tile_side {
        level.saturating_sub(1)
    } else {
        level.min(max_level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub env: usize,
    pub kind: TerrainType,
    pub level: u8,
    pub next_level: u8,
    pub steps: usize,
    pub mean_lin_track: f64,
    pub distance: f64,
    pub ret: f64,
}

/// Per-env outcome of one policy step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub reward: f64,
    pub terms: [f64; NUM_TERMS],
    pub terminated: bool,
    pub truncated: bool,
    /// Observation reached by the step, before any reset.
    pub next_frame: [f64; OBS_DIM],
    /// Critic observation reached by the step, before any reset.
    pub next_critic: Vec<f64>,
    pub episode: Option<EpisodeSummary>,
    /// Command in effect during the step.
    pub command: [f64; 3],
    /// Body-frame base velocities at the end of the step (before any reset).
    pub lin_vel: [f64; 3],
    pub ang_vel: [f64; 3],
}

impl StepRecord {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// How commands are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CommandMode {
    /// Per-terrain-type ranges, widened by the command curriculum.
    Curriculum,
    /// Fixed ranges for every env.
    Fixed(CommandRanges),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvInstance {
    pub robot: RobotState,
    pub params: EnvPhysicsParams,
    pub rng: ChaCha8Rng,
    pub command: [f64; 3],
    /// Past frames, oldest first.
    pub history: Vec<Vec<f64>>,
    pub critic_history: Vec<Vec<f64>>,
    pub last_action: [f64; ACTION_DIM],
    pub prev_action: [f64; ACTION_DIM],
    pub episode_step: usize,
    pub row: usize,
    pub kind: TerrainType,
    pub level: u8,
    pub spawn: [f64; 2],
    pub ep_lin_track: f64,
    pub ep_return: f64,
}

/// Serializable part of a [`VecEnv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VecEnvState {
    pub envs: Vec<EnvInstance>,
    pub command_ranges: [CommandRanges; 4],
}

pub struct VecEnv {
    pub shared: EnvShared,
    pub state: VecEnvState,
    pub command_mode: CommandMode,
    /// Terrain and command curricula active.
    pub curriculum: bool,
    pub max_level: u8,
}

impl VecEnv {
    /// Builds `cfg.num_envs` environments, all reset at level 0.
    pub fn new(cfg: &TrainConfig, field: Arc<HeightField>, seed: u64) -> Self {
        let model = RobotModel::new(&cfg.robot);
        let max_level = cfg.terrain.max_level;
        let command_ranges = std::array::from_fn(|i| CommandRanges::initial(TerrainType::ALL[i], &cfg.curriculum));
        let envs = (0..cfg.num_envs)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                let row = i % field.tile_rows;
                let kind = field.row_type(row);
                let params = EnvPhysicsParams::nominal(&cfg.robot, &cfg.randomization);
                EnvInstance {
                    robot: RobotState::at_rest(&model, Vector3::zeros(), 0.0, model.nominal_joints),
                    params,
                    rng,
                    command: [0.0; 3],
                    history: Vec::new(),
                    critic_history: Vec::new(),
                    last_action: [0.0; ACTION_DIM],
                    prev_action: [0.0; ACTION_DIM],
                    episode_step: 0,
                    row,
                    kind,
                    level: 0,
                    spawn: [0.0; 2],
                    ep_lin_track: 0.0,
                    ep_return: 0.0,
                }
            })
            .collect();
        let mut env = Self {
            shared: EnvShared {
                cfg: cfg.clone(),
                model,
                contact: ContactModel::from_config(&cfg.env),
                targets: RewardTargets::from_robot(&cfg.robot),
                field,
                keep_critic_history: cfg.ablation.oracle_mode,
            },
            state: VecEnvState { envs, command_ranges },
            command_mode: CommandMode::Curriculum,
            curriculum: cfg.curriculum.terrain_curriculum,
            max_level,
        };
        env.reset_all();
        env
    }

    pub fn num_envs(&self) -> usize {
        self.state.envs.len()
    }

    pub fn history_len(&self) -> usize {
        self.shared.cfg.him.history_len
    }

    /// Places env `i` on a given terrain row and level; takes effect at its
    /// next reset.
    pub fn set_terrain(&mut self, i: usize, row: usize, level: u8) {
        let e = &mut self.state.envs[i];
        e.row = row;
        e.kind = self.shared.field.row_type(row);
        e.level = level.min(self.max_level);
    }

    pub fn reset_all(&mut self) {
        let ctx = &self.shared;
        let ranges = self.state.command_ranges;
        let mode = self.command_mode;
        self.state.envs.par_iter_mut().for_each(|e| ctx.reset(e, &ranges, mode));
    }

    fn ctx(&self) -> &EnvShared {
        &self.shared
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.shared.cfg
    }

    pub fn field(&self) -> &HeightField {
        &self.shared.field
    }

    pub fn model(&self) -> &RobotModel {
        &self.shared.model
    }

    /// Applies one action row per env and advances every env by one policy step.
    pub fn step<T: Real>(&mut self, actions: &[T]) -> Vec<StepRecord> {
        assert_eq!(actions.len(), self.num_envs() * ACTION_DIM, "action batch has wrong size");
        let ctx = &self.shared;
        let ranges = self.state.command_ranges;
        let mode = self.command_mode;
        let curriculum = self.curriculum;
        let max_level = self.max_level;
        let mut records: Vec<StepRecord> = self
            .state
            .envs
            .par_iter_mut()
            .zip(actions.par_chunks_exact(ACTION_DIM))
            .map(|(e, a)| {
                let a: [f64; ACTION_DIM] = std::array::from_fn(|j| a[j].to_f64_lossy());
                ctx.step(e, &a, &ranges, mode, curriculum, max_level)
            })
            .collect();
        for (i, r) in records.iter_mut().enumerate() {
            if let Some(ep) = r.episode.as_mut() {
                ep.env = i;
            }
        }
        if curriculum && self.shared.cfg.curriculum.command_curriculum && mode == CommandMode::Curriculum {
            for ep in records.iter().filter_map(|r| r.episode.as_ref()) {
                self.widen_commands(ep);
            }
        }
        records
    }

    fn widen_commands(&mut self, ep: &EpisodeSummary) {
        if !ep.kind.is_sloped() || ep.mean_lin_track < self.shared.cfg.curriculum.promote_threshold {
            return;
        }
        let c = &self.shared.cfg.curriculum;
        let r = &mut self.state.command_ranges[ep.kind.index()];
        r.lin_x = (r.lin_x + c.command_step).min(c.slope_max_lin_range);
        r.ang = (r.ang + c.command_step).min(c.slope_max_ang_range);
    }

    pub fn write_obs<T: Real>(&self, out: &mut [T]) {
        for (e, o) in self.state.envs.iter().zip(out.chunks_exact_mut(OBS_DIM)) {
            let f = self.ctx().frame(e);
            for (d, s) in o.iter_mut().zip(f.iter()) {
                *d = T::lit(*s);
            }
        }
    }

    /// Past frames followed by the current frame, per env.
    pub fn write_history<T: Real>(&self, out: &mut [T]) {
        let w = OBS_DIM * (self.history_len() + 1);
        for (e, o) in self.state.envs.iter().zip(out.chunks_exact_mut(w)) {
            let cur = self.ctx().frame(e);
            let frames = e.history.iter().map(Vec::as_slice).chain(std::iter::once(&cur[..]));
            for (dst, src) in o.chunks_exact_mut(OBS_DIM).zip(frames) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::lit(*s);
                }
            }
        }
    }

    pub fn write_critic_obs<T: Real>(&self, out: &mut [T]) {
        for (e, o) in self.state.envs.iter().zip(out.chunks_exact_mut(CRITIC_OBS_DIM)) {
            let c = self.ctx().critic_frame(e);
            for (d, s) in o.iter_mut().zip(&c) {
                *d = T::lit(*s);
            }
        }
    }

    /// Past critic frames followed by the current one (oracle input).
    pub fn write_critic_history<T: Real>(&self, out: &mut [T]) {
        let w = CRITIC_OBS_DIM * (self.history_len() + 1);
        for (e, o) in self.state.envs.iter().zip(out.chunks_exact_mut(w)) {
            let cur = self.ctx().critic_frame(e);
            let frames = e.critic_history.iter().map(Vec::as_slice).chain(std::iter::once(&cur[..]));
            for (dst, src) in o.chunks_exact_mut(CRITIC_OBS_DIM).zip(frames) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::lit(*s);
                }
            }
        }
    }

    /// Body-frame base velocity per env.
    pub fn write_velocities<T: Real>(&self, out: &mut [T]) {
        for (e, o) in self.state.envs.iter().zip(out.chunks_exact_mut(3)) {
            let v = e.robot.lin_vel_body();
            for k in 0..3 {
                o[k] = T::lit(v[k]);
            }
        }
    }

    pub fn levels(&self) -> Vec<u8> {
        self.state.envs.iter().map(|e| e.level).collect()
    }

    /// Mean curriculum level per terrain type (NaN when no env has that type).
    pub fn mean_level_by_type(&self) -> [f64; 4] {
        let mut sum = [0.0; 4];
        let mut n = [0usize; 4];
        for e in &self.state.envs {
            sum[e.kind.index()] += e.level as f64;
            n[e.kind.index()] += 1;
        }
        std::array::from_fn(|i| if n[i] > 0 { sum[i] / n[i] as f64 } else { f64::NAN })
    }
}

/// Read-only data shared by the per-env workers.
pub struct EnvShared {
    pub cfg: TrainConfig,
    pub model: RobotModel,
    pub contact: ContactModel,
    pub field: Arc<HeightField>,
    pub targets: RewardTargets,
    pub keep_critic_history: bool,
}

impl EnvShared {
    fn ground(&self, e: &EnvInstance) -> f64 {
        self.field.height_clamped(e.robot.base_position.x, e.robot.base_position.y)
    }

    fn frame(&self, e: &EnvInstance) -> [f64; OBS_DIM] {
        let r = &e.robot;
        let mut f = [0.0; OBS_DIM];
        f[..3].copy_from_slice(&e.command);
        for j in 0..NUM_JOINTS {
            f[3 + j] = r.joint_pos[j] - self.model.nominal_joints[j];
            f[15 + j] = r.joint_vel[j] * JOINT_VEL_SCALE;
        }
        for k in 0..3 {
            f[27 + k] = r.base_ang_vel[k] * ANG_VEL_SCALE;
            f[30 + k] = r.gravity_body[k];
        }
        f[33..45].copy_from_slice(&e.last_action);
        f
    }

    fn critic_frame(&self, e: &EnvInstance) -> Vec<f64> {
        let mut c = Vec::with_capacity(CRITIC_OBS_DIM);
        c.extend_from_slice(&self.frame(e));
        c.extend(e.params.external_force.iter().map(|f| f * FORCE_SCALE));
        let mut h = [0.0; NUM_HEIGHT_SAMPLES];
        let p = e.robot.base_position;
        self.field.height_samples([p.x, p.y, p.z], e.robot.yaw(), &mut h);
        let target = self.cfg.robot.base_height_target;
        c.extend(h.iter().map(|&d| (-d - target).clamp(-1.0, 1.0) * HEIGHT_SCALE));
        c
    }

    fn reset(&self, e: &mut EnvInstance, ranges: &[CommandRanges; 4], mode: CommandMode) {
        let cfg = &self.cfg;
        e.params = sim::randomize(&cfg.randomization, &cfg.robot, &mut e.rng);
        let col = self.field.column_for_level(e.level);
        let (cx, cy) = self.field.tile_center(e.row, col);
        let x = cx + e.rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER);
        let y = cy + e.rng.random_range(-SPAWN_JITTER..=SPAWN_JITTER);
        let yaw = e.rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let joints: [f64; NUM_JOINTS] = std::array::from_fn(|j| {
            (self.model.nominal_joints[j] * e.params.init_joint_scale[j]).clamp(self.model.lower[j], self.model.upper[j])
        });
        let z = sim::standing_height(&self.model, &self.field, (x, y), yaw, &joints, &e.params.com_offset);
        e.robot = RobotState::at_rest(&self.model, Vector3::new(x, y, z), yaw, joints);
        e.robot.target_queue = [self.model.nominal_joints; sim::MAX_DELAY + 1];
        e.robot.refresh_derived(&self.model, &e.params.com_offset);
        e.spawn = [x, y];
        e.last_action = [0.0; ACTION_DIM];
        e.prev_action = [0.0; ACTION_DIM];
        e.episode_step = 0;
        e.ep_lin_track = 0.0;
        e.ep_return = 0.0;
        e.command = self.sample_command(e, ranges, mode);
        let f = self.frame(e).to_vec();
        e.history = vec![f; cfg.him.history_len];
        if self.keep_critic_history {
            let c = self.critic_frame(e);
            e.critic_history = vec![c; cfg.him.history_len];
        } else {
            e.critic_history.clear();
        }
    }

    fn sample_command(&self, e: &mut EnvInstance, ranges: &[CommandRanges; 4], mode: CommandMode) -> [f64; 3] {
        let r = match mode {
            CommandMode::Curriculum => ranges[e.kind.index()],
            CommandMode::Fixed(r) => r,
        };
        sample_command(&r, &mut e.rng)
    }

    fn step(
        &self,
        e: &mut EnvInstance,
        action: &[f64; ACTION_DIM],
        ranges: &[CommandRanges; 4],
        mode: CommandMode,
        curriculum: bool,
        max_level: u8,
    ) -> StepRecord {
        let cfg = &self.cfg;
        let clip = cfg.env.action_clip;
        let a: [f64; ACTION_DIM] = std::array::from_fn(|j| {
            let v = action[j];
            if v.is_finite() {
                v.clamp(-clip, clip)
            } else {
                0.0
            }
        });
        let cur_frame = self.frame(e);
        let cur_critic = if self.keep_critic_history { Some(self.critic_frame(e)) } else { None };

        let target: [f64; NUM_JOINTS] =
            std::array::from_fn(|j| self.model.nominal_joints[j] + cfg.env.action_scale * a[j]);
        e.robot.push_target(target);
        for _ in 0..cfg.control_decimation {
            sim::step(&mut e.robot, &e.params, &self.model, &self.contact, &self.field, cfg.sim_dt);
            if e.robot.blown_up {
                break;
            }
        }

        let ground = self.ground(e);
        let inputs = RewardInputs::from_state(&e.robot, ground, e.command, a, e.last_action, e.prev_action);
        let rb = rewards::compute(&inputs, &self.targets, cfg.policy_dt());
        let mut reward = if rb.total.is_finite() { rb.total } else { 0.0 };
        if cfg.env.only_positive_rewards {
            reward = reward.max(0.0);
        }
        let terminated = rewards::terminated(&e.robot, ground) || !rb.total.is_finite();

        e.prev_action = e.last_action;
        e.last_action = a;
        e.episode_step += 1;
        e.ep_lin_track += rb.terms[0];
        e.ep_return += reward;
        let truncated = !terminated && e.episode_step >= cfg.episode_steps();

        if cfg.curriculum.resample_interval > 0 && e.episode_step % cfg.curriculum.resample_interval == 0 {
            e.command = self.sample_command(e, ranges, mode);
        }

        // Slide the history window: the frame observed before this step
        // becomes the newest past frame.
        if !e.history.is_empty() {
            e.history.remove(0);
            e.history.push(cur_frame.to_vec());
        }
        if let Some(c) = cur_critic {
            if !e.critic_history.is_empty() {
                e.critic_history.remove(0);
                e.critic_history.push(c);
            }
        }

        let next_frame = self.frame(e);
        let next_critic = self.critic_frame(e);
        let mut episode = None;
        if terminated || truncated {
            let steps = e.episode_step;
            let mean_lin_track = e.ep_lin_track / steps.max(1) as f64;
            let p = e.robot.base_position;
            let distance = if p.x.is_finite() && p.y.is_finite() {
                ((p.x - e.spawn[0]).powi(2) + (p.y - e.spawn[1]).powi(2)).sqrt()
            } else {
                0.0
            };
            let level = e.level;
            if curriculum {
                e.level = next_level(
                    level,
                    mean_lin_track,
                    distance,
                    self.field.tile_side,
                    max_level,
                    &cfg.curriculum,
                    &mut e.rng,
                );
            }
            episode = Some(EpisodeSummary {
                env: 0,
                kind: e.kind,
                level,
                next_level: e.level,
                steps,
                mean_lin_track,
                distance,
                ret: e.ep_return,
            });
            self.reset(e, ranges, mode);
        }
        StepRecord {
            reward,
            terms: rb.terms,
            terminated,
            truncated,
            next_frame,
            next_critic,
            episode,
            command: inputs.command,
            lin_vel: inputs.lin_vel.into(),
            ang_vel: inputs.ang_vel.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RandomizationRanges, TerrainConfig};
    use crate::terrain::build_field_with;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            num_envs: 8,
            terrain: TerrainConfig { tile_rows: 4, tile_cols: 10, ..TerrainConfig::default() },
            ..TrainConfig::default()
        }
    }

    fn make(cfg: &TrainConfig, seed: u64) -> VecEnv {
        let field = Arc::new(build_field_with(cfg.seed, &cfg.terrain).unwrap());
        VecEnv::new(cfg, field, seed)
    }

    #[test]
    fn first_reset_is_level_zero_and_history_backfilled() {
        let cfg = small_cfg();
        let env = make(&cfg, 3);
        assert!(env.levels().iter().all(|&l| l == 0));
        let mut h = vec![0.0f64; cfg.num_envs * OBS_DIM * 6];
        env.write_history(&mut h);
        let w = OBS_DIM * 6;
        for row in h.chunks(w) {
            for f in 1..6 {
                assert_eq!(&row[..OBS_DIM], &row[f * OBS_DIM..(f + 1) * OBS_DIM]);
            }
        }
    }

    #[test]
    fn collapsed_init_scale_starts_at_nominal() {
        let mut cfg = small_cfg();
        cfg.randomization = RandomizationRanges::nominal();
        let env = make(&cfg, 1);
        for e in &env.state.envs {
            assert_eq!(e.robot.joint_pos, env.model().nominal_joints);
        }
    }

    #[test]
    fn same_seed_same_reset() {
        let cfg = small_cfg();
        let a = make(&cfg, 9);
        let b = make(&cfg, 9);
        for (x, y) in a.state.envs.iter().zip(&b.state.envs) {
            assert_eq!(x.robot, y.robot);
            assert_eq!(x.params, y.params);
            assert_eq!(x.command, y.command);
        }
    }

    #[test]
    fn command_resamples_every_interval() {
        let cfg = small_cfg();
        let mut env = make(&cfg, 2);
        let zeros = vec![0.0f32; cfg.num_envs * ACTION_DIM];
        let before: Vec<[f64; 3]> = env.state.envs.iter().map(|e| e.command).collect();
        for step in 1..=25 {
            env.step(&zeros);
            let now: Vec<[f64; 3]> = env.state.envs.iter().map(|e| e.command).collect();
            for (i, e) in env.state.envs.iter().enumerate() {
                if e.episode_step == step {
                    if step < 25 {
                        assert_eq!(now[i], before[i]);
                    } else {
                        assert_ne!(now[i], before[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_action_from_stance() {
        let cfg = small_cfg();
        let mut env = make(&cfg, 4);
        for e in env.state.envs.iter_mut() {
            e.command = [0.8, 0.0, 0.0];
        }
        let recs = env.step(&vec![0.0f32; cfg.num_envs * ACTION_DIM]);
        for r in &recs {
            assert!(r.terms[0] < 1.0);
            assert!(r.terms[2..].iter().any(|&t| t > 0.0));
        }
    }

    #[test]
    fn actor_observation_excludes_privileged_values() {
        let cfg = small_cfg();
        let mut env = make(&cfg, 5);
        let mut o1 = vec![0.0f64; cfg.num_envs * OBS_DIM];
        env.write_obs(&mut o1);
        for e in env.state.envs.iter_mut() {
            e.params.external_force = [25.0, -20.0, 10.0];
            e.params.friction = 0.2;
        }
        let mut o2 = vec![0.0f64; cfg.num_envs * OBS_DIM];
        env.write_obs(&mut o2);
        assert_eq!(o1, o2);
        let mut c = vec![0.0f64; cfg.num_envs * CRITIC_OBS_DIM];
        env.write_critic_obs(&mut c);
        assert!((c[OBS_DIM] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn action_mapping_and_clip() {
        let cfg = small_cfg();
        let mut env = make(&cfg, 6);
        let clip = cfg.env.action_clip as f32;
        let mut a = vec![0.0f32; cfg.num_envs * ACTION_DIM];
        a[..ACTION_DIM].iter_mut().for_each(|v| *v = 1.0);
        a[ACTION_DIM..2 * ACTION_DIM].iter_mut().for_each(|v| *v = 10.0 * clip);
        env.step(&a);
        let e0 = &env.state.envs[0];
        let e1 = &env.state.envs[1];
        for j in 0..ACTION_DIM {
            assert!((e0.robot.target_queue[0][j] - (env.model().nominal_joints[j] + 0.25)).abs() < 1e-12);
            assert_eq!(e1.last_action[j], clip as f64);
        }
    }

    #[test]
    fn curriculum_rules() {
        let c = CurriculumConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(next_level(3, 0.85, 0.0, 10.0, 9, &c, &mut rng), 4);
        assert_eq!(next_level(3, 0.5, 4.0, 10.0, 9, &c, &mut rng), 2);
        assert_eq!(next_level(3, 0.5, 6.0, 10.0, 9, &c, &mut rng), 3);
        assert_eq!(next_level(0, 0.1, 0.0, 10.0, 9, &c, &mut rng), 0);
        let mut seen = [false; 10];
        for _ in 0..500 {
            seen[next_level(9, 0.85, 0.0, 10.0, 9, &c, &mut rng) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn stair_commands_stay_in_range() {
        let r = CommandRanges::initial(TerrainType::Stairs, &CurriculumConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let c = sample_command(&r, &mut rng);
            assert!(c[2].abs() <= 2.0 && c[0].abs() <= 1.0 && c[1].abs() <= 1.0);
            sum += c[2];
        }
        assert!((sum / n as f64).abs() < 0.02);
        let zero = CommandRanges { lin_x: 0.0, lin_y: 0.0, ang: 0.0 };
        assert_eq!(sample_command(&zero, &mut rng), [0.0; 3]);
        let mut no_cur = CurriculumConfig::default();
        no_cur.command_curriculum = false;
        let s = CommandRanges::initial(TerrainType::Slope, &no_cur);
        assert_eq!((s.lin_x, s.lin_y, s.ang), (3.0, 1.0, 3.0));
    }
}
