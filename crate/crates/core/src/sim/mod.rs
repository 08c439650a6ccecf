//! Surrogate quadruped dynamics.
//!
//! Each joint is a PD-driven second-order system loaded by the ground force
//! at its foot; feet press into the heightfield through spring-damper
//! contacts with a Coulomb-clamped tangential force. The base is a single
//! rigid body integrated with semi-implicit Euler.
//!
//! All environments are independent: [`step_all`] fans out across the rayon
//! pool and produces the same result for any worker count.

pub mod kinematics;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, Interval, RandomizationRanges, RobotDescription};
use crate::terrain::HeightField;

pub use kinematics::{leg_slice, LegGeometry, JOINTS_PER_LEG, NUM_JOINTS, NUM_LEGS};

pub const GRAVITY: f64 = 9.81;
/// Any state magnitude above this flags the environment for reset.
pub const BLOW_UP_LIMIT: f64 = 1e6;
/// Longest supported action delay in control ticks.
pub const MAX_DELAY: usize = 3;

/// Per-environment physical parameters drawn at every reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPhysicsParams {
    pub body_mass: f64,
    pub link_masses: [f64; NUM_JOINTS],
    pub com_offset: [f64; 3],
    pub payload: f64,
    pub friction: f64,
    pub restitution: f64,
    /// Multiplies the nominal motor torque limit.
    pub motor_strength: f64,
    pub kp: f64,
    pub kd: f64,
    pub delay_steps: u32,
    /// Constant body-frame push for the episode, N.
    pub external_force: [f64; 3],
    pub init_joint_scale: [f64; NUM_JOINTS],
}

impl EnvPhysicsParams {
    pub fn nominal(robot: &RobotDescription, ranges: &RandomizationRanges) -> Self {
        Self {
            body_mass: robot.base_mass_nominal,
            link_masses: std::array::from_fn(|j| robot.link_masses_nominal[j]),
            com_offset: [0.0; 3],
            payload: 0.0,
            friction: 1.0,
            restitution: 0.0,
            motor_strength: 1.0,
            kp: ranges.kp_nominal,
            kd: ranges.kd_nominal,
            delay_steps: 0,
            external_force: [0.0; 3],
            init_joint_scale: [1.0; NUM_JOINTS],
        }
    }

    pub fn total_mass(&self) -> f64 {
        (self.body_mass + self.link_masses.iter().sum::<f64>() + self.payload).max(1e-3)
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, iv: Interval) -> f64 {
    if iv.max > iv.min {
        rng.random_range(iv.min..=iv.max)
    } else {
        iv.min
    }
}

/// Draws every parameter uniformly and independently from its interval.
pub fn randomize<R: Rng + ?Sized>(
    ranges: &RandomizationRanges,
    robot: &RobotDescription,
    rng: &mut R,
) -> EnvPhysicsParams {
    let body_mass = robot.base_mass_nominal * draw(rng, ranges.body_mass_scale);
    let link_masses = std::array::from_fn(|j| robot.link_masses_nominal[j] * draw(rng, ranges.link_mass_scale));
    let com_offset = std::array::from_fn(|k| draw(rng, ranges.com_offset[k]));
    let payload = draw(rng, ranges.payload);
    let friction = draw(rng, ranges.friction);
    let restitution = draw(rng, ranges.restitution);
    let motor_strength = draw(rng, ranges.motor_strength_scale);
    let kp = ranges.kp_nominal * draw(rng, ranges.kp_scale);
    let kd = ranges.kd_nominal * draw(rng, ranges.kd_scale);
    let [dlo, dhi] = ranges.delay_steps;
    let delay_steps = if dhi > dlo { rng.random_range(dlo..=dhi) } else { dlo };
    let external_force = std::array::from_fn(|k| draw(rng, ranges.external_force[k]));
    let init_joint_scale = std::array::from_fn(|_| draw(rng, ranges.init_joint_scale));
    EnvPhysicsParams {
        body_mass,
        link_masses,
        com_offset,
        payload,
        friction,
        restitution,
        motor_strength,
        kp,
        kd,
        delay_steps: delay_steps.min(MAX_DELAY as u32),
        external_force,
        init_joint_scale,
    }
}

/// Constant robot model shared by all environments.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub legs: LegGeometry,
    pub nominal_joints: [f64; NUM_JOINTS],
    pub lower: [f64; NUM_JOINTS],
    pub upper: [f64; NUM_JOINTS],
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub motor_torque_nominal: f64,
    pub base_inertia: Matrix3<f64>,
    pub nominal_mass: f64,
    pub base_height_target: f64,
    pub foot_clearance_target: f64,
}

impl RobotModel {
    pub fn new(robot: &RobotDescription) -> Self {
        Self {
            legs: LegGeometry::from_description(robot),
            nominal_joints: std::array::from_fn(|j| robot.nominal_joint_positions[j]),
            lower: std::array::from_fn(|j| robot.joint_lower_limits[j % 3]),
            upper: std::array::from_fn(|j| robot.joint_upper_limits[j % 3]),
            joint_inertia: robot.joint_inertia,
            joint_damping: robot.joint_damping,
            motor_torque_nominal: robot.motor_torque_nominal,
            base_inertia: Matrix3::from_row_slice(&robot.base_inertia_nominal),
            nominal_mass: robot.base_mass_nominal + robot.link_masses_nominal.iter().sum::<f64>(),
            base_height_target: robot.base_height_target,
            foot_clearance_target: robot.foot_clearance_target,
        }
    }

    /// Body-frame foot positions for a joint configuration.
    pub fn feet_body(&self, joints: &[f64; NUM_JOINTS]) -> [Vector3<f64>; NUM_LEGS] {
        std::array::from_fn(|leg| self.legs.forward_kinematics(leg_slice(joints, leg), leg))
    }
}

/// Soft foot contact against the heightfield.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactModel {
    pub stiffness: f64,
    pub damping_max: f64,
    pub damping_min: f64,
    pub tangential: f64,
    pub tangential_stiffness: f64,
    pub substeps: usize,
}

impl ContactModel {
    pub fn from_config(env: &EnvConfig) -> Self {
        Self {
            stiffness: env.contact_stiffness,
            damping_max: env.contact_damping_max,
            damping_min: env.contact_damping_min,
            tangential: env.contact_tangential_damping,
            tangential_stiffness: env.contact_tangential_stiffness,
            substeps: env.physics_substeps.max(1),
        }
    }

    pub fn normal_damping(&self, restitution: f64) -> f64 {
        self.damping_min + self.damping_max * (1.0 - restitution.clamp(0.0, 1.0))
    }
}

/// Full state of one simulated robot.
///
/// The base position is the center of mass; the randomized CoM offset moves
/// the hip mounts relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    /// World frame.
    pub base_lin_vel: Vector3<f64>,
    /// Body frame.
    pub base_ang_vel: Vector3<f64>,
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    pub joint_acc: [f64; NUM_JOINTS],
    pub joint_torque: [f64; NUM_JOINTS],
    /// World frame.
    pub foot_pos: [Vector3<f64>; NUM_LEGS],
    /// World frame.
    pub foot_vel: [Vector3<f64>; NUM_LEGS],
    pub foot_normal_force: [f64; NUM_LEGS],
    /// Stick point of each foot in contact; it follows the foot while slipping.
    pub foot_anchor: [Option<Vector3<f64>>; NUM_LEGS],
    /// Unit gravity direction in the body frame.
    pub gravity_body: Vector3<f64>,
    pub time: f64,
    pub blown_up: bool,
    /// Joint targets of the last `MAX_DELAY + 1` control ticks, newest first.
    pub target_queue: [[f64; NUM_JOINTS]; MAX_DELAY + 1],
}

impl RobotState {
    /// Robot at rest with the given joints, base at `position`, yawed by `yaw`.
    pub fn at_rest(model: &RobotModel, position: Vector3<f64>, yaw: f64, joints: [f64; NUM_JOINTS]) -> Self {
        let mut s = Self {
            base_position: position,
            base_orientation: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            joint_pos: joints,
            joint_vel: [0.0; NUM_JOINTS],
            joint_acc: [0.0; NUM_JOINTS],
            joint_torque: [0.0; NUM_JOINTS],
            foot_pos: [Vector3::zeros(); NUM_LEGS],
            foot_vel: [Vector3::zeros(); NUM_LEGS],
            foot_normal_force: [0.0; NUM_LEGS],
            foot_anchor: [None; NUM_LEGS],
            gravity_body: Vector3::new(0.0, 0.0, -1.0),
            time: 0.0,
            blown_up: false,
            target_queue: [joints; MAX_DELAY + 1],
        };
        s.refresh_derived(model, &[0.0; 3]);
        s
    }

    pub fn lin_vel_body(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&self.base_lin_vel)
    }

    pub fn yaw(&self) -> f64 {
        self.base_orientation.euler_angles().2
    }

    /// Queues a new joint target; the step applies the one `delay` ticks old.
    pub fn push_target(&mut self, target: [f64; NUM_JOINTS]) {
        for i in (1..self.target_queue.len()).rev() {
            self.target_queue[i] = self.target_queue[i - 1];
        }
        self.target_queue[0] = target;
    }

    /// Recomputes gravity direction and world foot kinematics.
    pub fn refresh_derived(&mut self, model: &RobotModel, com_offset: &[f64; 3]) {
        let rot = self.base_orientation;
        self.gravity_body = rot.inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0));
        let com = Vector3::from(*com_offset);
        let omega_world = rot.transform_vector(&self.base_ang_vel);
        for leg in 0..NUM_LEGS {
            let q = leg_slice(&self.joint_pos, leg);
            let qd = leg_slice(&self.joint_vel, leg);
            let rel = rot.transform_vector(&(model.legs.forward_kinematics(q, leg) - com));
            let v_rel = rot.transform_vector(&model.legs.foot_velocity(q, qd, leg));
            self.foot_pos[leg] = self.base_position + rel;
            self.foot_vel[leg] = self.base_lin_vel + omega_world.cross(&rel) + v_rel;
        }
    }

    fn check_blow_up(&mut self) {
        let vals = self
            .base_position
            .iter()
            .chain(self.base_lin_vel.iter())
            .chain(self.base_ang_vel.iter())
            .chain(self.joint_pos.iter())
            .chain(self.joint_vel.iter())
            .chain(self.joint_acc.iter());
        let bad = vals.copied().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT);
        let quat_bad = !self.base_orientation.coords.iter().all(|v| v.is_finite());
        if bad || quat_bad {
            self.blown_up = true;
        }
    }
}

/// PD torques `kp (target - q) - kd qd`, clamped to the motor limit.
pub fn apply_pd(
    state: &RobotState,
    params: &EnvPhysicsParams,
    model: &RobotModel,
    target: &[f64; NUM_JOINTS],
) -> [f64; NUM_JOINTS] {
    let limit = params.motor_strength * model.motor_torque_nominal;
    std::array::from_fn(|j| {
        let tau = params.kp * (target[j] - state.joint_pos[j]) - params.kd * state.joint_vel[j];
        tau.clamp(-limit, limit)
    })
}

/// Per-step diagnostic of the contact solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContactReport {
    pub normal: [f64; NUM_LEGS],
    pub tangential: [f64; NUM_LEGS],
}

/// Advances one environment by `dt` seconds in `contact.substeps` substeps.
///
/// The returned report is the one of the last substep.
pub fn step(
    state: &mut RobotState,
    params: &EnvPhysicsParams,
    model: &RobotModel,
    contact: &ContactModel,
    field: &HeightField,
    dt: f64,
) -> ContactReport {
    let n = contact.substeps.max(1);
    let h = dt / n as f64;
    let mut report = ContactReport::default();
    for _ in 0..n {
        if state.blown_up {
            break;
        }
        report = substep(state, params, model, contact, field, h);
    }
    report
}

fn substep(
    state: &mut RobotState,
    params: &EnvPhysicsParams,
    model: &RobotModel,
    contact: &ContactModel,
    field: &HeightField,
    dt: f64,
) -> ContactReport {
    let mut report = ContactReport::default();
    let delay = (params.delay_steps as usize).min(MAX_DELAY);
    let target = state.target_queue[delay];

    let rot = state.base_orientation;
    let com = Vector3::from(params.com_offset);
    let omega_world = rot.transform_vector(&state.base_ang_vel);
    let mass = params.total_mass();
    let mut force = Vector3::new(0.0, 0.0, -mass * GRAVITY);
    force += rot.transform_vector(&Vector3::from(params.external_force));
    let mut torque_world = Vector3::zeros();

    // Foot contacts. The ground force also loads the leg joints through the
    // foot Jacobian, so a stance leg cannot drive its foot into the ground.
    let damping = contact.normal_damping(params.restitution);
    let mut reaction = [0.0; NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        let q = leg_slice(&state.joint_pos, leg);
        let qd = leg_slice(&state.joint_vel, leg);
        let rel = rot.transform_vector(&(model.legs.forward_kinematics(q, leg) - com));
        let p = state.base_position + rel;
        let jac = model.legs.jacobian(q, leg);
        let v = state.base_lin_vel + omega_world.cross(&rel) + rot.transform_vector(&(jac * Vector3::from(qd)));
        let ground = field.height_clamped(p.x, p.y);
        let depth = ground - p.z;
        if depth <= 0.0 {
            state.foot_anchor[leg] = None;
            continue;
        }
        let anchor = *state.foot_anchor[leg].get_or_insert(p);
        let fn_ = (contact.stiffness * depth - damping * v.z).max(0.0);
        let slip = p - anchor;
        let mut ft = Vector3::new(
            -contact.tangential_stiffness * slip.x - contact.tangential * v.x,
            -contact.tangential_stiffness * slip.y - contact.tangential * v.y,
            0.0,
        );
        let cap = params.friction * fn_;
        let mag = ft.norm();
        if mag > cap {
            ft *= if mag > 0.0 { cap / mag } else { 0.0 };
            // Slipping: drag the stick point so the spring alone carries the cap.
            if contact.tangential_stiffness > 0.0 {
                let a = p + ft / contact.tangential_stiffness;
                state.foot_anchor[leg] = Some(Vector3::new(a.x, a.y, p.z));
            }
        }
        let f = Vector3::new(ft.x, ft.y, fn_);
        force += f;
        torque_world += rel.cross(&f);
        let tau_leg = jac.transpose() * rot.inverse_transform_vector(&f);
        for k in 0..3 {
            reaction[3 * leg + k] = tau_leg[k];
        }
        report.normal[leg] = fn_;
        report.tangential[leg] = ft.norm();
    }

    // Joints.
    let tau = apply_pd(state, params, model, &target);
    for j in 0..NUM_JOINTS {
        let acc = (tau[j] + reaction[j] - model.joint_damping * state.joint_vel[j]) / model.joint_inertia;
        let mut vel = state.joint_vel[j] + acc * dt;
        let mut pos = state.joint_pos[j] + vel * dt;
        if pos < model.lower[j] {
            pos = model.lower[j];
            vel = vel.max(0.0);
        } else if pos > model.upper[j] {
            pos = model.upper[j];
            vel = vel.min(0.0);
        }
        state.joint_acc[j] = acc;
        state.joint_vel[j] = vel;
        state.joint_pos[j] = pos;
        state.joint_torque[j] = tau[j];
    }

    // Base: semi-implicit Euler.
    state.base_lin_vel += force / mass * dt;
    state.base_position += state.base_lin_vel * dt;

    let inertia = model.base_inertia * (mass / model.nominal_mass);
    let torque_body = rot.inverse_transform_vector(&torque_world);
    let w = state.base_ang_vel;
    let rhs = torque_body - w.cross(&(inertia * w));
    let alpha = inertia.try_inverse().map(|inv| inv * rhs).unwrap_or_else(Vector3::zeros);
    state.base_ang_vel += alpha * dt;
    let dq = UnitQuaternion::from_scaled_axis(state.base_ang_vel * dt);
    state.base_orientation = UnitQuaternion::new_normalize((rot * dq).into_inner());

    state.foot_normal_force = report.normal;
    state.time += dt;
    state.refresh_derived(model, &params.com_offset);
    state.check_blow_up();
    report
}

/// Steps every environment in parallel.
pub fn step_all(
    states: &mut [RobotState],
    params: &[EnvPhysicsParams],
    model: &RobotModel,
    contact: &ContactModel,
    field: &HeightField,
    dt: f64,
) {
    states
        .par_iter_mut()
        .zip(params.par_iter())
        .for_each(|(s, p)| {
            step(s, p, model, contact, field, dt);
        });
}

/// Base height at which the lowest foot just touches the ground.
pub fn standing_height(model: &RobotModel, field: &HeightField, xy: (f64, f64), yaw: f64, joints: &[f64; NUM_JOINTS], com: &[f64; 3]) -> f64 {
    let rot = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
    let com = Vector3::from(*com);
    model
        .feet_body(joints)
        .iter()
        .map(|f| {
            let rel = rot.transform_vector(&(f - com));
            field.height_clamped(xy.0 + rel.x, xy.1 + rel.y) - rel.z
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TerrainConfig;
    use crate::terrain::build_field_with;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_field() -> HeightField {
        let cfg = TerrainConfig {
            proportions: [1.0, 0.0, 0.0, 0.0],
            tile_rows: 1,
            tile_cols: 1,
            tile_side: 10.0,
            cell_size: 0.05,
            max_level: 0,
        };
        build_field_with(0, &cfg).unwrap()
    }

    fn setup() -> (RobotModel, EnvPhysicsParams, ContactModel, HeightField) {
        let robot = RobotDescription::default();
        let model = RobotModel::new(&robot);
        let params = EnvPhysicsParams::nominal(&robot, &RandomizationRanges::default());
        let contact = ContactModel::from_config(&EnvConfig::default());
        (model, params, contact, flat_field())
    }

    #[test]
    fn degenerate_ranges_reproduce_nominals() {
        let robot = RobotDescription::default();
        let ranges = RandomizationRanges::nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = randomize(&ranges, &robot, &mut rng);
        assert_eq!(p, EnvPhysicsParams::nominal(&robot, &ranges));
    }

    #[test]
    fn randomized_parameters_stay_in_range() {
        let robot = RobotDescription::default();
        let ranges = RandomizationRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = randomize(&ranges, &robot, &mut rng);
            assert!((16.0..=24.0).contains(&p.kp));
            assert!((0.4..=0.6).contains(&p.kd));
            assert!(p.delay_steps <= 3);
            assert!(p.external_force.iter().all(|f| f.abs() <= 30.0));
            assert!((0.2..=2.75).contains(&p.friction));
            assert!((9.6..=14.4).contains(&p.body_mass));
        }
    }

    #[test]
    fn pd_law_and_saturation() {
        let (model, mut params, _, _) = setup();
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, 1.0), 0.0, model.nominal_joints);
        assert_eq!(apply_pd(&s, &params, &model, &model.nominal_joints), [0.0; NUM_JOINTS]);

        params.kp = 20.0;
        params.kd = 0.5;
        let mut target = model.nominal_joints;
        target[4] += 0.1;
        let tau = apply_pd(&s, &params, &model, &target);
        assert!((tau[4] - 2.0).abs() < 1e-12);

        target[4] += 100.0;
        s.joint_vel[4] = 0.0;
        let tau = apply_pd(&s, &params, &model, &target);
        assert_eq!(tau[4], params.motor_strength * model.motor_torque_nominal);
    }

    #[test]
    fn free_fall_accelerates_at_g() {
        let (model, params, contact, field) = setup();
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, 50.0), 0.0, model.nominal_joints);
        let dt = 0.005;
        let v0 = s.base_lin_vel.z;
        step(&mut s, &params, &model, &contact, &field, dt);
        let acc = (s.base_lin_vel.z - v0) / dt;
        assert!((acc + GRAVITY).abs() < 1e-9, "{acc}");
    }

    #[test]
    fn nominal_stance_settles_under_load() {
        let (model, params, contact, field) = setup();
        let joints = model.nominal_joints;
        let h0 = standing_height(&model, &field, (5.0, 5.0), 0.0, &joints, &params.com_offset);
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, h0), 0.0, joints);
        for _ in 0..2000 {
            step(&mut s, &params, &model, &contact, &field, 0.005);
        }
        // PD joints give under the body weight, then hold.
        assert!(s.base_position.z > 0.7 * h0, "collapsed to {}", s.base_position.z);
        assert!(s.base_lin_vel.norm() < 0.01 && s.base_ang_vel.norm() < 0.05, "{:?} {:?} {:?}", s.base_lin_vel, s.base_ang_vel, s.base_position);
        assert!(-s.gravity_body.z > 0.99);
        let load: f64 = s.foot_normal_force.iter().sum();
        assert!((load - params.total_mass() * GRAVITY).abs() < 0.05 * load, "{load}");
    }

    #[test]
    fn frictionless_contact_lets_the_base_slide() {
        let (model, mut params, contact, field) = setup();
        params.friction = 0.0;
        params.external_force = [0.0, 20.0, 0.0];
        let joints = model.nominal_joints;
        let h0 = standing_height(&model, &field, (5.0, 5.0), 0.0, &joints, &params.com_offset);
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, h0 - 0.002), 0.0, joints);
        let mut saw_contact = false;
        for _ in 0..50 {
            let r = step(&mut s, &params, &model, &contact, &field, 0.005);
            saw_contact |= r.normal.iter().any(|&f| f > 0.0);
            assert!(r.tangential.iter().all(|&f| f == 0.0));
        }
        assert!(saw_contact);
        let expected = 20.0 / params.total_mass() * 50.0 * 0.005;
        assert!((s.base_lin_vel.y - expected).abs() < 1e-3, "{} vs {expected}", s.base_lin_vel.y);
    }

    #[test]
    fn blow_up_is_flagged() {
        let (model, params, contact, field) = setup();
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, 1.0), 0.0, model.nominal_joints);
        s.base_lin_vel.x = 2e6;
        step(&mut s, &params, &model, &contact, &field, 0.005);
        assert!(s.blown_up);
    }

    #[test]
    fn delayed_target_is_applied() {
        let (model, mut params, mut contact, field) = setup();
        contact.substeps = 1;
        params.delay_steps = 2;
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, 5.0), 0.0, model.nominal_joints);
        let mut t = model.nominal_joints;
        t[1] += 0.2;
        s.push_target(t);
        // Newest target sits in slot 0; the step still reads slot 2 (nominal).
        step(&mut s, &params, &model, &contact, &field, 0.005);
        assert_eq!(s.joint_torque[1], 0.0);
        s.push_target(t);
        s.push_target(t);
        let before = s.clone();
        step(&mut s, &params, &model, &contact, &field, 0.005);
        let tau = apply_pd(&before, &params, &model, &t);
        assert_eq!(s.joint_torque[1], tau[1]);
    }

    #[test]
    fn free_flight_conserves_energy_and_unit_quaternion() {
        let (model, params, contact, field) = setup();
        let mut s = RobotState::at_rest(&model, Vector3::new(5.0, 5.0, 200.0), 0.3, model.nominal_joints);
        s.base_lin_vel = Vector3::new(0.5, -0.2, 3.0);
        s.base_ang_vel = Vector3::new(0.4, 2.0, 0.3);
        let m = params.total_mass();
        let inertia = model.base_inertia * (m / model.nominal_mass);
        let energy = |s: &RobotState| {
            0.5 * m * s.base_lin_vel.norm_squared()
                + 0.5 * s.base_ang_vel.dot(&(inertia * s.base_ang_vel))
                + m * GRAVITY * s.base_position.z
        };
        let e0 = energy(&s);
        for _ in 0..1000 {
            step(&mut s, &params, &model, &contact, &field, 0.005);
            assert!((s.base_orientation.coords.norm() - 1.0).abs() < 1e-12);
        }
        let drift = (energy(&s) - e0).abs() / e0;
        assert!(drift < 0.01, "relative drift {drift}");
    }

    #[test]
    fn friction_draws_have_the_interval_mean() {
        let robot = RobotDescription::default();
        let ranges = RandomizationRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let mean = (0..n).map(|_| randomize(&ranges, &robot, &mut rng).friction).sum::<f64>() / n as f64;
        assert!((mean - 1.475).abs() < 0.02, "{mean}");
    }
}
