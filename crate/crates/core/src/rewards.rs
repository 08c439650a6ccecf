//! Reward terms and the termination rule.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::RobotDescription;
use crate::sim::{RobotState, NUM_JOINTS, NUM_LEGS};

/// Tracking shaping scale.
pub const SIGMA: f64 = 0.25;
pub const NUM_TERMS: usize = 11;

pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "lin_vel_tracking",
    "ang_vel_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "orientation",
    "joint_acc",
    "joint_power",
    "base_height",
    "foot_clearance",
    "action_rate",
    "smoothness",
];

pub const WEIGHTS: [f64; NUM_TERMS] = [1.0, 0.5, -2.0, -0.05, -0.2, -2.5e-7, -2e-5, -1.0, -0.01, -0.01, -0.01];

/// Minimum base clearance above the terrain before the episode ends.
pub const MIN_CLEARANCE: f64 = 0.05;
/// Maximum tilt of the body z axis from vertical.
pub const MAX_TILT_DEG: f64 = 80.0;

/// Everything the reward needs, already expressed in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardInputs {
    pub command: [f64; 3],
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub joint_acc: [f64; NUM_JOINTS],
    pub joint_torque: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    /// Base height above the local terrain.
    pub base_height: f64,
    /// Foot z relative to the base, body frame.
    pub foot_z: [f64; NUM_LEGS],
    /// Horizontal foot speed relative to the base, body frame.
    pub foot_speed_xy: [f64; NUM_LEGS],
    pub action: [f64; NUM_JOINTS],
    pub prev_action: [f64; NUM_JOINTS],
    pub prev_prev_action: [f64; NUM_JOINTS],
}

impl RewardInputs {
    /// `ground` is the terrain height the base height is measured from.
    #[allow(clippy::too_many_arguments)]
    pub fn from_state(
        state: &RobotState,
        ground: f64,
        command: [f64; 3],
        action: [f64; NUM_JOINTS],
        prev_action: [f64; NUM_JOINTS],
        prev_prev_action: [f64; NUM_JOINTS],
    ) -> Self {
        let rot = state.base_orientation;
        let foot_z = std::array::from_fn(|i| rot.inverse_transform_vector(&(state.foot_pos[i] - state.base_position)).z);
        let foot_speed_xy = std::array::from_fn(|i| {
            let v = rot.inverse_transform_vector(&(state.foot_vel[i] - state.base_lin_vel));
            v.xy().norm()
        });
        Self {
            command,
            lin_vel: state.lin_vel_body(),
            ang_vel: state.base_ang_vel,
            gravity: state.gravity_body,
            joint_acc: state.joint_acc,
            joint_torque: state.joint_torque,
            joint_vel: state.joint_vel,
            base_height: state.base_position.z - ground,
            foot_z,
            foot_speed_xy,
            action,
            prev_action,
            prev_prev_action,
        }
    }
}

/// Target heights derived from the robot description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTargets {
    pub base_height: f64,
    /// Desired swing-foot z in the body frame.
    pub foot_z: f64,
}

impl RewardTargets {
    pub fn from_robot(robot: &RobotDescription) -> Self {
        Self {
            base_height: robot.base_height_target,
            foot_z: robot.foot_clearance_target - robot.base_height_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    /// Raw term values before weighting.
    pub terms: [f64; NUM_TERMS],
    pub weights: [f64; NUM_TERMS],
    /// `sum(w_i r_i) * dt`.
    pub total: f64,
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn compute(inp: &RewardInputs, targets: &RewardTargets, dt: f64) -> RewardBreakdown {
    let c = inp.command;
    let lin_err = sq(c[0] - inp.lin_vel.x) + sq(c[1] - inp.lin_vel.y);
    let ang_err = sq(c[2] - inp.ang_vel.z);
    let joint_acc: f64 = inp.joint_acc.iter().map(|a| a * a).sum();
    let power: f64 = inp.joint_torque.iter().zip(&inp.joint_vel).map(|(t, v)| (t * v).abs()).sum();
    let clearance: f64 = (0..NUM_LEGS).map(|i| sq(targets.foot_z - inp.foot_z[i]) * inp.foot_speed_xy[i]).sum();
    let mut rate = 0.0;
    let mut smooth = 0.0;
    for j in 0..NUM_JOINTS {
        rate += sq(inp.action[j] - inp.prev_action[j]);
        smooth += sq(inp.action[j] - 2.0 * inp.prev_action[j] + inp.prev_prev_action[j]);
    }
    let terms = [
        (-lin_err / SIGMA).exp(),
        (-ang_err / SIGMA).exp(),
        sq(inp.lin_vel.z),
        sq(inp.ang_vel.x) + sq(inp.ang_vel.y),
        sq(inp.gravity.x) + sq(inp.gravity.y),
        joint_acc,
        power,
        sq(targets.base_height - inp.base_height),
        clearance,
        rate,
        smooth,
    ];
    let total = terms.iter().zip(&WEIGHTS).map(|(r, w)| r * w).sum::<f64>() * dt;
    RewardBreakdown { terms, weights: WEIGHTS, total }
}

/// Body collapse, excessive tilt, or a flagged numerical blow-up.
pub fn terminated(state: &RobotState, ground: f64) -> bool {
    if state.blown_up {
        return true;
    }
    let cos_tilt = -state.gravity_body.z;
    if cos_tilt < MAX_TILT_DEG.to_radians().cos() {
        return true;
    }
    state.base_position.z - ground < MIN_CLEARANCE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RobotDescription;
    use crate::sim::RobotModel;
    use nalgebra::UnitQuaternion;

    fn zero_inputs() -> RewardInputs {
        RewardInputs {
            command: [0.0; 3],
            lin_vel: Vector3::zeros(),
            ang_vel: Vector3::zeros(),
            gravity: Vector3::new(0.0, 0.0, -1.0),
            joint_acc: [0.0; NUM_JOINTS],
            joint_torque: [0.0; NUM_JOINTS],
            joint_vel: [0.0; NUM_JOINTS],
            base_height: 0.28,
            foot_z: [-0.28; NUM_LEGS],
            foot_speed_xy: [0.0; NUM_LEGS],
            action: [0.0; NUM_JOINTS],
            prev_action: [0.0; NUM_JOINTS],
            prev_prev_action: [0.0; NUM_JOINTS],
        }
    }

    fn targets() -> RewardTargets {
        RewardTargets::from_robot(&RobotDescription::default())
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let mut inp = zero_inputs();
        inp.command = [0.7, -0.3, 1.1];
        inp.lin_vel = Vector3::new(0.7, -0.3, 0.0);
        inp.ang_vel = Vector3::new(0.0, 0.0, 1.1);
        let r = compute(&inp, &targets(), 0.02);
        assert_eq!(r.terms[0], 1.0);
        assert_eq!(r.terms[1], 1.0);
    }

    #[test]
    fn quarter_squared_error_gives_inverse_e() {
        let mut inp = zero_inputs();
        inp.command = [0.5, 0.0, 0.0];
        let r = compute(&inp, &targets(), 0.02);
        assert!((r.terms[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.terms[0] - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn constant_actions_have_no_rate_or_smoothness_cost() {
        let mut inp = zero_inputs();
        inp.action = [0.3; NUM_JOINTS];
        inp.prev_action = [0.3; NUM_JOINTS];
        inp.prev_prev_action = [0.3; NUM_JOINTS];
        let r = compute(&inp, &targets(), 0.02);
        assert_eq!(r.terms[9], 0.0);
        assert_eq!(r.terms[10], 0.0);
    }

    #[test]
    fn swing_target_is_body_frame() {
        let t = targets();
        assert!((t.foot_z - (-0.20)).abs() < 1e-12);
        assert_eq!(t.base_height, 0.28);
    }

    #[test]
    fn termination_rules() {
        let robot = RobotDescription::default();
        let model = RobotModel::new(&robot);
        let mut s = RobotState::at_rest(&model, Vector3::new(1.0, 1.0, 0.3), 0.0, model.nominal_joints);
        assert!(!terminated(&s, 0.0));
        assert!(terminated(&s, 0.26));

        s.base_orientation = UnitQuaternion::from_euler_angles(std::f64::consts::FRAC_PI_2, 0.0, 0.0);
        s.refresh_derived(&model, &[0.0; 3]);
        assert!(terminated(&s, 0.0));

        let mut s = RobotState::at_rest(&model, Vector3::new(1.0, 1.0, 0.3), 0.0, model.nominal_joints);
        s.blown_up = true;
        assert!(terminated(&s, 0.0));
    }
}
