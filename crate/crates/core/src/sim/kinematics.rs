//! Analytic forward kinematics of a hip-abduction / hip-pitch / knee leg.

use nalgebra::{Matrix3, Vector3};

use crate::config::RobotDescription;

pub const NUM_LEGS: usize = 4;
pub const JOINTS_PER_LEG: usize = 3;
pub const NUM_JOINTS: usize = NUM_LEGS * JOINTS_PER_LEG;

/// Leg geometry with the hip mount already placed for FR, FL, RR, RL.
#[derive(Debug, Clone, PartialEq)]
pub struct LegGeometry {
    pub hip_mounts: [Vector3<f64>; NUM_LEGS],
    /// +1 for left legs, -1 for right legs.
    pub side: [f64; NUM_LEGS],
    pub abduction_len: f64,
    pub thigh_len: f64,
    pub calf_len: f64,
}

impl LegGeometry {
    pub fn from_description(robot: &RobotDescription) -> Self {
        let [ox, oy] = robot.hip_mount_offset;
        let front = [1.0, 1.0, -1.0, -1.0];
        let side = [-1.0, 1.0, -1.0, 1.0];
        let hip_mounts = std::array::from_fn(|i| Vector3::new(front[i] * ox, side[i] * oy, 0.0));
        Self {
            hip_mounts,
            side,
            abduction_len: robot.leg_link_lengths[0],
            thigh_len: robot.leg_link_lengths[1],
            calf_len: robot.leg_link_lengths[2],
        }
    }

    /// Foot position relative to the hip mount, in the body frame.
    pub fn foot_in_hip(&self, q: [f64; 3], leg: usize) -> Vector3<f64> {
        let (sa, ca) = q[0].sin_cos();
        let (sb, cb) = q[1].sin_cos();
        let (sbc, cbc) = (q[1] + q[2]).sin_cos();
        let px = -self.thigh_len * sb - self.calf_len * sbc;
        let py0 = self.side[leg] * self.abduction_len;
        let pz0 = -self.thigh_len * cb - self.calf_len * cbc;
        Vector3::new(px, py0 * ca - pz0 * sa, py0 * sa + pz0 * ca)
    }

    /// Foot position relative to the base origin, in the body frame.
    pub fn forward_kinematics(&self, q: [f64; 3], leg: usize) -> Vector3<f64> {
        self.hip_mounts[leg] + self.foot_in_hip(q, leg)
    }

    /// d(foot position) / d(q) for one leg.
    pub fn jacobian(&self, q: [f64; 3], leg: usize) -> Matrix3<f64> {
        let (sa, ca) = q[0].sin_cos();
        let (sb, cb) = q[1].sin_cos();
        let (sbc, cbc) = (q[1] + q[2]).sin_cos();
        let (l1, l2) = (self.thigh_len, self.calf_len);
        let py0 = self.side[leg] * self.abduction_len;
        let pz0 = -l1 * cb - l2 * cbc;
        let dpx_db = -l1 * cb - l2 * cbc;
        let dpx_dc = -l2 * cbc;
        let dpz_db = l1 * sb + l2 * sbc;
        let dpz_dc = l2 * sbc;
        Matrix3::new(
            0.0,
            dpx_db,
            dpx_dc,
            -py0 * sa - pz0 * ca,
            -sa * dpz_db,
            -sa * dpz_dc,
            py0 * ca - pz0 * sa,
            ca * dpz_db,
            ca * dpz_dc,
        )
    }

    /// Body-frame foot velocity induced by joint velocities.
    pub fn foot_velocity(&self, q: [f64; 3], qd: [f64; 3], leg: usize) -> Vector3<f64> {
        self.jacobian(q, leg) * Vector3::from(qd)
    }
}

pub fn leg_slice(joints: &[f64; NUM_JOINTS], leg: usize) -> [f64; 3] {
    [joints[3 * leg], joints[3 * leg + 1], joints[3 * leg + 2]]
}
