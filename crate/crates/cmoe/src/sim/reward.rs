//! Per-step reward terms for the walker.
//!
//! Seventeen weighted terms.  The 3-D source set also carried yaw tracking,
//! feet lateral distance and foot-ground parallelism; those have no meaning
//! in the sagittal plane and are deliberately absent rather than zeroed.
//! Weights are fixed; the shaping scales that have no canonical value
//! (tracking sigma, target air time, soft limit fraction, edge margin) live
//! in [`RewardConfig`].

use super::dynamics::{PhysicsConfig, NJ};
use crate::terrain::TerrainClass;

pub const NUM_TERMS: usize = 17;

pub const TERM_NAMES: [&str; NUM_TERMS] = [
    "track_vel",
    "z_vel",
    "pitch_vel",
    "orientation",
    "base_height",
    "stumble",
    "collision",
    "feet_air_time",
    "hip_pos",
    "dof_acc",
    "dof_vel",
    "torques",
    "action_rate",
    "dof_pos_limits",
    "dof_vel_limits",
    "torque_limits",
    "feet_edge",
];

pub const TERM_WEIGHTS: [f64; NUM_TERMS] = [
    2.0,     // track_vel
    -1.0,    // z_vel
    -0.05,   // pitch_vel
    -2.0,    // orientation
    -15.0,   // base_height
    -1.0,    // stumble
    -15.0,   // collision
    1.0,     // feet_air_time
    -0.5,    // hip_pos
    -2.5e-7, // dof_acc
    -5.0e-4, // dof_vel
    -1.0e-5, // torques
    -0.3,    // action_rate
    -2.0,    // dof_pos_limits
    -1.0,    // dof_vel_limits
    -1.0,    // torque_limits
    -1.0,    // feet_edge
];

#[derive(Clone, Debug)]
pub struct RewardConfig {
    pub tracking_sigma: f64,
    pub air_time_target: f64,
    /// Soft joint-position limits sit at this fraction of the hard range,
    /// centered on the range midpoint.
    pub soft_limit_factor: f64,
    /// A foot in contact closer than this to a feature edge is penalized on
    /// edge-sensitive terrain.
    pub edge_margin: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            tracking_sigma: 0.25,
            air_time_target: 0.3,
            soft_limit_factor: 0.9,
            edge_margin: 0.03,
        }
    }
}

/// Everything one reward evaluation reads.  The env fills this from its step
/// bookkeeping; tests construct it directly.
#[derive(Clone, Debug)]
pub struct RewardInputs {
    pub class: TerrainClass,
    pub cmd_vx: f64,
    /// Commanded offset added to the nominal base height.
    pub cmd_height_offset: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch: f64,
    pub omega: f64,
    /// Base height above the terrain directly under it.
    pub height_above_ground: f64,
    pub nominal_height: f64,
    pub joints: [f64; NJ],
    pub joint_vels: [f64; NJ],
    pub prev_joint_vels: [f64; NJ],
    pub action: [f64; NJ],
    pub prev_action: [f64; NJ],
    pub torques: [f64; NJ],
    pub torques_requested: [f64; NJ],
    pub foot_contact: [bool; 2],
    pub foot_normal: [f64; 2],
    pub foot_tangent: [f64; 2],
    /// Set for a foot on the step it transitions from swing to contact.
    pub first_contact: [bool; 2],
    /// Swing duration ending at this step's touchdown, per foot.
    pub air_time_at_contact: [f64; 2],
    pub nonfoot_contact: bool,
    /// Horizontal distance from each foot to the nearest feature edge.
    pub foot_edge_dist: [f64; 2],
    pub default_pose: [f64; NJ],
    pub dt: f64,
}

#[derive(Clone, Debug)]
pub struct RewardBreakdown {
    pub raw: [f64; NUM_TERMS],
    pub weighted: [f64; NUM_TERMS],
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_raw(raw: [f64; NUM_TERMS]) -> RewardBreakdown {
        let mut weighted = [0.0; NUM_TERMS];
        let mut total = 0.0;
        for i in 0..NUM_TERMS {
            weighted[i] = TERM_WEIGHTS[i] * raw[i];
            total += weighted[i];
        }
        RewardBreakdown { raw, weighted, total }
    }

    pub fn term(&self, name: &str) -> f64 {
        let i = TERM_NAMES.iter().position(|n| *n == name).expect("unknown reward term");
        self.weighted[i]
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn compute_reward(cfg: &PhysicsConfig, rcfg: &RewardConfig, inp: &RewardInputs) -> RewardBreakdown {
    let mut raw = [0.0; NUM_TERMS];

    let dv = inp.vx - inp.cmd_vx;
    raw[0] = (-(dv * dv) / rcfg.tracking_sigma).exp();
    raw[1] = inp.vz * inp.vz;
    raw[2] = inp.omega * inp.omega;
    // Gravity in the body frame is (-sin pitch, -cos pitch); the x component
    // measures lean.
    let gx = inp.pitch.sin();
    raw[3] = gx * gx;
    let h_err = inp.height_above_ground - (inp.nominal_height + inp.cmd_height_offset);
    raw[4] = h_err * h_err;

    for f in 0..2 {
        if inp.foot_contact[f] && inp.foot_tangent[f].abs() > 3.0 * inp.foot_normal[f].abs() {
            raw[5] += 1.0;
        }
        if inp.first_contact[f] {
            raw[7] += inp.air_time_at_contact[f] - rcfg.air_time_target;
        }
        if inp.foot_contact[f] && inp.foot_edge_dist[f] < rcfg.edge_margin {
            raw[16] += 1.0;
        }
    }
    raw[6] = if inp.nonfoot_contact { 1.0 } else { 0.0 };

    for j in 0..NJ {
        if j % 2 == 0 {
            let d = inp.joints[j] - inp.default_pose[j];
            raw[8] += d * d;
        }
        let acc = (inp.joint_vels[j] - inp.prev_joint_vels[j]) / inp.dt;
        raw[9] += acc * acc;
        raw[10] += inp.joint_vels[j] * inp.joint_vels[j];
        raw[11] += inp.torques[j] * inp.torques[j];
        let da = inp.action[j] - inp.prev_action[j];
        raw[12] += da * da;

        let (lo, hi) = cfg.joint_limits(j);
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo) * rcfg.soft_limit_factor;
        raw[13] += relu(inp.joints[j] - (mid + half)) + relu((mid - half) - inp.joints[j]);
        raw[14] += relu(inp.joint_vels[j].abs() - cfg.joint_vel_limit);
        raw[15] += relu(inp.torques_requested[j].abs() - cfg.torque_limit);
    }

    // Edge contact only matters where a misplaced foot can slip off a
    // feature lip.
    if !matches!(inp.class, TerrainClass::Hurdle | TerrainClass::Gap) {
        raw[16] = 0.0;
    }

    RewardBreakdown::from_raw(raw)
}
