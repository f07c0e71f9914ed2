//! Walker environment: dynamics plus observation assembly, rewards,
//! termination, pushes and per-episode randomization.

pub mod dynamics;
pub mod reward;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::percept::{ElevationSensor, NoiseConfig};
use crate::terrain::{Heightfield, TerrainClass, ALL_CLASSES};
use crate::{Error, Result};
use dynamics::{body_kin, control_step, DrParams, PhysicsConfig, StepInfo, WalkerState, NJ, NQ, PITCH};
use reward::{compute_reward, RewardBreakdown, RewardConfig, RewardInputs};

pub const PROPRIO_DIM: usize = 17;
pub const NUM_CLASSES: usize = ALL_CLASSES.len();

/// Fixed scales applied to fast-moving observation components.
pub const OMEGA_SCALE: f64 = 0.25;
pub const JOINT_VEL_SCALE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct DrConfig {
    pub enabled: bool,
    pub mass_range: f64,
    pub friction_range: (f64, f64),
    pub restitution_range: (f64, f64),
    pub motor_range: f64,
    pub gain_range: f64,
}

impl Default for DrConfig {
    fn default() -> Self {
        DrConfig {
            enabled: true,
            mass_range: 0.10,
            friction_range: (0.4, 1.2),
            restitution_range: (0.0, 0.2),
            motor_range: 0.10,
            gain_range: 0.15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub physics: PhysicsConfig,
    pub reward: RewardConfig,
    pub noise: NoiseConfig,
    pub dr: DrConfig,
    /// Proprioception history length fed to the context estimator.
    pub history_len: usize,
    pub episode_seconds: f64,
    /// Uniform joint-angle jitter applied around the default pose at reset.
    pub reset_jitter: f64,
    pub spawn_x: f64,
    pub push_interval: f64,
    pub push_magnitude: f64,
    pub push_duration: f64,
    pub pitch_limit: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            physics: PhysicsConfig::default(),
            reward: RewardConfig::default(),
            noise: NoiseConfig::default(),
            dr: DrConfig::default(),
            history_len: 20,
            episode_seconds: 24.0,
            reset_jitter: 0.05,
            spawn_x: 1.0,
            push_interval: 8.0,
            push_magnitude: 15.0,
            push_duration: 0.2,
            pitch_limit: 0.8,
        }
    }
}

/// Everything the rest of the stack reads out of the environment each step.
/// The command rides inside `proprio`; privileged fields are carried
/// separately so only the critic and the estimator targets ever see them.
#[derive(Clone, Debug)]
pub struct EnvObs {
    pub proprio: [f64; PROPRIO_DIM],
    /// `history_len * PROPRIO_DIM`, oldest step first, zero-padded at the
    /// front early in an episode.  The newest entry is this step's proprio.
    pub history: Vec<f64>,
    pub elevation_clean: Vec<f64>,
    pub elevation_noisy: Vec<f64>,
    pub true_vel: [f64; 2],
    pub terrain_one_hot: [f64; NUM_CLASSES],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailReason {
    Collision,
    Pitch,
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Done {
    Running,
    Failure(FailReason),
    TimeLimit,
}

impl Done {
    pub fn is_done(self) -> bool {
        !matches!(self, Done::Running)
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: EnvObs,
    pub reward: RewardBreakdown,
    pub done: Done,
}

pub struct Env {
    pub cfg: EnvConfig,
    hf: Heightfield,
    rng: ChaCha8Rng,
    dr: DrParams,
    sensor: ElevationSensor,
    state: WalkerState,
    cmd: [f64; 2],
    prev_action: [f64; NJ],
    prev_joint_vels: [f64; NJ],
    air_time: [f64; 2],
    was_contact: [bool; 2],
    history: VecDeque<[f64; PROPRIO_DIM]>,
    steps: usize,
    limit_steps: usize,
    push_force: f64,
    push_until: f64,
    next_push_at: f64,
    time: f64,
    done: bool,
}

impl Env {
    /// `index` separates the random streams of a vectorized batch; every env
    /// draws from its own counter-mode stream of the shared seed.
    pub fn new(cfg: EnvConfig, seed: u64, index: usize) -> Env {
        let mut scratch = crate::rng::stream(seed, crate::rng::STREAM_ENV_BASE + index as u64);
        let hf = Heightfield::generate(TerrainClass::Flat, 0.0, 10.0, &mut scratch)
            .expect("flat terrain is always valid");
        let sensor = ElevationSensor::new(cfg.noise.clone());
        let physics = cfg.physics.clone();
        Env {
            cfg,
            hf,
            rng: scratch,
            dr: DrParams::nominal(&physics),
            sensor,
            state: WalkerState { q: [0.0; NQ], qd: [0.0; NQ] },
            cmd: [0.0; 2],
            prev_action: [0.0; NJ],
            prev_joint_vels: [0.0; NJ],
            air_time: [0.0; 2],
            was_contact: [true; 2],
            history: VecDeque::new(),
            steps: 0,
            limit_steps: 0,
            push_force: 0.0,
            push_until: 0.0,
            next_push_at: 0.0,
            time: 0.0,
            done: true,
        }
    }

    pub fn heightfield(&self) -> &Heightfield {
        &self.hf
    }

    pub fn dr(&self) -> &DrParams {
        &self.dr
    }

    pub fn walker(&self) -> &WalkerState {
        &self.state
    }

    pub fn command(&self) -> [f64; 2] {
        self.cmd
    }

    pub fn elapsed(&self) -> f64 {
        self.time
    }

    /// Forward displacement since spawn, floored at zero.
    pub fn distance_traveled(&self) -> f64 {
        (self.state.q[0] - self.cfg.spawn_x).max(0.0)
    }

    fn draw_dr(&mut self) -> DrParams {
        let c = &self.cfg.dr;
        let p = &self.cfg.physics;
        if !c.enabled {
            return DrParams::nominal(p);
        }
        let mut sym = |r: f64| {
            if r > 0.0 {
                1.0 + self.rng.gen_range(-r..r)
            } else {
                1.0
            }
        };
        let mass_scale = [sym(c.mass_range), sym(c.mass_range), sym(c.mass_range), sym(c.mass_range), sym(c.mass_range)];
        let motor_scale = sym(c.motor_range);
        let kp_scale = sym(c.gain_range);
        let kd_scale = sym(c.gain_range);
        let friction = range_draw(&mut self.rng, c.friction_range);
        let restitution = range_draw(&mut self.rng, c.restitution_range);
        DrParams { mass_scale, friction, restitution, motor_scale, kp_scale, kd_scale }
    }

    /// Starts an episode on `hf` with a command speed drawn from `cmd_range`.
    pub fn reset(&mut self, hf: Heightfield, cmd_range: (f64, f64)) -> Result<EnvObs> {
        self.hf = hf;
        self.dr = self.draw_dr();

        let pose = self.cfg.physics.default_pose();
        let mut joints = pose;
        if self.cfg.reset_jitter > 0.0 {
            for j in &mut joints {
                *j += self.rng.gen_range(-self.cfg.reset_jitter..self.cfg.reset_jitter);
            }
        }
        // Place the base so the lower foot rests exactly on the ground.
        let mut q = [0.0; NQ];
        q[0] = self.cfg.spawn_x;
        q[3] = joints[0];
        q[4] = joints[1];
        q[5] = joints[2];
        q[6] = joints[3];
        let probe = WalkerState { q, qd: [0.0; NQ] };
        let kin = body_kin(&self.cfg.physics, &probe);
        let base_z = [kin.foot_l, kin.foot_r]
            .iter()
            .map(|f| self.hf.height_at(f.pos[0]) - f.pos[1])
            .fold(f64::NEG_INFINITY, f64::max);
        q[1] = base_z;
        self.state = WalkerState { q, qd: [0.0; NQ] };

        self.cmd = [range_draw(&mut self.rng, cmd_range), 0.0];
        self.sensor.reset(&mut self.rng);
        self.prev_action = joints;
        self.prev_joint_vels = [0.0; NJ];
        self.air_time = [0.0; 2];
        self.was_contact = [true; 2];
        self.history.clear();
        self.steps = 0;
        self.limit_steps = (self.cfg.episode_seconds * self.cfg.physics.control_hz).round() as usize;
        self.push_force = 0.0;
        self.push_until = 0.0;
        self.next_push_at = self.cfg.push_interval;
        self.time = 0.0;
        self.done = false;

        let proprio = self.proprio();
        self.history.push_back(proprio);
        self.observe()
    }

    fn proprio(&self) -> [f64; PROPRIO_DIM] {
        let s = &self.state;
        let mut p = [0.0; PROPRIO_DIM];
        p[0] = s.qd[PITCH] * OMEGA_SCALE;
        p[1] = -s.q[PITCH].sin();
        p[2] = -s.q[PITCH].cos();
        p[3] = self.cmd[0];
        p[4] = self.cmd[1];
        let joints = s.joints();
        let vels = s.joint_vels();
        for j in 0..NJ {
            p[5 + j] = joints[j];
            p[9 + j] = vels[j] * JOINT_VEL_SCALE;
            p[13 + j] = self.prev_action[j];
        }
        p
    }

    fn flat_history(&self) -> Vec<f64> {
        let h = self.cfg.history_len;
        let mut out = vec![0.0; h * PROPRIO_DIM];
        let have = self.history.len();
        for (i, frame) in self.history.iter().enumerate() {
            let slot = h - have + i;
            out[slot * PROPRIO_DIM..(slot + 1) * PROPRIO_DIM].copy_from_slice(frame);
        }
        out
    }

    fn observe(&mut self) -> Result<EnvObs> {
        let sensed = self.sensor.sense(
            &self.hf,
            self.state.q[0],
            self.state.q[1],
            self.hf.difficulty,
            &mut self.rng,
        )?;
        let mut one_hot = [0.0; NUM_CLASSES];
        one_hot[self.hf.class.index()] = 1.0;
        Ok(EnvObs {
            proprio: *self.history.back().expect("history never empty after reset"),
            history: self.flat_history(),
            elevation_clean: sensed.clean,
            elevation_noisy: sensed.noisy,
            true_vel: [self.state.qd[0], self.state.qd[1]],
            terrain_one_hot: one_hot,
        })
    }

    /// Advances one control step.  `action` is a vector of joint position
    /// targets; it is clamped to the joint limits before the PD loop sees it.
    pub fn step(&mut self, action: [f64; NJ]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        for a in &action {
            if !a.is_finite() {
                return Err(Error::Contract("non-finite action".into()));
            }
        }
        let mut targets = action;
        for j in 0..NJ {
            let (lo, hi) = self.cfg.physics.joint_limits(j);
            targets[j] = targets[j].clamp(lo, hi);
        }

        if self.time >= self.next_push_at {
            self.push_force = self.rng.gen_range(-self.cfg.push_magnitude..self.cfg.push_magnitude);
            self.push_until = self.time + self.cfg.push_duration;
            self.next_push_at += self.cfg.push_interval;
        }
        let push = if self.time < self.push_until { self.push_force } else { 0.0 };

        let prev_state = self.state;
        let info = control_step(
            &self.cfg.physics,
            &self.dr,
            &mut self.state,
            &self.hf,
            &targets,
            push,
        );
        let dt = self.cfg.physics.control_dt();
        self.time += dt;
        self.steps += 1;

        let mut first_contact = [false; 2];
        let mut air_time_at_contact = [0.0; 2];
        for f in 0..2 {
            if info.foot_contact[f] {
                if !self.was_contact[f] {
                    first_contact[f] = true;
                    air_time_at_contact[f] = self.air_time[f];
                }
                self.air_time[f] = 0.0;
            } else {
                self.air_time[f] += dt;
            }
            self.was_contact[f] = info.foot_contact[f];
        }

        let reward = self.reward_for(&prev_state, &targets, &info, first_contact, air_time_at_contact);

        let finite = self.state.q.iter().chain(self.state.qd.iter()).all(|v| v.is_finite());
        let done = if !finite {
            Done::Failure(FailReason::NonFinite)
        } else if info.nonfoot_contact {
            Done::Failure(FailReason::Collision)
        } else if self.state.q[PITCH].abs() > self.cfg.pitch_limit {
            Done::Failure(FailReason::Pitch)
        } else if self.steps >= self.limit_steps {
            Done::TimeLimit
        } else {
            Done::Running
        };
        self.done = done.is_done();

        self.prev_action = targets;
        self.prev_joint_vels = prev_state.joint_vels();

        if finite {
            let proprio = self.proprio();
            self.history.push_back(proprio);
            while self.history.len() > self.cfg.history_len {
                self.history.pop_front();
            }
        }
        let obs = self.observe()?;
        Ok(StepOutcome { obs, reward, done })
    }

    fn reward_for(
        &self,
        prev_state: &WalkerState,
        action: &[f64; NJ],
        info: &StepInfo,
        first_contact: [bool; 2],
        air_time_at_contact: [f64; 2],
    ) -> RewardBreakdown {
        let kin = body_kin(&self.cfg.physics, &self.state);
        let edge = |x: f64| self.hf.edge_distance(x);
        let inputs = RewardInputs {
            class: self.hf.class,
            cmd_vx: self.cmd[0],
            cmd_height_offset: self.cmd[1],
            vx: self.state.qd[0],
            vz: self.state.qd[1],
            pitch: self.state.q[PITCH],
            omega: self.state.qd[PITCH],
            height_above_ground: self.state.q[1] - self.hf.height_at(self.state.q[0]),
            nominal_height: self.cfg.physics.nominal_height(),
            joints: self.state.joints(),
            joint_vels: self.state.joint_vels(),
            prev_joint_vels: prev_state.joint_vels(),
            action: *action,
            prev_action: self.prev_action,
            torques: info.torques,
            torques_requested: info.torques_requested,
            foot_contact: info.foot_contact,
            foot_normal: info.foot_normal,
            foot_tangent: info.foot_tangent,
            first_contact,
            air_time_at_contact,
            nonfoot_contact: info.nonfoot_contact,
            foot_edge_dist: [edge(kin.foot_l.pos[0]), edge(kin.foot_r.pos[0])],
            default_pose: self.cfg.physics.default_pose(),
            dt: self.cfg.physics.control_dt(),
        };
        compute_reward(&self.cfg.physics, &self.cfg.reward, &inputs)
    }
}

fn range_draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}
