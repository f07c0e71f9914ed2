//! Run configuration: a flat `key = value` text file drives every module.
//!
//! One `RunConfig` holds all tunables. The same `set` path serves file lines
//! and `--set key=value` CLI overrides, so an override is exactly a late line.
//! `canonical_string` dumps every key in a fixed order; the FNV-1a hash of
//! that dump identifies a configuration in benchmark reports.

use crate::contrastive::ContrastiveConfig;
use crate::estimators::EstimatorConfig;
use crate::percept::ELEVATION_DIM;
use crate::policy::PolicyConfig;
use crate::sim::{EnvConfig, PROPRIO_DIM};
use crate::terrain::TerrainClass;
use crate::{io_err, Error, Result};
use std::path::Path;

/// Terrain-level curriculum: promotion/demotion on fraction of terrain
/// length traveled, and the widening velocity-command range on complex
/// terrains.
#[derive(Clone, Debug)]
pub struct CurriculumConfig {
    /// Promote a level when traveled distance reaches this fraction of the
    /// terrain length before timeout.
    pub promote: f64,
    /// Demote below this fraction.
    pub demote: f64,
    pub max_level: usize,
    /// Command speed on simple terrains and the starting point of the
    /// complex-terrain range.
    pub vel_base: f64,
    /// Complex-terrain range endpoints at max level: [vel_min, vel_max].
    pub vel_min: f64,
    pub vel_max: f64,
    /// When set, complex terrains at high levels also flip the commanded
    /// direction half the time.
    pub alternate_heading: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            promote: 0.8,
            demote: 0.4,
            max_level: 10,
            vel_base: 0.4,
            vel_min: 0.3,
            vel_max: 1.0,
            alternate_heading: false,
        }
    }
}

impl CurriculumConfig {
    /// Velocity-command range at `level`. Simple terrains hold the base
    /// speed; complex terrains widen from [base, base] toward
    /// [vel_min, vel_max] as the level rises.
    pub fn command_range(&self, level: usize, complex: bool) -> (f64, f64) {
        if !complex {
            return (self.vel_base, self.vel_base);
        }
        let frac = level as f64 / self.max_level as f64;
        (
            self.vel_base - (self.vel_base - self.vel_min) * frac,
            self.vel_base + (self.vel_max - self.vel_base) * frac,
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Rollout horizon T per update.
    pub horizon: usize,
    pub num_envs: usize,
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Context-estimator loss weight.
    pub c_cs: f64,
    /// Elevation-autoencoder loss weight.
    pub c_ae: f64,
    /// Swapped-prototype contrastive loss weight.
    pub c_swav: f64,
    pub lr: f64,
    pub checkpoint_every: usize,
    /// Nominal terrain length the curriculum fractions refer to.
    pub terrain_length: f64,
    pub classes: Vec<TerrainClass>,
    pub curriculum: CurriculumConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            iterations: 1000,
            horizon: 24,
            num_envs: 64,
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.005,
            value_coef: 1.0,
            c_cs: 1.0,
            c_ae: 1.0,
            c_swav: 0.5,
            lr: 3e-4,
            checkpoint_every: 200,
            terrain_length: 8.0,
            classes: crate::terrain::ALL_CLASSES.to_vec(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

/// Benchmark protocol settings. The terrain list and seed come from the CLI
/// per run; everything here is part of the config identity.
#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub episodes_per_terrain: usize,
    pub duration_seconds: f64,
    pub command_speed: f64,
    pub runway: f64,
    /// Count reaching the runway end before the time limit as success.
    /// Off by default: the protocol scores survival to the time limit.
    pub early_success: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            episodes_per_terrain: 200,
            duration_seconds: 20.0,
            command_speed: 0.8,
            runway: 18.0,
            early_success: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub estimator: EstimatorConfig,
    pub contrastive: ContrastiveConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    /// Feed the elevation embedding to the policy. Off reproduces the
    /// mixture baseline that sees only the raw map.
    pub use_elevation_latent: bool,
    /// Project the raw elevation map in the contrastive head instead of the
    /// autoencoder embedding.
    pub contrastive_raw_elevation: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            estimator: EstimatorConfig::default(),
            contrastive: ContrastiveConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            use_elevation_latent: true,
            contrastive_raw_elevation: false,
        }
    }
}

/// Canonical key order for dumps and hashing. `get` and `set` must cover
/// exactly this list; a test walks it.
pub const KEYS: &[&str] = &[
    "seed",
    "model.elevation_latent",
    "model.contrastive_raw_elevation",
    "env.history_len",
    "env.episode_seconds",
    "env.reset_jitter",
    "env.spawn_x",
    "env.push_interval",
    "env.push_magnitude",
    "env.push_duration",
    "env.pitch_limit",
    "physics.kp",
    "physics.kd",
    "physics.torque_limit",
    "physics.substeps",
    "physics.friction",
    "reward.tracking_sigma",
    "reward.air_time_target",
    "reward.soft_limit_factor",
    "reward.edge_margin",
    "noise.salt_pepper_p",
    "noise.difficulty_scaling",
    "noise.gaussian_sigma",
    "noise.delay_steps",
    "noise.chamfer_radius",
    "noise.offset_range",
    "noise.shift_range",
    "dr.enabled",
    "dr.mass_range",
    "dr.friction_lo",
    "dr.friction_hi",
    "dr.restitution_lo",
    "dr.restitution_hi",
    "dr.motor_range",
    "dr.gain_range",
    "policy.num_experts",
    "policy.actor_hidden",
    "policy.critic_hidden",
    "policy.gate_hidden",
    "policy.init_log_std",
    "estimator.latent_dim",
    "estimator.trunk_hidden",
    "estimator.decoder_hidden",
    "estimator.beta",
    "estimator.elevation_latent",
    "estimator.elevation_hidden",
    "contrastive.dim",
    "contrastive.prototypes",
    "contrastive.temperature",
    "contrastive.sinkhorn_iters",
    "contrastive.sinkhorn_eps",
    "contrastive.gate_proj_hidden",
    "contrastive.elev_proj_hidden",
    "train.iterations",
    "train.horizon",
    "train.num_envs",
    "train.gamma",
    "train.lambda",
    "train.clip",
    "train.epochs",
    "train.minibatches",
    "train.entropy_coef",
    "train.value_coef",
    "train.c_cs",
    "train.c_ae",
    "train.c_swav",
    "train.lr",
    "train.checkpoint_every",
    "train.terrain_length",
    "train.classes",
    "curriculum.promote",
    "curriculum.demote",
    "curriculum.max_level",
    "curriculum.vel_base",
    "curriculum.vel_min",
    "curriculum.vel_max",
    "curriculum.alternate_heading",
    "bench.episodes",
    "bench.duration",
    "bench.command",
    "bench.runway",
    "bench.early_success",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got {v:?}"))),
    }
}

/// Comma-separated widths; an empty value is an empty list (no hidden layer).
fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

fn parse_classes(key: &str, v: &str) -> Result<Vec<TerrainClass>> {
    if v.is_empty() {
        return Err(Error::Config(format!("{key}: empty terrain list")));
    }
    v.split(',').map(|s| TerrainClass::parse(s.trim())).collect()
}

/// `{:?}` prints the shortest representation that reparses to the same f64,
/// which keeps dump -> parse round trips exact.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_list(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn fmt_classes(v: &[TerrainClass]) -> String {
    v.iter().map(|c| c.name()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.train.seed = parse_u64(key, value)?,
            "model.elevation_latent" => self.use_elevation_latent = parse_bool(key, value)?,
            "model.contrastive_raw_elevation" => {
                self.contrastive_raw_elevation = parse_bool(key, value)?
            }
            "env.history_len" => self.env.history_len = parse_usize(key, value)?,
            "env.episode_seconds" => self.env.episode_seconds = parse_f64(key, value)?,
            "env.reset_jitter" => self.env.reset_jitter = parse_f64(key, value)?,
            "env.spawn_x" => self.env.spawn_x = parse_f64(key, value)?,
            "env.push_interval" => self.env.push_interval = parse_f64(key, value)?,
            "env.push_magnitude" => self.env.push_magnitude = parse_f64(key, value)?,
            "env.push_duration" => self.env.push_duration = parse_f64(key, value)?,
            "env.pitch_limit" => self.env.pitch_limit = parse_f64(key, value)?,
            "physics.kp" => self.env.physics.kp = parse_f64(key, value)?,
            "physics.kd" => self.env.physics.kd = parse_f64(key, value)?,
            "physics.torque_limit" => self.env.physics.torque_limit = parse_f64(key, value)?,
            "physics.substeps" => self.env.physics.substeps = parse_usize(key, value)?,
            "physics.friction" => self.env.physics.friction = parse_f64(key, value)?,
            "reward.tracking_sigma" => self.env.reward.tracking_sigma = parse_f64(key, value)?,
            "reward.air_time_target" => self.env.reward.air_time_target = parse_f64(key, value)?,
            "reward.soft_limit_factor" => {
                self.env.reward.soft_limit_factor = parse_f64(key, value)?
            }
            "reward.edge_margin" => self.env.reward.edge_margin = parse_f64(key, value)?,
            "noise.salt_pepper_p" => self.env.noise.salt_pepper_p = parse_f64(key, value)?,
            "noise.difficulty_scaling" => {
                self.env.noise.difficulty_scaling = parse_f64(key, value)?
            }
            "noise.gaussian_sigma" => self.env.noise.gaussian_sigma = parse_f64(key, value)?,
            "noise.delay_steps" => self.env.noise.delay_steps = parse_usize(key, value)?,
            "noise.chamfer_radius" => self.env.noise.chamfer_radius = parse_f64(key, value)?,
            "noise.offset_range" => self.env.noise.offset_range = parse_f64(key, value)?,
            "noise.shift_range" => self.env.noise.shift_range = parse_f64(key, value)?,
            "dr.enabled" => self.env.dr.enabled = parse_bool(key, value)?,
            "dr.mass_range" => self.env.dr.mass_range = parse_f64(key, value)?,
            "dr.friction_lo" => self.env.dr.friction_range.0 = parse_f64(key, value)?,
            "dr.friction_hi" => self.env.dr.friction_range.1 = parse_f64(key, value)?,
            "dr.restitution_lo" => self.env.dr.restitution_range.0 = parse_f64(key, value)?,
            "dr.restitution_hi" => self.env.dr.restitution_range.1 = parse_f64(key, value)?,
            "dr.motor_range" => self.env.dr.motor_range = parse_f64(key, value)?,
            "dr.gain_range" => self.env.dr.gain_range = parse_f64(key, value)?,
            "policy.num_experts" => self.policy.num_experts = parse_usize(key, value)?,
            "policy.actor_hidden" => self.policy.actor_hidden = parse_usize_list(key, value)?,
            "policy.critic_hidden" => self.policy.critic_hidden = parse_usize_list(key, value)?,
            "policy.gate_hidden" => self.policy.gate_hidden = parse_usize_list(key, value)?,
            "policy.init_log_std" => self.policy.init_log_std = parse_f64(key, value)?,
            "estimator.latent_dim" => self.estimator.latent_dim = parse_usize(key, value)?,
            "estimator.trunk_hidden" => {
                self.estimator.trunk_hidden = parse_usize_list(key, value)?
            }
            "estimator.decoder_hidden" => {
                self.estimator.decoder_hidden = parse_usize_list(key, value)?
            }
            "estimator.beta" => self.estimator.beta = parse_f64(key, value)?,
            "estimator.elevation_latent" => {
                self.estimator.elevation_latent = parse_usize(key, value)?
            }
            "estimator.elevation_hidden" => {
                self.estimator.elevation_hidden = parse_usize_list(key, value)?
            }
            "contrastive.dim" => self.contrastive.dim = parse_usize(key, value)?,
            "contrastive.prototypes" => self.contrastive.num_prototypes = parse_usize(key, value)?,
            "contrastive.temperature" => self.contrastive.temperature = parse_f64(key, value)?,
            "contrastive.sinkhorn_iters" => {
                self.contrastive.sinkhorn_iters = parse_usize(key, value)?
            }
            "contrastive.sinkhorn_eps" => self.contrastive.sinkhorn_eps = parse_f64(key, value)?,
            "contrastive.gate_proj_hidden" => {
                self.contrastive.gate_proj_hidden = parse_usize_list(key, value)?
            }
            "contrastive.elev_proj_hidden" => {
                self.contrastive.elev_proj_hidden = parse_usize_list(key, value)?
            }
            "train.iterations" => self.train.iterations = parse_usize(key, value)?,
            "train.horizon" => self.train.horizon = parse_usize(key, value)?,
            "train.num_envs" => self.train.num_envs = parse_usize(key, value)?,
            "train.gamma" => self.train.gamma = parse_f64(key, value)?,
            "train.lambda" => self.train.lam = parse_f64(key, value)?,
            "train.clip" => self.train.clip = parse_f64(key, value)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value)?,
            "train.minibatches" => self.train.minibatches = parse_usize(key, value)?,
            "train.entropy_coef" => self.train.entropy_coef = parse_f64(key, value)?,
            "train.value_coef" => self.train.value_coef = parse_f64(key, value)?,
            "train.c_cs" => self.train.c_cs = parse_f64(key, value)?,
            "train.c_ae" => self.train.c_ae = parse_f64(key, value)?,
            "train.c_swav" => self.train.c_swav = parse_f64(key, value)?,
            "train.lr" => self.train.lr = parse_f64(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse_usize(key, value)?,
            "train.terrain_length" => self.train.terrain_length = parse_f64(key, value)?,
            "train.classes" => self.train.classes = parse_classes(key, value)?,
            "curriculum.promote" => self.train.curriculum.promote = parse_f64(key, value)?,
            "curriculum.demote" => self.train.curriculum.demote = parse_f64(key, value)?,
            "curriculum.max_level" => self.train.curriculum.max_level = parse_usize(key, value)?,
            "curriculum.vel_base" => self.train.curriculum.vel_base = parse_f64(key, value)?,
            "curriculum.vel_min" => self.train.curriculum.vel_min = parse_f64(key, value)?,
            "curriculum.vel_max" => self.train.curriculum.vel_max = parse_f64(key, value)?,
            "curriculum.alternate_heading" => {
                self.train.curriculum.alternate_heading = parse_bool(key, value)?
            }
            "bench.episodes" => self.bench.episodes_per_terrain = parse_usize(key, value)?,
            "bench.duration" => self.bench.duration_seconds = parse_f64(key, value)?,
            "bench.command" => self.bench.command_speed = parse_f64(key, value)?,
            "bench.runway" => self.bench.runway = parse_f64(key, value)?,
            "bench.early_success" => self.bench.early_success = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.train.seed.to_string(),
            "model.elevation_latent" => self.use_elevation_latent.to_string(),
            "model.contrastive_raw_elevation" => self.contrastive_raw_elevation.to_string(),
            "env.history_len" => self.env.history_len.to_string(),
            "env.episode_seconds" => fmt_f64(self.env.episode_seconds),
            "env.reset_jitter" => fmt_f64(self.env.reset_jitter),
            "env.spawn_x" => fmt_f64(self.env.spawn_x),
            "env.push_interval" => fmt_f64(self.env.push_interval),
            "env.push_magnitude" => fmt_f64(self.env.push_magnitude),
            "env.push_duration" => fmt_f64(self.env.push_duration),
            "env.pitch_limit" => fmt_f64(self.env.pitch_limit),
            "physics.kp" => fmt_f64(self.env.physics.kp),
            "physics.kd" => fmt_f64(self.env.physics.kd),
            "physics.torque_limit" => fmt_f64(self.env.physics.torque_limit),
            "physics.substeps" => self.env.physics.substeps.to_string(),
            "physics.friction" => fmt_f64(self.env.physics.friction),
            "reward.tracking_sigma" => fmt_f64(self.env.reward.tracking_sigma),
            "reward.air_time_target" => fmt_f64(self.env.reward.air_time_target),
            "reward.soft_limit_factor" => fmt_f64(self.env.reward.soft_limit_factor),
            "reward.edge_margin" => fmt_f64(self.env.reward.edge_margin),
            "noise.salt_pepper_p" => fmt_f64(self.env.noise.salt_pepper_p),
            "noise.difficulty_scaling" => fmt_f64(self.env.noise.difficulty_scaling),
            "noise.gaussian_sigma" => fmt_f64(self.env.noise.gaussian_sigma),
            "noise.delay_steps" => self.env.noise.delay_steps.to_string(),
            "noise.chamfer_radius" => fmt_f64(self.env.noise.chamfer_radius),
            "noise.offset_range" => fmt_f64(self.env.noise.offset_range),
            "noise.shift_range" => fmt_f64(self.env.noise.shift_range),
            "dr.enabled" => self.env.dr.enabled.to_string(),
            "dr.mass_range" => fmt_f64(self.env.dr.mass_range),
            "dr.friction_lo" => fmt_f64(self.env.dr.friction_range.0),
            "dr.friction_hi" => fmt_f64(self.env.dr.friction_range.1),
            "dr.restitution_lo" => fmt_f64(self.env.dr.restitution_range.0),
            "dr.restitution_hi" => fmt_f64(self.env.dr.restitution_range.1),
            "dr.motor_range" => fmt_f64(self.env.dr.motor_range),
            "dr.gain_range" => fmt_f64(self.env.dr.gain_range),
            "policy.num_experts" => self.policy.num_experts.to_string(),
            "policy.actor_hidden" => fmt_list(&self.policy.actor_hidden),
            "policy.critic_hidden" => fmt_list(&self.policy.critic_hidden),
            "policy.gate_hidden" => fmt_list(&self.policy.gate_hidden),
            "policy.init_log_std" => fmt_f64(self.policy.init_log_std),
            "estimator.latent_dim" => self.estimator.latent_dim.to_string(),
            "estimator.trunk_hidden" => fmt_list(&self.estimator.trunk_hidden),
            "estimator.decoder_hidden" => fmt_list(&self.estimator.decoder_hidden),
            "estimator.beta" => fmt_f64(self.estimator.beta),
            "estimator.elevation_latent" => self.estimator.elevation_latent.to_string(),
            "estimator.elevation_hidden" => fmt_list(&self.estimator.elevation_hidden),
            "contrastive.dim" => self.contrastive.dim.to_string(),
            "contrastive.prototypes" => self.contrastive.num_prototypes.to_string(),
            "contrastive.temperature" => fmt_f64(self.contrastive.temperature),
            "contrastive.sinkhorn_iters" => self.contrastive.sinkhorn_iters.to_string(),
            "contrastive.sinkhorn_eps" => fmt_f64(self.contrastive.sinkhorn_eps),
            "contrastive.gate_proj_hidden" => fmt_list(&self.contrastive.gate_proj_hidden),
            "contrastive.elev_proj_hidden" => fmt_list(&self.contrastive.elev_proj_hidden),
            "train.iterations" => self.train.iterations.to_string(),
            "train.horizon" => self.train.horizon.to_string(),
            "train.num_envs" => self.train.num_envs.to_string(),
            "train.gamma" => fmt_f64(self.train.gamma),
            "train.lambda" => fmt_f64(self.train.lam),
            "train.clip" => fmt_f64(self.train.clip),
            "train.epochs" => self.train.epochs.to_string(),
            "train.minibatches" => self.train.minibatches.to_string(),
            "train.entropy_coef" => fmt_f64(self.train.entropy_coef),
            "train.value_coef" => fmt_f64(self.train.value_coef),
            "train.c_cs" => fmt_f64(self.train.c_cs),
            "train.c_ae" => fmt_f64(self.train.c_ae),
            "train.c_swav" => fmt_f64(self.train.c_swav),
            "train.lr" => fmt_f64(self.train.lr),
            "train.checkpoint_every" => self.train.checkpoint_every.to_string(),
            "train.terrain_length" => fmt_f64(self.train.terrain_length),
            "train.classes" => fmt_classes(&self.train.classes),
            "curriculum.promote" => fmt_f64(self.train.curriculum.promote),
            "curriculum.demote" => fmt_f64(self.train.curriculum.demote),
            "curriculum.max_level" => self.train.curriculum.max_level.to_string(),
            "curriculum.vel_base" => fmt_f64(self.train.curriculum.vel_base),
            "curriculum.vel_min" => fmt_f64(self.train.curriculum.vel_min),
            "curriculum.vel_max" => fmt_f64(self.train.curriculum.vel_max),
            "curriculum.alternate_heading" => self.train.curriculum.alternate_heading.to_string(),
            "bench.episodes" => self.bench.episodes_per_terrain.to_string(),
            "bench.duration" => fmt_f64(self.bench.duration_seconds),
            "bench.command" => fmt_f64(self.bench.command_speed),
            "bench.runway" => fmt_f64(self.bench.runway),
            "bench.early_success" => self.bench.early_success.to_string(),
            _ => unreachable!("key {key:?} missing from get table"),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment, blank lines skip.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", idx + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        self.apply_text(&text)
    }

    /// `--set key=value` overrides, applied after the file in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, sets: &[S]) -> Result<()> {
        for s in sets {
            let s = s.as_ref();
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {s:?}: expected key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Policy input width implied by the feature layout: command(2) +
    /// context latent + optional elevation latent + proprioception +
    /// elevation map.
    pub fn policy_input_dim(&self) -> usize {
        2 + self.estimator.latent_dim
            + if self.use_elevation_latent {
                self.estimator.elevation_latent
            } else {
                0
            }
            + PROPRIO_DIM
            + ELEVATION_DIM
    }

    /// Policy config with `input_dim` patched to the assembled layout.
    pub fn resolved_policy(&self) -> PolicyConfig {
        let mut p = self.policy.clone();
        p.input_dim = self.policy_input_dim();
        p
    }

    /// Estimator config with the env-owned dimensions patched in.
    pub fn resolved_estimator(&self) -> EstimatorConfig {
        let mut e = self.estimator.clone();
        e.history_len = self.env.history_len;
        e.obs_dim = PROPRIO_DIM;
        e.elevation_dim = ELEVATION_DIM;
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_policy().validate()?;
        self.resolved_estimator().validate()?;
        self.contrastive.validate()?;
        let t = &self.train;
        for (name, v) in [("train.gamma", t.gamma), ("train.lambda", t.lam)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("train.entropy_coef", t.entropy_coef),
            ("train.value_coef", t.value_coef),
            ("train.c_cs", t.c_cs),
            ("train.c_ae", t.c_ae),
            ("train.c_swav", t.c_swav),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(t.clip > 0.0) || !(t.lr > 0.0) || !(t.terrain_length > 0.0) {
            return Err(Error::Config("clip, lr, terrain_length must be positive".into()));
        }
        if t.horizon == 0 || t.num_envs == 0 || t.epochs == 0 || t.minibatches == 0 {
            return Err(Error::Config(
                "horizon, num_envs, epochs, minibatches must be positive".into(),
            ));
        }
        if (t.horizon * t.num_envs) % t.minibatches != 0 {
            return Err(Error::Config(format!(
                "minibatches ({}) must divide horizon*num_envs ({})",
                t.minibatches,
                t.horizon * t.num_envs
            )));
        }
        if t.classes.is_empty() {
            return Err(Error::Config("train.classes is empty".into()));
        }
        let c = &t.curriculum;
        if !(c.demote >= 0.0 && c.demote < c.promote && c.promote <= 1.0) {
            return Err(Error::Config(format!(
                "curriculum thresholds need 0 <= demote < promote <= 1, got {} / {}",
                c.demote, c.promote
            )));
        }
        if c.max_level == 0 {
            return Err(Error::Config("curriculum.max_level must be >= 1".into()));
        }
        if !(c.vel_min <= c.vel_base && c.vel_base <= c.vel_max) {
            return Err(Error::Config(format!(
                "need vel_min <= vel_base <= vel_max, got {} / {} / {}",
                c.vel_min, c.vel_base, c.vel_max
            )));
        }
        let e = &self.env;
        if e.history_len == 0 || e.physics.substeps == 0 {
            return Err(Error::Config("history_len and substeps must be >= 1".into()));
        }
        if !(e.episode_seconds > 0.0) || !(e.pitch_limit > 0.0) {
            return Err(Error::Config(
                "episode_seconds and pitch_limit must be positive".into(),
            ));
        }
        let n = &e.noise;
        if !(n.salt_pepper_p >= 0.0 && n.salt_pepper_p <= 0.5) {
            return Err(Error::Config(format!(
                "noise.salt_pepper_p must be in [0, 0.5], got {}",
                n.salt_pepper_p
            )));
        }
        if !(n.gaussian_sigma >= 0.0) || !(n.difficulty_scaling >= 0.0) {
            return Err(Error::Config("noise magnitudes must be >= 0".into()));
        }
        let d = &e.dr;
        if d.friction_range.0 > d.friction_range.1 || d.restitution_range.0 > d.restitution_range.1
        {
            return Err(Error::Config("dr ranges need lo <= hi".into()));
        }
        for (name, v) in [
            ("dr.mass_range", d.mass_range),
            ("dr.motor_range", d.motor_range),
            ("dr.gain_range", d.gain_range),
        ] {
            if !(v >= 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        let b = &self.bench;
        if !(b.duration_seconds > 0.0) || !(b.runway > 0.0) || !(b.command_speed > 0.0) {
            return Err(Error::Config(
                "bench duration, runway, command must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Every key in canonical order, one `key = value` line each.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    /// FNV-1a over the canonical dump. Identifies the configuration in
    /// benchmark reports; not a cryptographic commitment.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}
