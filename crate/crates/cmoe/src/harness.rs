//! Benchmark protocol, expert-activation traces, gate-weight cluster
//! quality, expert ablations, and the named baseline configurations.

use crate::config::RunConfig;
use crate::policy::{MoEPolicy, ACTION_DIM};
use crate::rng;
use crate::sim::{Done, Env, FailReason};
use crate::terrain::{Heightfield, TerrainClass};
use crate::trainer::Model;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Benchmarks run every class at this fixed mid-scale difficulty; the
/// curriculum never touches evaluation.
pub const BENCH_DIFFICULTY: f64 = 0.5;

/// A step is "near" a terrain feature within this many meters of an edge.
pub const EDGE_PROXIMITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct FailureCounts {
    pub collision: usize,
    pub pitch: usize,
    pub non_finite: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TerrainResult {
    pub terrain: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub avg_distance: f64,
    pub failures: FailureCounts,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub seed: u64,
    pub config_hash: String,
    /// Index of the expert removed for this run, absent when none was.
    pub ablated: Option<usize>,
    pub terrains: Vec<TerrainResult>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "terrain,episodes,successes,success_rate,avg_distance,\
             fail_collision,fail_pitch,fail_non_finite\n",
        );
        for t in &self.terrains {
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{},{},{}\n",
                t.terrain,
                t.episodes,
                t.successes,
                t.success_rate,
                t.avg_distance,
                t.failures.collision,
                t.failures.pitch,
                t.failures.non_finite,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

struct EpisodeOutcome {
    success: bool,
    distance: f64,
    fail: Option<FailReason>,
}

fn bench_episode(
    model: &Model,
    policy: &MoEPolicy,
    cfg: &RunConfig,
    class: TerrainClass,
    seed: u64,
    index: usize,
) -> Result<EpisodeOutcome> {
    let bench = &cfg.bench;
    let mut env_cfg = cfg.env.clone();
    env_cfg.episode_seconds = bench.duration_seconds;
    let mut terrain_rng = rng::stream(seed, rng::STREAM_BENCH_BASE + index as u64);
    let length = (env_cfg.spawn_x + bench.runway + 4.0).max(crate::terrain::MIN_LENGTH);
    let hf = Heightfield::generate(class, BENCH_DIFFICULTY, length, &mut terrain_rng)?;
    let mut env = Env::new(env_cfg, seed, index);
    let mut obs = env.reset(hf, (bench.command_speed, bench.command_speed))?;
    loop {
        let feats = model.assemble(&obs, None);
        let (mu, _, _) = policy.moe_action(&model.store, &feats.input);
        let mut action = [0.0; ACTION_DIM];
        action.copy_from_slice(&mu);
        let out = env.step(action)?;
        let distance = env.distance_traveled().min(bench.runway);
        if bench.early_success && env.distance_traveled() >= bench.runway {
            return Ok(EpisodeOutcome { success: true, distance, fail: None });
        }
        match out.done {
            Done::Running => obs = out.obs,
            Done::TimeLimit => {
                return Ok(EpisodeOutcome { success: true, distance, fail: None })
            }
            Done::Failure(reason) => {
                return Ok(EpisodeOutcome {
                    success: false,
                    distance,
                    fail: Some(reason),
                })
            }
        }
    }
}

fn run_with_policy(
    model: &Model,
    policy: &MoEPolicy,
    cfg: &RunConfig,
    terrains: &[TerrainClass],
    seed: u64,
) -> Result<BenchReport> {
    let episodes = cfg.bench.episodes_per_terrain;
    let jobs: Vec<(usize, TerrainClass, usize)> = terrains
        .iter()
        .enumerate()
        .flat_map(|(ci, &class)| (0..episodes).map(move |e| (ci, class, ci * episodes + e)))
        .collect();
    let outcomes: Vec<Result<EpisodeOutcome>> = jobs
        .par_iter()
        .map(|&(_, class, index)| bench_episode(model, policy, cfg, class, seed, index))
        .collect();

    let mut results: Vec<TerrainResult> = terrains
        .iter()
        .map(|&c| TerrainResult {
            terrain: c.name().to_string(),
            episodes: 0,
            successes: 0,
            success_rate: 0.0,
            avg_distance: 0.0,
            failures: FailureCounts::default(),
        })
        .collect();
    for (&(ci, _, _), outcome) in jobs.iter().zip(outcomes) {
        let o = outcome?;
        let r = &mut results[ci];
        r.episodes += 1;
        r.avg_distance += o.distance;
        if o.success {
            r.successes += 1;
        }
        match o.fail {
            Some(FailReason::Collision) => r.failures.collision += 1,
            Some(FailReason::Pitch) => r.failures.pitch += 1,
            Some(FailReason::NonFinite) => r.failures.non_finite += 1,
            None => {}
        }
    }
    for r in &mut results {
        if r.episodes > 0 {
            r.success_rate = r.successes as f64 / r.episodes as f64;
            r.avg_distance /= r.episodes as f64;
        }
    }
    Ok(BenchReport {
        seed,
        config_hash: format!("{:016x}", cfg.hash()),
        ablated: None,
        terrains: results,
    })
}

/// Deterministic evaluation: mean actions, mean latents, per-episode random
/// streams keyed by (seed, episode index) so the schedule cannot matter.
pub fn run_benchmark(
    model: &Model,
    cfg: &RunConfig,
    terrains: &[TerrainClass],
    seed: u64,
) -> Result<BenchReport> {
    run_with_policy(model, &model.policy, cfg, terrains, seed)
}

/// Benchmark with expert `k` removed from the fusion (its gate weight is
/// not redistributed). The report carries the ablated index.
pub fn run_ablation(
    model: &Model,
    cfg: &RunConfig,
    k: usize,
    terrains: &[TerrainClass],
    seed: u64,
) -> Result<BenchReport> {
    let masked = model.policy.ablate_expert(k)?;
    let mut report = run_with_policy(model, &masked, cfg, terrains, seed)?;
    report.ablated = Some(k);
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ActivationRow {
    pub step: usize,
    pub terrain: usize,
    /// "edge" within `EDGE_PROXIMITY` of a terrain feature, else "open".
    pub feature: &'static str,
    pub gate_weights: Vec<f64>,
    pub expert_norms: Vec<f64>,
}

/// One row per control step over `episodes` episodes of each class, classes
/// in the given order. The gate weights are the policy's actual fusion
/// weights; norms are each expert's raw action magnitude.
pub fn export_activations(
    model: &Model,
    cfg: &RunConfig,
    terrains: &[TerrainClass],
    episodes: usize,
    seed: u64,
) -> Result<Vec<ActivationRow>> {
    let mut rows = Vec::new();
    let mut step = 0usize;
    for (ci, &class) in terrains.iter().enumerate() {
        for e in 0..episodes {
            let index = ci * episodes + e;
            let bench = &cfg.bench;
            let mut env_cfg = cfg.env.clone();
            env_cfg.episode_seconds = bench.duration_seconds;
            let mut terrain_rng = rng::stream(seed, rng::STREAM_BENCH_BASE + index as u64);
            let length = (env_cfg.spawn_x + bench.runway + 4.0).max(crate::terrain::MIN_LENGTH);
            let hf = Heightfield::generate(class, BENCH_DIFFICULTY, length, &mut terrain_rng)?;
            let mut env = Env::new(env_cfg, seed, index);
            let mut obs = env.reset(hf, (bench.command_speed, bench.command_speed))?;
            loop {
                let feats = model.assemble(&obs, None);
                let (mu, _, gate) = model.policy.moe_action(&model.store, &feats.input);
                let x = env.walker().q[0];
                let near = env
                    .heightfield()
                    .feature_edges
                    .iter()
                    .any(|&ex| (ex - x).abs() <= EDGE_PROXIMITY);
                let norms = model
                    .policy
                    .expert_actions(&model.store, &feats.input)
                    .iter()
                    .map(|a| a.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect();
                rows.push(ActivationRow {
                    step,
                    terrain: class.index(),
                    feature: if near { "edge" } else { "open" },
                    gate_weights: gate.weights.clone(),
                    expert_norms: norms,
                });
                step += 1;
                let mut action = [0.0; ACTION_DIM];
                action.copy_from_slice(&mu);
                let out = env.step(action)?;
                if out.done.is_done() {
                    break;
                }
                obs = out.obs;
            }
        }
    }
    Ok(rows)
}

pub fn activations_csv(rows: &[ActivationRow], num_experts: usize) -> String {
    let mut out = String::from("step,terrain,feature");
    for i in 0..num_experts {
        out.push_str(&format!(",w{i}"));
    }
    for i in 0..num_experts {
        out.push_str(&format!(",norm{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.step, r.terrain, r.feature));
        for w in &r.gate_weights {
            out.push_str(&format!(",{w:?}"));
        }
        for n in &r.expert_norms {
            out.push_str(&format!(",{n:?}"));
        }
        out.push('\n');
    }
    out
}

/// Mean silhouette over all points, Euclidean distance. Labels select the
/// cluster of each point; every cluster needs at least two members and
/// there must be at least two clusters, otherwise a(i) or b(i) is
/// undefined.
pub fn cluster_quality(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Contract(format!(
            "silhouette needs at least 2 groups, got {}",
            classes.len()
        )));
    }
    let counts: Vec<usize> = classes
        .iter()
        .map(|&c| labels.iter().filter(|&&l| l == c).count())
        .collect();
    if let Some(pos) = counts.iter().position(|&n| n < 2) {
        return Err(Error::Contract(format!(
            "silhouette group {} has {} point(s), need at least 2",
            classes[pos], counts[pos]
        )));
    }

    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        // Mean distance to every cluster, own cluster excluding self.
        let mut sums = vec![0.0; classes.len()];
        let mut cnts = vec![0usize; classes.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let g = classes.iter().position(|&c| c == labels[j]).expect("label seen");
            sums[g] += dist(&points[i], &points[j]);
            cnts[g] += 1;
        }
        let own = classes.iter().position(|&c| c == labels[i]).expect("label seen");
        let a = sums[own] / cnts[own] as f64;
        let b = classes
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != own)
            .map(|(g, _)| sums[g] / cnts[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Single wide actor-critic, parameter-matched to the mixture.
    Base,
    /// Mixture without the elevation embedding or the contrastive loss.
    VanillaMoe,
    /// The full stack.
    Cmoe,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<BaselineKind> {
        match s {
            "base" => Ok(BaselineKind::Base),
            "vanilla_moe" => Ok(BaselineKind::VanillaMoe),
            "cmoe" => Ok(BaselineKind::Cmoe),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?}; expected base, vanilla_moe, or cmoe"
            ))),
        }
    }
}

fn mlp_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Policy-network parameter count (experts, gate, log-std) for a config,
/// without building anything.
pub fn policy_param_count(cfg: &RunConfig) -> usize {
    let p = cfg.resolved_policy();
    let mut actor = vec![p.input_dim];
    actor.extend_from_slice(&p.actor_hidden);
    actor.push(p.action_dim);
    let mut critic = vec![p.privileged_dim()];
    critic.extend_from_slice(&p.critic_hidden);
    critic.push(1);
    let mut gate = vec![p.input_dim];
    gate.extend_from_slice(&p.gate_hidden);
    gate.push(p.num_experts);
    p.num_experts * (mlp_params(&actor) + mlp_params(&critic)) + mlp_params(&gate) + p.action_dim
}

/// The named training setups compared in the benchmark study.
///
/// base keeps the full perception stack; only the mixture is replaced by a
/// single actor-critic whose two hidden layers are widened until the policy
/// parameter counts match as closely as integer widths allow.
pub fn build_baseline(kind: BaselineKind, cfg: &RunConfig) -> RunConfig {
    let mut out = cfg.clone();
    match kind {
        BaselineKind::Cmoe => out,
        BaselineKind::VanillaMoe => {
            out.use_elevation_latent = false;
            out.train.c_ae = 0.0;
            out.train.c_swav = 0.0;
            out
        }
        BaselineKind::Base => {
            out.policy.num_experts = 1;
            out.policy.allow_single = true;
            out.policy.gate_hidden = Vec::new();
            out.train.c_swav = 0.0;
            let target = policy_param_count(cfg);
            let mut best = (usize::MAX, 0usize);
            for h in 4..=2048 {
                out.policy.actor_hidden = vec![h, h];
                out.policy.critic_hidden = vec![h, h];
                let count = policy_param_count(&out);
                let gap = count.abs_diff(target);
                if gap < best.0 {
                    best = (gap, h);
                }
            }
            out.policy.actor_hidden = vec![best.1, best.1];
            out.policy.critic_hidden = vec![best.1, best.1];
            out
        }
    }
}
