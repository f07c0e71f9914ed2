//! Rollout collection, generalized advantage estimation, the composite
//! clipped-surrogate update, the terrain-level curriculum, and the top-level
//! training loop.
//!
//! One iteration: every environment walks `horizon` steps against read-only
//! parameters (concurrently; each environment owns its random stream, so the
//! schedule cannot change results), then a single coordinator runs the update
//! epochs and mutates parameters. Estimator and contrastive losses ride in
//! the same composite objective as the surrogate: one tape, one optimizer
//! step per minibatch.

use crate::config::RunConfig;
use crate::contrastive::ContrastiveHead;
use crate::estimators::{sample_latent, ContextEstimator, ElevationAutoencoder};
use crate::nn::checkpoint;
use crate::nn::optim::Adam;
use crate::nn::store::ParamStore;
use crate::nn::tape::Tape;
use crate::nn::tensor::Tensor;
use crate::percept::ELEVATION_DIM;
use crate::policy::{action_log_prob, MoEPolicy, RunningNorm, ACTION_DIM};
use crate::rng;
use crate::sim::reward::{NUM_TERMS, TERM_NAMES};
use crate::sim::{Env, EnvObs, NUM_CLASSES, PROPRIO_DIM};
use crate::terrain::{Heightfield, TerrainClass};
use crate::{io_err, Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// The policy, its estimators, and the input normalizer over one parameter
/// store. Construction order fixes the checkpoint layout.
pub struct Model {
    pub store: ParamStore,
    pub policy: MoEPolicy,
    pub context: ContextEstimator,
    pub elevation: Option<ElevationAutoencoder>,
    pub contrastive: Option<ContrastiveHead>,
    pub norm: RunningNorm,
    pub use_elevation_latent: bool,
    pub contrastive_raw_elevation: bool,
}

impl Model {
    pub fn new(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Model {
        let mut store = ParamStore::new();
        let policy = MoEPolicy::new(&mut store, &cfg.resolved_policy(), rng);
        let context = ContextEstimator::new(&mut store, &cfg.resolved_estimator(), rng);
        let want_swav = cfg.train.c_swav > 0.0;
        let need_ae = cfg.use_elevation_latent
            || cfg.train.c_ae > 0.0
            || (want_swav && !cfg.contrastive_raw_elevation);
        let elevation = need_ae
            .then(|| ElevationAutoencoder::new(&mut store, &cfg.resolved_estimator(), rng));
        let contrastive = want_swav.then(|| {
            let elev_dim = if cfg.contrastive_raw_elevation {
                ELEVATION_DIM
            } else {
                cfg.estimator.elevation_latent
            };
            ContrastiveHead::new(
                &mut store,
                &cfg.contrastive,
                cfg.policy.num_experts,
                elev_dim,
                rng,
            )
        });
        let norm = RunningNorm::new(&mut store, "norm", cfg.policy_input_dim());
        Model {
            store,
            policy,
            context,
            elevation,
            contrastive,
            norm,
            use_elevation_latent: cfg.use_elevation_latent,
            contrastive_raw_elevation: cfg.contrastive_raw_elevation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.policy.cfg.input_dim
    }

    /// Builds the policy input for one observation: estimated velocity,
    /// context latent, optional elevation embedding, proprioception, raw
    /// map. `z_noise` carries the reparameterization draw; `None` uses the
    /// latent mean (the inference path).
    pub fn assemble(&self, obs: &EnvObs, z_noise: Option<&[f64]>) -> Features {
        let enc = self.context.encode_history(&self.store, &obs.history);
        let z_h = match z_noise {
            Some(n) => sample_latent(&enc.z_mean, &enc.z_logvar, n),
            None => enc.z_mean.clone(),
        };
        let mut raw = Vec::with_capacity(self.input_dim());
        raw.extend_from_slice(&enc.vel);
        raw.extend_from_slice(&z_h);
        if self.use_elevation_latent {
            let ae = self.elevation.as_ref().expect("elevation latent without autoencoder");
            raw.extend_from_slice(&ae.encode(&self.store, &obs.elevation_noisy));
        }
        raw.extend_from_slice(&obs.proprio);
        raw.extend_from_slice(&obs.elevation_noisy);
        debug_assert_eq!(raw.len(), self.input_dim(), "policy input layout");
        let input = self.norm.normalize(&self.store, &raw);
        let mut privileged = input.clone();
        privileged.extend_from_slice(&obs.true_vel);
        privileged.extend_from_slice(&obs.terrain_one_hot);
        Features {
            input,
            raw,
            privileged,
        }
    }
}

pub struct Features {
    /// Normalized policy input.
    pub input: Vec<f64>,
    /// Pre-normalization input, fed back into the normalizer statistics.
    pub raw: Vec<f64>,
    /// Normalized input with true velocity and terrain one-hot appended.
    pub privileged: Vec<f64>,
}

/// Promotion/demotion on the fraction of terrain length traveled.
pub fn curriculum_step(
    level: usize,
    traveled_frac: f64,
    promote: f64,
    demote: f64,
    max_level: usize,
) -> usize {
    if traveled_frac >= promote {
        (level + 1).min(max_level)
    } else if traveled_frac < demote {
        level.saturating_sub(1)
    } else {
        level
    }
}

/// One environment with its curriculum level and private random stream.
struct EnvSlot {
    env: Env,
    class: TerrainClass,
    level: usize,
    rng: ChaCha8Rng,
    obs: EnvObs,
    episode_return: f64,
}

impl EnvSlot {
    /// Generated field length: everything reachable in an episode plus
    /// margin, so features never simply run out under a fast walker.
    fn gen_length(cfg: &RunConfig) -> f64 {
        let reach = cfg.env.spawn_x + cfg.env.episode_seconds * cfg.train.curriculum.vel_max + 2.0;
        reach.max(crate::terrain::MIN_LENGTH)
    }

    fn reset(&mut self, cfg: &RunConfig) -> Result<()> {
        let cur = &cfg.train.curriculum;
        let difficulty = self.level as f64 / cur.max_level as f64;
        let hf = Heightfield::generate(
            self.class,
            difficulty,
            Self::gen_length(cfg),
            &mut self.rng,
        )?;
        let mut range = cur.command_range(self.level, self.class.is_complex());
        if cur.alternate_heading && self.class.is_complex() && self.rng.gen_bool(0.5) {
            range = (-range.1, -range.0);
        }
        self.obs = self.env.reset(hf, range)?;
        self.episode_return = 0.0;
        Ok(())
    }
}

/// Time-major rollout storage; row `t * num_envs + e`.
pub struct RolloutBatch {
    pub horizon: usize,
    pub num_envs: usize,
    pub inputs: Tensor,
    pub raw_inputs: Tensor,
    pub privileged: Tensor,
    pub actions: Tensor,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub gate_weights: Tensor,
    pub histories: Tensor,
    pub true_vel: Tensor,
    pub next_obs: Tensor,
    pub clean_elev: Tensor,
    pub noisy_elev: Tensor,
    pub terrain_class: Vec<usize>,
    /// Value of the post-rollout state per env, for truncation bootstrap.
    pub bootstrap: Vec<f64>,
    /// Weighted reward-term sums over the whole batch.
    pub term_sums: [f64; NUM_TERMS],
    /// Returns of episodes that finished during this rollout.
    pub episode_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.horizon * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-slot stream results, merged into the batch in slot order.
struct SlotTrace {
    inputs: Vec<f64>,
    raw_inputs: Vec<f64>,
    privileged: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    values: Vec<f64>,
    gate_weights: Vec<f64>,
    histories: Vec<f64>,
    true_vel: Vec<f64>,
    next_obs: Vec<f64>,
    clean_elev: Vec<f64>,
    noisy_elev: Vec<f64>,
    bootstrap: f64,
    term_sums: [f64; NUM_TERMS],
    episode_returns: Vec<f64>,
}

fn run_slot(slot: &mut EnvSlot, model: &Model, cfg: &RunConfig, horizon: usize) -> Result<SlotTrace> {
    let latent_dim = model.context.latent_dim;
    let nj = ACTION_DIM;
    let mut tr = SlotTrace {
        inputs: Vec::with_capacity(horizon * model.input_dim()),
        raw_inputs: Vec::with_capacity(horizon * model.input_dim()),
        privileged: Vec::new(),
        actions: Vec::with_capacity(horizon * nj),
        log_probs: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        dones: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        gate_weights: Vec::new(),
        histories: Vec::new(),
        true_vel: Vec::with_capacity(horizon * 2),
        next_obs: Vec::with_capacity(horizon * PROPRIO_DIM),
        clean_elev: Vec::new(),
        noisy_elev: Vec::new(),
        bootstrap: 0.0,
        term_sums: [0.0; NUM_TERMS],
        episode_returns: Vec::new(),
    };
    let mut z_noise = vec![0.0; latent_dim];
    for _ in 0..horizon {
        for z in z_noise.iter_mut() {
            *z = standard_normal(&mut slot.rng);
        }
        let feats = model.assemble(&slot.obs, Some(&z_noise));
        let (mu, log_std, gate) = model.policy.moe_action(&model.store, &feats.input);
        let (value, _) = model.policy.moe_value(&model.store, &feats.privileged);
        let mut action = [0.0; ACTION_DIM];
        for j in 0..nj {
            action[j] = mu[j] + log_std[j].exp() * standard_normal(&mut slot.rng);
        }
        let lp = action_log_prob(&mu, &log_std, &action);

        tr.histories.extend_from_slice(&slot.obs.history);
        tr.clean_elev.extend_from_slice(&slot.obs.elevation_clean);
        tr.noisy_elev.extend_from_slice(&slot.obs.elevation_noisy);
        tr.inputs.extend_from_slice(&feats.input);
        tr.raw_inputs.extend_from_slice(&feats.raw);
        tr.privileged.extend_from_slice(&feats.privileged);
        tr.actions.extend_from_slice(&action);
        tr.log_probs.push(lp);
        tr.values.push(value);
        tr.gate_weights.extend_from_slice(&gate.weights);
        tr.true_vel.extend_from_slice(&slot.obs.true_vel);

        // The environment folds instability into `Done::Failure`; a step
        // error here is a caller bug and propagates.
        let out = slot.env.step(action)?;
        tr.rewards.push(out.reward.total);
        slot.episode_return += out.reward.total;
        for k in 0..NUM_TERMS {
            tr.term_sums[k] += out.reward.weighted[k];
        }
        tr.next_obs.extend_from_slice(&out.obs.proprio);
        let done = out.done.is_done();
        tr.dones.push(done);
        if done {
            tr.episode_returns.push(slot.episode_return);
            // Fall, blowup, or timeout all score the same way: how far did
            // it get before the episode ended.
            let frac = slot.env.distance_traveled() / cfg.train.terrain_length;
            slot.level = curriculum_step(
                slot.level,
                frac,
                cfg.train.curriculum.promote,
                cfg.train.curriculum.demote,
                cfg.train.curriculum.max_level,
            );
            slot.reset(cfg)?;
        } else {
            slot.obs = out.obs;
        }
    }
    for z in z_noise.iter_mut() {
        *z = standard_normal(&mut slot.rng);
    }
    let feats = model.assemble(&slot.obs, Some(&z_noise));
    let (v, _) = model.policy.moe_value(&model.store, &feats.privileged);
    tr.bootstrap = v;
    Ok(tr)
}

/// Box-Muller draw; two uniforms per normal keeps the stream layout simple.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard recursive estimator. `dones` cut value propagation (terminal
/// value zero); the final step bootstraps from `bootstrap` when not done.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    horizon: usize,
    num_envs: usize,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), horizon * num_envs);
    assert_eq!(values.len(), rewards.len());
    assert_eq!(dones.len(), rewards.len());
    assert_eq!(bootstrap.len(), num_envs);
    let mut adv = vec![0.0; rewards.len()];
    let mut ret = vec![0.0; rewards.len()];
    for e in 0..num_envs {
        let mut running = 0.0;
        for t in (0..horizon).rev() {
            let k = t * num_envs + e;
            let next_v = if dones[k] {
                0.0
            } else if t + 1 == horizon {
                bootstrap[e]
            } else {
                values[(t + 1) * num_envs + e]
            };
            let delta = rewards[k] + gamma * next_v - values[k];
            running = delta + gamma * lam * if dones[k] { 0.0 } else { running };
            adv[k] = running;
            ret[k] = adv[k] + values[k];
        }
    }
    (adv, ret)
}

/// In-place mean-zero, unit-std normalization. A constant batch stays all
/// zero rather than dividing by nothing.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 0.0 { (*a - mean) / std } else { 0.0 };
    }
}

#[derive(Clone, Debug, Default)]
pub struct UpdateReport {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    pub ctx_vel: f64,
    pub ctx_rec: f64,
    pub ctx_kl: f64,
    pub ae: f64,
    pub swav: f64,
    pub total: f64,
    pub redrawn_prototypes: usize,
    pub failed: bool,
    /// Surrogate of the first minibatch before any step, and the mean
    /// normalized advantage it saw. With unchanged parameters the first is
    /// the negation of the second.
    pub first_clip: f64,
    pub first_adv_mean: f64,
}

pub struct IterationStats {
    pub steps: usize,
    pub reward_mean: f64,
    pub ep_return_sum: f64,
    pub ep_count: usize,
    pub level_mean: f64,
    pub gate_entropy: f64,
    pub term_means: [f64; NUM_TERMS],
    pub update: UpdateReport,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub model: Model,
    optim: Adam,
    slots: Vec<EnvSlot>,
    /// Update-phase stream: epoch permutations, reparameterization noise,
    /// prototype redraws.
    update_rng: ChaCha8Rng,
    pub iteration: usize,
    best_level: [usize; NUM_CLASSES],
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Trainer> {
        cfg.validate()?;
        let seed = cfg.train.seed;
        let mut init_rng = rng::stream(seed, rng::STREAM_INIT);
        let model = Model::new(&cfg, &mut init_rng);
        let optim = Adam::new(&model.store, cfg.train.lr, 0.9, 0.999);
        let mut slots = Vec::with_capacity(cfg.train.num_envs);
        for i in 0..cfg.train.num_envs {
            let class = cfg.train.classes[i % cfg.train.classes.len()];
            let mut slot = EnvSlot {
                env: Env::new(cfg.env.clone(), seed, i),
                class,
                level: 0,
                rng: rng::stream(seed, rng::STREAM_SLOT_BASE + i as u64),
                obs: empty_obs(&cfg),
                episode_return: 0.0,
            };
            slot.reset(&cfg)?;
            slots.push(slot);
        }
        Ok(Trainer {
            model,
            optim,
            slots,
            update_rng: rng::stream(seed, rng::STREAM_TRAINER),
            iteration: 0,
            best_level: [0; NUM_CLASSES],
            cfg,
        })
    }

    pub fn collect(&mut self) -> Result<RolloutBatch> {
        let horizon = self.cfg.train.horizon;
        let num_envs = self.cfg.train.num_envs;
        let model = &self.model;
        let cfg = &self.cfg;
        let traces: Vec<Result<SlotTrace>> = self
            .slots
            .par_iter_mut()
            .map(|slot| run_slot(slot, model, cfg, horizon))
            .collect();
        let mut ts = Vec::with_capacity(num_envs);
        for t in traces {
            ts.push(t?);
        }

        let n = horizon * num_envs;
        let input_dim = self.model.input_dim();
        let priv_dim = self.model.policy.cfg.privileged_dim();
        let hist_dim = self.cfg.env.history_len * PROPRIO_DIM;
        let ne = self.model.policy.num_experts();
        let mut batch = RolloutBatch {
            horizon,
            num_envs,
            inputs: Tensor::zeros(n, input_dim),
            raw_inputs: Tensor::zeros(n, input_dim),
            privileged: Tensor::zeros(n, priv_dim),
            actions: Tensor::zeros(n, ACTION_DIM),
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            values: vec![0.0; n],
            gate_weights: Tensor::zeros(n, ne),
            histories: Tensor::zeros(n, hist_dim),
            true_vel: Tensor::zeros(n, 2),
            next_obs: Tensor::zeros(n, PROPRIO_DIM),
            clean_elev: Tensor::zeros(n, ELEVATION_DIM),
            noisy_elev: Tensor::zeros(n, ELEVATION_DIM),
            terrain_class: vec![0; n],
            bootstrap: vec![0.0; num_envs],
            term_sums: [0.0; NUM_TERMS],
            episode_returns: Vec::new(),
        };
        for (e, tr) in ts.iter().enumerate() {
            for t in 0..horizon {
                let k = t * num_envs + e;
                let copy = |dst: &mut Tensor, src: &[f64], w: usize| {
                    dst.data[k * w..(k + 1) * w].copy_from_slice(&src[t * w..(t + 1) * w]);
                };
                copy(&mut batch.inputs, &tr.inputs, input_dim);
                copy(&mut batch.raw_inputs, &tr.raw_inputs, input_dim);
                copy(&mut batch.privileged, &tr.privileged, priv_dim);
                copy(&mut batch.actions, &tr.actions, ACTION_DIM);
                copy(&mut batch.gate_weights, &tr.gate_weights, ne);
                copy(&mut batch.histories, &tr.histories, hist_dim);
                copy(&mut batch.true_vel, &tr.true_vel, 2);
                copy(&mut batch.next_obs, &tr.next_obs, PROPRIO_DIM);
                copy(&mut batch.clean_elev, &tr.clean_elev, ELEVATION_DIM);
                copy(&mut batch.noisy_elev, &tr.noisy_elev, ELEVATION_DIM);
                batch.log_probs[k] = tr.log_probs[t];
                batch.rewards[k] = tr.rewards[t];
                batch.dones[k] = tr.dones[t];
                batch.values[k] = tr.values[t];
                batch.terrain_class[k] = self.slots[e].class.index();
            }
            batch.bootstrap[e] = tr.bootstrap;
            for k in 0..NUM_TERMS {
                batch.term_sums[k] += tr.term_sums[k];
            }
            batch.episode_returns.extend_from_slice(&tr.episode_returns);
        }
        // Normalizer statistics absorb the rollout only after every input
        // was normalized with the frozen pre-rollout state.
        for r in 0..n {
            self.model
                .norm
                .update(&mut self.model.store, batch.raw_inputs.row_slice(r));
        }
        for slot in &self.slots {
            let ci = slot.class.index();
            self.best_level[ci] = self.best_level[ci].max(slot.level);
        }
        Ok(batch)
    }

    /// Clipped-surrogate update over epochs x minibatches with the estimator
    /// and contrastive losses in the same objective. A non-finite loss or
    /// gradient aborts the whole update and rolls parameters and optimizer
    /// state back to the iteration start.
    pub fn ppo_update(&mut self, batch: &RolloutBatch) -> Result<UpdateReport> {
        let t = self.cfg.train.clone();
        let n = batch.len();
        let (mut adv, ret) = gae(
            &batch.rewards,
            &batch.values,
            &batch.dones,
            &batch.bootstrap,
            batch.horizon,
            batch.num_envs,
            t.gamma,
            t.lam,
        );
        normalize_advantages(&mut adv);

        let snapshot: Vec<(String, Tensor)> = self
            .model
            .store
            .iter()
            .map(|(name, t)| (name.to_string(), t.clone()))
            .collect();
        let optim_snapshot = self.optim.state_entries(&self.model.store);

        let mut report = UpdateReport::default();
        let mut passes = 0usize;
        let mut first = true;
        let mut order: Vec<usize> = (0..n).collect();
        let mb_size = n / t.minibatches;
        'epochs: for _ in 0..t.epochs {
            // Fisher-Yates off the update stream; same seed, same batches.
            for i in (1..n).rev() {
                let j = self.update_rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for mb in 0..t.minibatches {
                let idx = &order[mb * mb_size..(mb + 1) * mb_size];
                match self.minibatch_pass(batch, &adv, &ret, idx, first, &mut report) {
                    Ok(()) => {
                        passes += 1;
                        first = false;
                    }
                    Err(Error::Numeric(_)) => {
                        report.failed = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if report.failed {
            for (name, val) in &snapshot {
                let id = self.model.store.by_name(name).expect("snapshot param");
                *self.model.store.get_mut(id) = val.clone();
            }
            self.optim.restore_state(&self.model.store, &optim_snapshot);
            return Ok(UpdateReport {
                failed: true,
                ..UpdateReport::default()
            });
        }
        let k = passes.max(1) as f64;
        report.clip /= k;
        report.value /= k;
        report.entropy /= k;
        report.ctx_vel /= k;
        report.ctx_rec /= k;
        report.ctx_kl /= k;
        report.ae /= k;
        report.swav /= k;
        report.total /= k;
        Ok(report)
    }

    fn minibatch_pass(
        &mut self,
        batch: &RolloutBatch,
        adv: &[f64],
        ret: &[f64],
        idx: &[usize],
        first: bool,
        report: &mut UpdateReport,
    ) -> Result<()> {
        let t = &self.cfg.train;
        let b = idx.len();
        let inputs = gather_rows(&batch.inputs, idx);
        let privileged = gather_rows(&batch.privileged, idx);
        let actions = gather_rows(&batch.actions, idx);
        let adv_mb = Tensor::from_vec(b, 1, idx.iter().map(|&k| adv[k]).collect());
        let ret_mb = Tensor::from_vec(b, 1, idx.iter().map(|&k| ret[k]).collect());
        let old_lp = Tensor::from_vec(b, 1, idx.iter().map(|&k| batch.log_probs[k]).collect());

        let mut tape = Tape::new(&self.model.store);
        let (mu, gate_w, _logits) = self.model.policy.actor_tape(&mut tape, &inputs);
        let lp = self.model.policy.log_prob_tape(&mut tape, mu, &actions);
        let old = tape.constant(old_lp);
        let diff = tape.sub(lp, old);
        let ratio = tape.exp(diff);
        let a = tape.constant(adv_mb.clone());
        let s1 = tape.mul(ratio, a);
        let clipped = tape.clamp(ratio, 1.0 - t.clip, 1.0 + t.clip);
        let s2 = tape.mul(clipped, a);
        let surr = tape.min(s1, s2);
        let surr_mean = tape.mean_all(surr);
        let clip_loss = tape.scale(surr_mean, -1.0);

        let (v_fused, _per_expert, _w) =
            self.model
                .policy
                .critic_tape(&mut tape, &inputs, &privileged);
        let r = tape.constant(ret_mb);
        let v_err = tape.sub(v_fused, r);
        let v_sq = tape.square(v_err);
        let value_loss = tape.mean_all(v_sq);

        let entropy = self.model.policy.entropy_tape(&mut tape);

        let mut total = clip_loss;
        let scaled_v = tape.scale(value_loss, t.value_coef);
        total = tape.add(total, scaled_v);
        let ent_term = tape.scale(entropy, -t.entropy_coef);
        total = tape.add(total, ent_term);

        let mut ctx_vals = None;
        if t.c_cs > 0.0 {
            let histories = gather_rows(&batch.histories, idx);
            let true_vel = gather_rows(&batch.true_vel, idx);
            let next_obs = gather_rows(&batch.next_obs, idx);
            let latent = self.model.context.latent_dim;
            let mut noise = Tensor::zeros(b, latent);
            for v in noise.data.iter_mut() {
                *v = standard_normal(&mut self.update_rng);
            }
            let parts = self.model.context.context_loss_tape(
                &mut tape,
                &histories,
                &true_vel,
                &next_obs,
                &noise,
            );
            let scaled = tape.scale(parts.total, t.c_cs);
            total = tape.add(total, scaled);
            ctx_vals = Some((parts.vel_mse, parts.rec_mse, parts.kl));
        }

        let mut ae_val = None;
        if t.c_ae > 0.0 {
            let ae = self.model.elevation.as_ref().expect("ae loss without autoencoder");
            let clean = gather_rows(&batch.clean_elev, idx);
            let l = ae.elevation_loss_tape(&mut tape, &clean);
            let scaled = tape.scale(l, t.c_ae);
            total = tape.add(total, scaled);
            ae_val = Some(l);
        }

        let mut swav_val = None;
        if let Some(head) = &self.model.contrastive {
            let z_elev = if self.model.contrastive_raw_elevation {
                gather_rows(&batch.noisy_elev, idx)
            } else {
                let ae = self.model.elevation.as_ref().expect("embedding without autoencoder");
                let mut z = Tensor::zeros(b, self.model.context_elev_dim());
                for (r, &k) in idx.iter().enumerate() {
                    let e = ae.encode(&self.model.store, batch.noisy_elev.row_slice(k));
                    z.data[r * e.len()..(r + 1) * e.len()].copy_from_slice(&e);
                }
                z
            };
            let l = head.swav_loss_tape(&mut tape, gate_w, &z_elev);
            let scaled = tape.scale(l, t.c_swav);
            total = tape.add(total, scaled);
            swav_val = Some(l);
        }

        let grads = tape.backward(total)?;
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }

        report.clip += tape.scalar_value(clip_loss);
        report.value += tape.scalar_value(value_loss);
        report.entropy += tape.scalar_value(entropy);
        if let Some((v, r2, k)) = ctx_vals {
            report.ctx_vel += tape.scalar_value(v);
            report.ctx_rec += tape.scalar_value(r2);
            report.ctx_kl += tape.scalar_value(k);
        }
        if let Some(v) = ae_val {
            report.ae += tape.scalar_value(v);
        }
        if let Some(v) = swav_val {
            report.swav += tape.scalar_value(v);
        }
        report.total += tape.scalar_value(total);
        if first {
            report.first_clip = tape.scalar_value(clip_loss);
            report.first_adv_mean = adv_mb.data.iter().sum::<f64>() / b as f64;
        }
        drop(tape);

        self.optim.step(&mut self.model.store, &grads);
        if let Some(head) = &self.model.contrastive {
            report.redrawn_prototypes +=
                head.normalize_prototypes(&mut self.model.store, &mut self.update_rng);
        }
        Ok(())
    }

    pub fn run_iteration(&mut self) -> Result<IterationStats> {
        let batch = self.collect()?;
        let n = batch.len() as f64;
        let reward_mean = batch.rewards.iter().sum::<f64>() / n;
        let mut term_means = [0.0; NUM_TERMS];
        for k in 0..NUM_TERMS {
            term_means[k] = batch.term_sums[k] / n;
        }
        let mut gate_entropy = 0.0;
        for r in 0..batch.len() {
            for &w in batch.gate_weights.row_slice(r) {
                if w > 0.0 {
                    gate_entropy -= w * w.ln();
                }
            }
        }
        gate_entropy /= n;
        let ep_return_sum = batch.episode_returns.iter().sum::<f64>();
        let ep_count = batch.episode_returns.len();
        let update = self.ppo_update(&batch)?;
        let level_mean =
            self.slots.iter().map(|s| s.level as f64).sum::<f64>() / self.slots.len() as f64;
        Ok(IterationStats {
            steps: batch.len(),
            reward_mean,
            ep_return_sum,
            ep_count,
            level_mean,
            gate_entropy,
            term_means,
            update,
        })
    }

    pub fn metrics_header() -> String {
        let mut h = String::from(
            "iteration,steps,reward_mean,ep_return_sum,ep_count,level_mean,gate_entropy,\
             loss_clip,loss_value,entropy,ctx_vel,ctx_rec,ctx_kl,loss_ae,loss_swav,redrawn,failed",
        );
        for name in TERM_NAMES {
            h.push_str(",r_");
            h.push_str(name);
        }
        h.push('\n');
        h
    }

    pub fn metrics_row(&self, stats: &IterationStats) -> String {
        let u = &stats.update;
        let mut row = format!(
            "{},{},{:?},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            self.iteration,
            stats.steps,
            stats.reward_mean,
            stats.ep_return_sum,
            stats.ep_count,
            stats.level_mean,
            stats.gate_entropy,
            u.clip,
            u.value,
            u.entropy,
            u.ctx_vel,
            u.ctx_rec,
            u.ctx_kl,
            u.ae,
            u.swav,
            u.redrawn_prototypes,
            u.failed as u8,
        );
        for k in 0..NUM_TERMS {
            row.push(',');
            row.push_str(&format!("{:?}", stats.term_means[k]));
        }
        row.push('\n');
        row
    }

    /// Full loop: iterate to `train.iterations`, append one metrics row per
    /// iteration, checkpoint periodically and at the end.
    pub fn train(&mut self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
        let metrics_path = out_dir.join("metrics.csv");
        let mut csv = Self::metrics_header();
        while self.iteration < self.cfg.train.iterations {
            let stats = self.run_iteration()?;
            csv.push_str(&self.metrics_row(&stats));
            self.iteration += 1;
            if self.cfg.train.checkpoint_every > 0
                && self.iteration % self.cfg.train.checkpoint_every == 0
            {
                self.save_checkpoint(&out_dir.join(format!("ckpt_{:06}.bin", self.iteration)))?;
            }
            std::fs::write(&metrics_path, &csv).map_err(|e| io_err(&metrics_path, e))?;
        }
        std::fs::write(&metrics_path, &csv).map_err(|e| io_err(&metrics_path, e))?;
        self.save_checkpoint(&out_dir.join("final.bin"))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = self
            .model
            .store
            .iter()
            .map(|(name, t)| (name.to_string(), t.clone()))
            .collect();
        entries.extend(self.optim.state_entries(&self.model.store));
        entries.push((
            "trainer.iteration".into(),
            Tensor::scalar(self.iteration as f64),
        ));
        entries.push((
            "trainer.config_hash".into(),
            Tensor::scalar(f64::from_bits(self.cfg.hash())),
        ));
        let words = rng::state_words(&self.update_rng);
        entries.push((
            "trainer.rng".into(),
            Tensor::from_vec(1, words.len(), words),
        ));
        entries.push((
            "trainer.levels".into(),
            Tensor::from_vec(
                1,
                self.slots.len(),
                self.slots.iter().map(|s| s.level as f64).collect(),
            ),
        ));
        entries.push((
            "trainer.best_levels".into(),
            Tensor::from_vec(
                1,
                NUM_CLASSES,
                self.best_level.iter().map(|&l| l as f64).collect(),
            ),
        ));
        checkpoint::save(path, &entries)
    }

    /// Restores parameters, optimizer moments, curriculum levels, and the
    /// update stream. Environments restart fresh episodes at the restored
    /// levels. A checkpoint whose parameter set disagrees with the current
    /// config (expert count, widths, dimensions) is rejected.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::load(path)?;
        apply_model_params(&mut self.model.store, &entries)?;
        self.optim.restore_state(&self.model.store, &entries);
        for (name, t) in &entries {
            match name.as_str() {
                "trainer.iteration" => self.iteration = t.data[0] as usize,
                "trainer.rng" => self.update_rng = rng::from_state_words(&t.data),
                "trainer.levels" => {
                    if t.data.len() != self.slots.len() {
                        return Err(Error::Checkpoint(format!(
                            "checkpoint has {} env levels, config asks for {}",
                            t.data.len(),
                            self.slots.len()
                        )));
                    }
                    for (slot, &l) in self.slots.iter_mut().zip(&t.data) {
                        slot.level = l as usize;
                    }
                }
                "trainer.best_levels" => {
                    for (b, &l) in self.best_level.iter_mut().zip(&t.data) {
                        *b = l as usize;
                    }
                }
                _ => {}
            }
        }
        // Fresh episodes at the restored levels.
        for slot in &mut self.slots {
            slot.reset(&self.cfg)?;
        }
        Ok(())
    }

    pub fn level_mean(&self) -> f64 {
        self.slots.iter().map(|s| s.level as f64).sum::<f64>() / self.slots.len() as f64
    }
}

impl Model {
    fn context_elev_dim(&self) -> usize {
        self.elevation
            .as_ref()
            .map(|ae| ae.latent_dim)
            .unwrap_or(ELEVATION_DIM)
    }

    /// Builds the model for `cfg` and overwrites every parameter from the
    /// checkpoint. Evaluation entry point; optimizer and curriculum entries
    /// in the file are ignored.
    pub fn load(cfg: &RunConfig, path: &Path) -> Result<Model> {
        cfg.validate()?;
        let mut init_rng = rng::stream(cfg.train.seed, rng::STREAM_INIT);
        let mut model = Model::new(cfg, &mut init_rng);
        let entries = checkpoint::load(path)?;
        apply_model_params(&mut model.store, &entries)?;
        Ok(model)
    }
}

/// Strict both ways: every non-optimizer checkpoint entry must name a model
/// parameter of the same shape, and every model parameter must be covered.
pub fn apply_model_params(store: &mut ParamStore, entries: &[(String, Tensor)]) -> Result<()> {
    let mut seen = 0usize;
    for (name, t) in entries {
        if name.starts_with("optim.") || name.starts_with("trainer.") {
            continue;
        }
        let id = store.by_name(name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint param {name:?} not in this model"))
        })?;
        let dst = store.get_mut(id);
        if dst.rows != t.rows || dst.cols != t.cols {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name:?}: checkpoint {}x{}, model {}x{}",
                t.rows, t.cols, dst.rows, dst.cols
            )));
        }
        *dst = t.clone();
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint covers {seen} of {} model params",
            store.len()
        )));
    }
    Ok(())
}

/// Overwritten by the first reset; only the buffer shapes matter.
fn empty_obs(cfg: &RunConfig) -> EnvObs {
    EnvObs {
        proprio: [0.0; PROPRIO_DIM],
        history: vec![0.0; cfg.env.history_len * PROPRIO_DIM],
        elevation_clean: vec![0.0; ELEVATION_DIM],
        elevation_noisy: vec![0.0; ELEVATION_DIM],
        true_vel: [0.0; 2],
        terrain_one_hot: [0.0; NUM_CLASSES],
    }
}

fn gather_rows(src: &Tensor, idx: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(idx.len(), src.cols);
    for (r, &k) in idx.iter().enumerate() {
        out.data[r * src.cols..(r + 1) * src.cols].copy_from_slice(src.row_slice(k));
    }
    out
}
