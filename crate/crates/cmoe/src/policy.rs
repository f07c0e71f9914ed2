//! Mixture-of-experts actor-critic.
//!
//! N expert actors and N expert critics share one gating network; the action
//! mean is the softmax-weighted sum of the expert means, and the value is the
//! same weighting applied to the per-expert values. Experts can be masked out
//! for ablation studies without renormalizing the remaining weights.

use crate::nn::mlp::{Activation, Mlp};
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{softmax, Tensor};
use crate::{Error, Result};
use rand::Rng;

pub const ACTION_DIM: usize = 4;
/// v_est(2) + z_ctx(16) + z_elev(16) + proprio(17) + elevation(45).
pub const INPUT_DIM: usize = 96;
/// true velocity(2) + terrain one-hot(9) appended for the critics.
pub const PRIVILEGED_EXTRA: usize = 11;

#[derive(Clone, Debug)]
pub struct PolicyConfig {
    pub num_experts: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub input_dim: usize,
    pub privileged_extra: usize,
    pub action_dim: usize,
    pub init_log_std: f64,
    /// Permits a degenerate one-expert build (the gate then always outputs
    /// weight 1.0, leaving a plain actor-critic). Only the no-mixture
    /// baseline sets this; it is not reachable from a config file.
    pub allow_single: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            num_experts: 5,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            gate_hidden: vec![32],
            input_dim: INPUT_DIM,
            privileged_extra: PRIVILEGED_EXTRA,
            action_dim: ACTION_DIM,
            init_log_std: 0.6f64.ln(),
            allow_single: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts < 2 && !(self.num_experts == 1 && self.allow_single) {
            return Err(Error::Config(format!(
                "need at least 2 experts, got {}",
                self.num_experts
            )));
        }
        if self.input_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("zero policy dimension".into()));
        }
        Ok(())
    }

    pub fn privileged_dim(&self) -> usize {
        self.input_dim + self.privileged_extra
    }
}

/// One gate evaluation: raw logits, their softmax, and the ablation mask in
/// force when the fusion consumed it.
#[derive(Clone, Debug)]
pub struct GateOutput {
    pub logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
struct Expert {
    actor: Mlp,
    critic: Mlp,
}

#[derive(Clone, Debug)]
pub struct MoEPolicy {
    experts: Vec<Expert>,
    gate: Mlp,
    log_std: ParamId,
    /// Ablation mask; all-true in training, narrowed by `ablate_expert`.
    mask: Vec<bool>,
    pub cfg: PolicyConfig,
}

impl MoEPolicy {
    pub fn new(store: &mut ParamStore, cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        cfg.validate().expect("policy config");
        let mut experts = Vec::with_capacity(cfg.num_experts);
        for i in 0..cfg.num_experts {
            let mut actor_sizes = vec![cfg.input_dim];
            actor_sizes.extend_from_slice(&cfg.actor_hidden);
            actor_sizes.push(cfg.action_dim);
            let actor = Mlp::new(
                store,
                &format!("expert{i}.actor"),
                &actor_sizes,
                Activation::Elu,
                Activation::Identity,
                rng,
            );
            let mut critic_sizes = vec![cfg.privileged_dim()];
            critic_sizes.extend_from_slice(&cfg.critic_hidden);
            critic_sizes.push(1);
            let critic = Mlp::new(
                store,
                &format!("expert{i}.critic"),
                &critic_sizes,
                Activation::Elu,
                Activation::Identity,
                rng,
            );
            experts.push(Expert { actor, critic });
        }
        let mut gate_sizes = vec![cfg.input_dim];
        gate_sizes.extend_from_slice(&cfg.gate_hidden);
        gate_sizes.push(cfg.num_experts);
        let gate = Mlp::new(
            store,
            "gate",
            &gate_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        let log_std = store.register(
            "log_std",
            Tensor::from_vec(1, cfg.action_dim, vec![cfg.init_log_std; cfg.action_dim]),
        );
        MoEPolicy {
            experts,
            gate,
            log_std,
            mask: vec![true; cfg.num_experts],
            cfg: cfg.clone(),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn log_std(&self, store: &ParamStore) -> Vec<f64> {
        store.get(self.log_std).data.clone()
    }

    pub fn log_std_id(&self) -> ParamId {
        self.log_std
    }

    /// Everything the optimizer updates: experts, gate, log-std.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.experts {
            ids.extend(e.actor.param_ids());
            ids.extend(e.critic.param_ids());
        }
        ids.extend(self.gate.param_ids());
        ids.push(self.log_std);
        ids
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        self.param_ids().iter().map(|&id| store.get(id).len()).sum()
    }

    /// A view of the same parameters with expert `k` removed from the fusion.
    /// Remaining weights are deliberately not renormalized, so the other
    /// experts' contributions are unchanged.
    pub fn ablate_expert(&self, k: usize) -> Result<MoEPolicy> {
        if k >= self.num_experts() {
            return Err(Error::Contract(format!(
                "expert index {k} out of range for {} experts",
                self.num_experts()
            )));
        }
        let mut view = self.clone();
        view.mask[k] = false;
        if view.mask.iter().all(|&m| !m) {
            return Err(Error::Contract("all experts masked".into()));
        }
        Ok(view)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn gate_forward(&self, store: &ParamStore, input: &[f64]) -> GateOutput {
        assert_eq!(input.len(), self.cfg.input_dim, "policy input length");
        let logits = self.gate.forward_one(store, input);
        let weights = softmax(&logits);
        GateOutput {
            logits,
            weights,
            mask: self.mask.clone(),
        }
    }

    /// Action mean under the current mask: sum of w_i * mu_i over unmasked
    /// experts. The gate softmax always covers every expert.
    pub fn moe_action(&self, store: &ParamStore, input: &[f64]) -> (Vec<f64>, Vec<f64>, GateOutput) {
        let gate = self.gate_forward(store, input);
        let mut mu = vec![0.0; self.cfg.action_dim];
        for (i, expert) in self.experts.iter().enumerate() {
            if !self.mask[i] {
                continue;
            }
            let ei = expert.actor.forward_one(store, input);
            for (m, v) in mu.iter_mut().zip(&ei) {
                *m += gate.weights[i] * v;
            }
        }
        (mu, self.log_std(store), gate)
    }

    /// Raw per-expert actor outputs before fusion, mask ignored. Analysis
    /// only; the fusion paths never call this.
    pub fn expert_actions(&self, store: &ParamStore, input: &[f64]) -> Vec<Vec<f64>> {
        self.experts
            .iter()
            .map(|e| e.actor.forward_one(store, input))
            .collect()
    }

    /// Fused value from the privileged input. The gate sees only the shared
    /// (non-privileged) prefix, so actor and critic fusion weights agree
    /// exactly for the same state.
    pub fn moe_value(&self, store: &ParamStore, privileged: &[f64]) -> (f64, GateOutput) {
        assert_eq!(
            privileged.len(),
            self.cfg.privileged_dim(),
            "privileged input length"
        );
        let gate = self.gate_forward(store, &privileged[..self.cfg.input_dim]);
        let mut v = 0.0;
        for (i, expert) in self.experts.iter().enumerate() {
            if !self.mask[i] {
                continue;
            }
            v += gate.weights[i] * expert.critic.forward_one(store, privileged)[0];
        }
        (v, gate)
    }

    /// Training-path actor: returns (mu, gate weights, gate logits), each a
    /// tape node over the `(batch, input_dim)` constant input.
    pub fn actor_tape(&self, tape: &mut Tape, inputs: &Tensor) -> (Var, Var, Var) {
        assert_eq!(inputs.cols, self.cfg.input_dim, "policy input length");
        let x = tape.constant(inputs.clone());
        let logits = self.gate.forward_tape(tape, x);
        let weights = tape.softmax_rows(logits);
        let mut mu: Option<Var> = None;
        for (i, expert) in self.experts.iter().enumerate() {
            if !self.mask[i] {
                continue;
            }
            let ei = expert.actor.forward_tape(tape, x);
            let wi = tape.col(weights, i);
            let term = tape.mul_col(ei, wi);
            mu = Some(match mu {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        (mu.expect("at least one unmasked expert"), weights, logits)
    }

    /// Training-path critics: fused value `(batch, 1)` plus each expert's
    /// `(batch, 1)` values and the detached gate weights. Fusion weights are
    /// detached so the value regression trains the critics, not the gate.
    pub fn critic_tape(
        &self,
        tape: &mut Tape,
        inputs: &Tensor,
        privileged: &Tensor,
    ) -> (Var, Vec<Var>, Var) {
        assert_eq!(
            privileged.cols,
            self.cfg.privileged_dim(),
            "privileged input length"
        );
        assert_eq!(inputs.rows, privileged.rows, "batch size mismatch");
        let x = tape.constant(inputs.clone());
        let p = tape.constant(privileged.clone());
        let logits = self.gate.forward_tape(tape, x);
        let weights = tape.softmax_rows(logits);
        let w = tape.detach(weights);
        let mut fused: Option<Var> = None;
        let mut per_expert = Vec::with_capacity(self.num_experts());
        for (i, expert) in self.experts.iter().enumerate() {
            let vi = expert.critic.forward_tape(tape, p);
            per_expert.push(vi);
            if !self.mask[i] {
                continue;
            }
            let wi = tape.col(w, i);
            let term = tape.mul(vi, wi);
            fused = Some(match fused {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        (fused.expect("at least one unmasked expert"), per_expert, w)
    }

    /// Diagonal-Gaussian log-density of `actions` under means `mu` and the
    /// learned state-independent log-std; `(batch, 1)` per-sample values.
    pub fn log_prob_tape(&self, tape: &mut Tape, mu: Var, actions: &Tensor) -> Var {
        let n = self.cfg.action_dim;
        let a = tape.constant(actions.clone());
        let d = tape.sub(a, mu);
        let sq = tape.square(d);
        let ls = tape.param(self.log_std);
        let neg2 = tape.scale(ls, -2.0);
        let inv_var = tape.exp(neg2);
        let rows = tape.value(mu).rows;
        let inv_var_b = tape.broadcast_row(inv_var, rows);
        let quad = tape.mul(sq, inv_var_b);
        let quad_sum = tape.sum_rows(quad);
        let ls_sum = tape.sum_all(ls);
        let ls_b = tape.broadcast_row(ls_sum, rows);
        let half_quad = tape.scale(quad_sum, -0.5);
        let t = tape.sub(half_quad, ls_b);
        let norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        tape.add_scalar(t, norm)
    }

    /// Gaussian entropy: sum(log_std) + n/2 * (1 + ln 2pi); state-independent.
    pub fn entropy_tape(&self, tape: &mut Tape) -> Var {
        let ls = tape.param(self.log_std);
        let s = tape.sum_all(ls);
        let n = self.cfg.action_dim as f64;
        tape.add_scalar(s, 0.5 * n * (1.0 + (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Scalar log-density used on the collection path.
pub fn action_log_prob(mu: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    assert_eq!(mu.len(), log_std.len(), "log_std shape");
    assert_eq!(mu.len(), action.len(), "action shape");
    let mut lp = -0.5 * mu.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    for ((m, ls), a) in mu.iter().zip(log_std).zip(action) {
        let z = (a - m) * (-ls).exp();
        lp -= 0.5 * z * z + ls;
    }
    lp
}

/// Per-dimension running mean/variance used to whiten policy inputs.
/// Statistics update only during collection; normalized values are clipped
/// to +-10 so early outliers cannot blow up the first updates.
#[derive(Clone, Debug)]
pub struct RunningNorm {
    mean: ParamId,
    m2: ParamId,
    count: ParamId,
    pub dim: usize,
}

pub const NORM_CLIP: f64 = 10.0;

impl RunningNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let mean = store.register(&format!("{name}.mean"), Tensor::zeros(1, dim));
        let m2 = store.register(&format!("{name}.m2"), Tensor::zeros(1, dim));
        let count = store.register(&format!("{name}.count"), Tensor::zeros(1, 1));
        RunningNorm {
            mean,
            m2,
            count,
            dim,
        }
    }

    /// Welford update over one sample.
    pub fn update(&self, store: &mut ParamStore, x: &[f64]) {
        assert_eq!(x.len(), self.dim, "normalizer input length");
        let n = {
            let c = store.get_mut(self.count);
            c.data[0] += 1.0;
            c.data[0]
        };
        for (j, &v) in x.iter().enumerate() {
            let delta = v - store.get(self.mean).data[j];
            store.get_mut(self.mean).data[j] += delta / n;
            let delta2 = v - store.get(self.mean).data[j];
            store.get_mut(self.m2).data[j] += delta * delta2;
        }
    }

    pub fn normalize(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "normalizer input length");
        let n = store.get(self.count).data[0];
        let mean = &store.get(self.mean).data;
        let m2 = &store.get(self.m2).data;
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let var = if n > 1.0 { m2[j] / n } else { 1.0 };
                ((v - mean[j]) / (var + 1e-8).sqrt()).clamp(-NORM_CLIP, NORM_CLIP)
            })
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.mean, self.m2, self.count]
    }
}
