//! Terrain contrastive learning over gate routing and terrain features.
//!
//! Two projection heads map the gate's routing weights and the elevation
//! embedding into one d-dimensional space shared with K unit-norm prototype
//! vectors. Per-sample prototype assignment probabilities come from a
//! temperature softmax over dot products; balanced targets come from a few
//! Sinkhorn-Knopp rounds; the loss swaps them so each side predicts the
//! other's assignment. Targets carry no gradient.

use crate::nn::mlp::{Activation, Mlp};
use crate::nn::store::{ParamId, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{softmax, Tensor};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub struct ContrastiveConfig {
    /// Shared projection dimension d.
    pub dim: usize,
    /// Prototype count K.
    pub num_prototypes: usize,
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_eps: f64,
    pub gate_proj_hidden: Vec<usize>,
    pub elev_proj_hidden: Vec<usize>,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            dim: 32,
            num_prototypes: 32,
            temperature: 0.2,
            sinkhorn_iters: 3,
            sinkhorn_eps: 0.05,
            gate_proj_hidden: vec![32],
            elev_proj_hidden: vec![32],
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.num_prototypes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 prototypes, got {}",
                self.num_prototypes
            )));
        }
        if self.sinkhorn_eps <= 0.0 {
            return Err(Error::Config("sinkhorn epsilon must be > 0".into()));
        }
        Ok(())
    }
}

pub struct ContrastiveHead {
    gate_proj: Mlp,
    elev_proj: Mlp,
    prototypes: ParamId,
    pub cfg: ContrastiveConfig,
}

impl ContrastiveHead {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ContrastiveConfig,
        gate_dim: usize,
        elev_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        cfg.validate().expect("contrastive config");
        let mut gate_sizes = vec![gate_dim];
        gate_sizes.extend_from_slice(&cfg.gate_proj_hidden);
        gate_sizes.push(cfg.dim);
        let gate_proj = Mlp::new(
            store,
            "ctr.gate_proj",
            &gate_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        let mut elev_sizes = vec![elev_dim];
        elev_sizes.extend_from_slice(&cfg.elev_proj_hidden);
        elev_sizes.push(cfg.dim);
        let elev_proj = Mlp::new(
            store,
            "ctr.elev_proj",
            &elev_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        let mut proto = Tensor::zeros(cfg.num_prototypes, cfg.dim);
        for v in &mut proto.data {
            *v = StandardNormal.sample(rng);
        }
        let prototypes = store.register("ctr.prototypes", proto);
        let head = ContrastiveHead {
            gate_proj,
            elev_proj,
            prototypes,
            cfg: cfg.clone(),
        };
        head.normalize_prototypes(store, rng);
        head
    }

    pub fn prototypes_id(&self) -> ParamId {
        self.prototypes
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.gate_proj.param_ids();
        ids.extend(self.elev_proj.param_ids());
        ids.push(self.prototypes);
        ids
    }

    /// Rescales every prototype row to unit norm; a row that collapsed to
    /// zero is redrawn from a unit Gaussian first. Returns how many rows were
    /// redrawn so the trainer can log it.
    pub fn normalize_prototypes(&self, store: &mut ParamStore, rng: &mut impl Rng) -> usize {
        let t = store.get_mut(self.prototypes);
        let mut redrawn = 0;
        for r in 0..t.rows {
            let row = &mut t.data[r * t.cols..(r + 1) * t.cols];
            let mut norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                redrawn += 1;
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        redrawn
    }

    /// Projected, L2-normalized gate features on the tape; gradient reaches
    /// the gate network through `gate_weights`.
    pub fn project_gate_tape(&self, tape: &mut Tape, gate_weights: Var) -> Var {
        let h = self.gate_proj.forward_tape(tape, gate_weights);
        tape.l2_normalize_rows(h)
    }

    /// Projected, L2-normalized elevation features; the embedding enters as a
    /// constant, so only the projector and prototypes learn from this side.
    pub fn project_elev_tape(&self, tape: &mut Tape, z_elev: &Tensor) -> Var {
        let z = tape.constant(z_elev.clone());
        let h = self.elev_proj.forward_tape(tape, z);
        tape.l2_normalize_rows(h)
    }

    /// Swapped-prediction loss with precomputed targets. `q_gate` supervises
    /// the elevation side and `q_elev` the gate side.
    pub fn swav_loss_with_targets_tape(
        &self,
        tape: &mut Tape,
        gate_weights: Var,
        z_elev: &Tensor,
        q_gate: &Tensor,
        q_elev: &Tensor,
    ) -> Var {
        let zg = self.project_gate_tape(tape, gate_weights);
        let ze = self.project_elev_tape(tape, z_elev);
        let protos = tape.param(self.prototypes);
        let sg = tape.matmul_nt(zg, protos);
        let se = tape.matmul_nt(ze, protos);
        let pg = self.probs_tape(tape, sg);
        let pe = self.probs_tape(tape, se);
        let b = z_elev.rows as f64;
        let lg = self.floored_log(tape, pe);
        let le = self.floored_log(tape, pg);
        let qg = tape.constant(q_gate.clone());
        let qe = tape.constant(q_elev.clone());
        let m1 = tape.mul(qg, lg);
        let m2 = tape.mul(qe, le);
        let s1 = tape.sum_all(m1);
        let s2 = tape.sum_all(m2);
        let s = tape.add(s1, s2);
        tape.scale(s, -0.5 / b)
    }

    /// Full loss: computes Sinkhorn targets from the current projections
    /// (detached), then the swapped cross-entropy.
    pub fn swav_loss_tape(&self, tape: &mut Tape, gate_weights: Var, z_elev: &Tensor) -> Var {
        let (q_gate, q_elev) = {
            let zg = self.project_gate_tape(tape, gate_weights);
            let ze = self.project_elev_tape(tape, z_elev);
            let protos = tape.param(self.prototypes);
            let sg = tape.matmul_nt(zg, protos);
            let se = tape.matmul_nt(ze, protos);
            let scale = 1.0 / self.cfg.sinkhorn_eps;
            (
                sinkhorn(&tape.value(sg).map(|v| v * scale), self.cfg.sinkhorn_iters),
                sinkhorn(&tape.value(se).map(|v| v * scale), self.cfg.sinkhorn_iters),
            )
        };
        self.swav_loss_with_targets_tape(tape, gate_weights, z_elev, &q_gate, &q_elev)
    }

    fn probs_tape(&self, tape: &mut Tape, dots: Var) -> Var {
        let scaled = tape.scale(dots, 1.0 / self.cfg.temperature);
        tape.softmax_rows(scaled)
    }

    fn floored_log(&self, tape: &mut Tape, p: Var) -> Var {
        // Probability floor keeps log finite; the ceiling is above 1 so a
        // saturated softmax still gets gradient.
        let c = tape.clamp(p, 1e-12, 2.0);
        tape.ln(c)
    }
}

/// Assignment probabilities for one feature vector: softmax over prototype
/// dot products at temperature tau. The input is L2-normalized first so the
/// result is invariant to its scale.
pub fn assign_probs(v: &[f64], prototypes: &Tensor, tau: f64) -> Vec<f64> {
    assert_eq!(v.len(), prototypes.cols, "feature dim");
    assert!(tau > 0.0, "temperature");
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let logits: Vec<f64> = (0..prototypes.rows)
        .map(|k| {
            let dot: f64 = prototypes
                .row_slice(k)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x / norm)
                .sum();
            dot / tau
        })
        .collect();
    softmax(&logits)
}

/// Sinkhorn-Knopp balancing of exp(scores): alternating column/row rescaling
/// toward column sums B/K and row sums 1, returned row-normalized. Used for
/// assignment targets, so the result is a plain tensor with no gradient.
pub fn sinkhorn(scores: &Tensor, iters: usize) -> Tensor {
    let (b, k) = (scores.rows, scores.cols);
    if b < k {
        eprintln!("sinkhorn: batch {b} smaller than prototype count {k}; targets will be noisy");
    }
    let mut q = Tensor::zeros(b, k);
    for r in 0..b {
        let row = scores.row_slice(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (c, &s) in row.iter().enumerate() {
            q.set(r, c, (s - max).exp());
        }
    }
    let target_col = b as f64 / k as f64;
    for _ in 0..iters {
        for c in 0..k {
            let sum: f64 = (0..b).map(|r| q.at(r, c)).sum();
            if sum > 0.0 {
                let f = target_col / sum;
                for r in 0..b {
                    q.set(r, c, q.at(r, c) * f);
                }
            }
        }
        for r in 0..b {
            let sum: f64 = q.row_slice(r).iter().sum();
            if sum > 0.0 {
                for c in 0..k {
                    q.set(r, c, q.at(r, c) / sum);
                }
            }
        }
    }
    q
}

/// Plain swapped cross-entropy over explicit probability matrices, mostly for
/// tests and diagnostics: -(1/2B) sum(q_gate log p_elev + q_elev log p_gate).
pub fn swav_cross_entropy(q_gate: &Tensor, q_elev: &Tensor, p_gate: &Tensor, p_elev: &Tensor) -> f64 {
    assert!(q_gate.same_shape(q_elev) && q_gate.same_shape(p_gate) && q_gate.same_shape(p_elev));
    let b = q_gate.rows as f64;
    let mut acc = 0.0;
    for i in 0..q_gate.len() {
        acc += q_gate.data[i] * p_elev.data[i].max(1e-12).ln();
        acc += q_elev.data[i] * p_gate.data[i].max(1e-12).ln();
    }
    -acc / (2.0 * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                x
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    fn unit_rows(t: &Tensor) -> bool {
        (0..t.rows).all(|r| {
            let n: f64 = t.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            (n - 1.0).abs() < 1e-9
        })
    }

    #[test]
    fn normalization_follows_the_3_4_5_triangle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ContrastiveConfig {
            dim: 2,
            num_prototypes: 2,
            ..ContrastiveConfig::default()
        };
        let head = ContrastiveHead::new(&mut store, &cfg, 3, 4, &mut rng);
        store
            .get_mut(head.prototypes_id())
            .data
            .copy_from_slice(&[3.0, 4.0, 0.0, 1.0]);
        head.normalize_prototypes(&mut store, &mut rng);
        let t = store.get(head.prototypes_id());
        assert!((t.at(0, 0) - 0.6).abs() < 1e-15);
        assert!((t.at(0, 1) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        let before = store.get(head.prototypes_id()).data.clone();
        head.normalize_prototypes(&mut store, &mut rng);
        let after = &store.get(head.prototypes_id()).data;
        for (a, b) in before.iter().zip(after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_prototypes_all_have_unit_norm() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        for v in &mut store.get_mut(head.prototypes_id()).data {
            *v *= 7.3;
        }
        head.normalize_prototypes(&mut store, &mut rng);
        assert!(unit_rows(store.get(head.prototypes_id())));
    }

    #[test]
    fn zero_row_is_redrawn_to_unit_norm() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        let dim = head.cfg.dim;
        for v in &mut store.get_mut(head.prototypes_id()).data[3 * dim..4 * dim] {
            *v = 0.0;
        }
        let redrawn = head.normalize_prototypes(&mut store, &mut rng);
        assert_eq!(redrawn, 1);
        assert!(unit_rows(store.get(head.prototypes_id())));
    }

    #[test]
    fn huge_temperature_flattens_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut protos = randn_tensor(&mut rng, 8, 6);
        for r in 0..8 {
            let n: f64 = protos.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..6 {
                let v = protos.at(r, c) / n;
                protos.set(r, c, v);
            }
        }
        let v: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let p = assign_probs(&v, &protos, 1e6);
        for w in &p {
            assert!((w - 0.125).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn aligned_prototype_gets_the_closed_form_mass() {
        // Prototypes are unit basis vectors; v sits exactly on the first, so
        // the logits are [1/tau, 0, ...] and p0 = e^5 / (e^5 + K - 1).
        let k = 8;
        let mut protos = Tensor::zeros(k, k);
        for i in 0..k {
            protos.set(i, i, 1.0);
        }
        let mut v = vec![0.0; k];
        v[0] = 0.42; // any positive scale; normalization removes it
        let p = assign_probs(&v, &protos, 0.2);
        let e5 = 5.0f64.exp();
        let want = e5 / (e5 + (k - 1) as f64);
        assert!((p[0] - want).abs() < 1e-12, "{} vs {want}", p[0]);
    }

    #[test]
    fn assignment_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        let protos = store.get(head.prototypes_id()).clone();
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..32)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    x
                })
                .collect();
            let p = assign_probs(&v, &protos, 0.2);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn assignment_ignores_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        let protos = store.get(head.prototypes_id()).clone();
        let v: Vec<f64> = (0..32)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x
            })
            .collect();
        let scaled: Vec<f64> = v.iter().map(|x| 37.5 * x).collect();
        let p1 = assign_probs(&v, &protos, 0.2);
        let p2 = assign_probs(&scaled, &protos, 0.2);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_recovers_a_dominant_diagonal() {
        let mut scores = Tensor::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for v in &mut scores.data {
            let x: f64 = StandardNormal.sample(&mut rng);
            *v = 0.1 * x;
        }
        for i in 0..4 {
            scores.set(i, i, scores.at(i, i) + 10.0);
        }
        let q = sinkhorn(&scores, 3);
        for i in 0..4 {
            assert!(q.at(i, i) > 0.99, "row {i}: {:?}", q.row_slice(i));
        }
    }

    #[test]
    fn sinkhorn_of_equal_scores_is_uniform() {
        let scores = Tensor::from_vec(6, 3, vec![1.7; 18]);
        let q = sinkhorn(&scores, 3);
        for v in &q.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sinkhorn_marginals_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores = randn_tensor(&mut rng, 64, 32);
        for (iters, col_tol) in [(3, 1e-2), (50, 1e-6)] {
            let q = sinkhorn(&scores, iters);
            for r in 0..64 {
                let s: f64 = q.row_slice(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
            }
            for c in 0..32 {
                let s: f64 = (0..64).map(|r| q.at(r, c)).sum();
                assert!((s - 2.0).abs() < col_tol, "col sum {s} after {iters} iters");
            }
        }
    }

    #[test]
    fn perfect_one_hot_match_has_zero_loss() {
        let mut p = Tensor::zeros(3, 4);
        for r in 0..3 {
            p.set(r, r % 4, 1.0);
        }
        let loss = swav_cross_entropy(&p, &p, &p, &p);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_predictions_against_one_hot_targets_cost_log_k() {
        let k = 5;
        let mut q = Tensor::zeros(4, k);
        for r in 0..4 {
            q.set(r, r % k, 1.0);
        }
        let p = Tensor::from_vec(4, k, vec![1.0 / k as f64; 4 * k]);
        let loss = swav_cross_entropy(&q, &q, &p, &p);
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn swav_loss_is_nonnegative_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        for _ in 0..20 {
            let w = randn_tensor(&mut rng, 40, 5);
            let z = randn_tensor(&mut rng, 40, 16);
            let mut tape = Tape::new(&store);
            let wv = tape.constant(w);
            let loss = head.swav_loss_tape(&mut tape, wv, &z);
            assert!(tape.scalar_value(loss) >= 0.0);
        }
    }

    #[test]
    fn tape_loss_agrees_with_the_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let cfg = ContrastiveConfig {
            dim: 6,
            num_prototypes: 4,
            gate_proj_hidden: vec![8],
            elev_proj_hidden: vec![8],
            ..ContrastiveConfig::default()
        };
        let head = ContrastiveHead::new(&mut store, &cfg, 5, 7, &mut rng);
        let w = randn_tensor(&mut rng, 8, 5);
        let z = randn_tensor(&mut rng, 8, 7);
        let mut tape = Tape::new(&store);
        let wv = tape.constant(w.clone());
        let loss = head.swav_loss_tape(&mut tape, wv, &z);

        // Recompute every piece without the tape.
        let protos = store.get(head.prototypes_id()).clone();
        let project = |mlp: &Mlp, x: &Tensor| {
            let mut h = mlp.forward(&store, x);
            for r in 0..h.rows {
                let n: f64 = h.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for c in 0..h.cols {
                    let v = h.at(r, c) / n;
                    h.set(r, c, v);
                }
            }
            h
        };
        let zg = project(&head.gate_proj, &w);
        let ze = project(&head.elev_proj, &z);
        let dots = |f: &Tensor| {
            let mut d = Tensor::zeros(f.rows, protos.rows);
            for r in 0..f.rows {
                for k in 0..protos.rows {
                    let s: f64 = f.row_slice(r).iter().zip(protos.row_slice(k)).map(|(a, b)| a * b).sum();
                    d.set(r, k, s);
                }
            }
            d
        };
        let (sg, se) = (dots(&zg), dots(&ze));
        let soft = |d: &Tensor, t: f64| {
            let mut p = d.map(|v| v / t);
            crate::nn::tensor::softmax_rows_inplace(&mut p);
            p
        };
        let (pg, pe) = (soft(&sg, cfg.temperature), soft(&se, cfg.temperature));
        let qg = sinkhorn(&sg.map(|v| v / cfg.sinkhorn_eps), cfg.sinkhorn_iters);
        let qe = sinkhorn(&se.map(|v| v / cfg.sinkhorn_eps), cfg.sinkhorn_iters);
        let want = swav_cross_entropy(&qg, &qe, &pg, &pe);
        let got = tape.scalar_value(loss);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn swav_gradient_matches_finite_differences_with_frozen_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = ContrastiveConfig {
            dim: 5,
            num_prototypes: 3,
            gate_proj_hidden: vec![6],
            elev_proj_hidden: vec![6],
            ..ContrastiveConfig::default()
        };
        let head = ContrastiveHead::new(&mut store, &cfg, 4, 6, &mut rng);
        let w = randn_tensor(&mut rng, 4, 4);
        let z = randn_tensor(&mut rng, 4, 6);
        // Freeze targets once; the finite-difference sweep must not recompute
        // them as parameters move.
        let (qg, qe) = {
            let mut tape = Tape::new(&store);
            let wv = tape.constant(w.clone());
            let zg = head.project_gate_tape(&mut tape, wv);
            let ze = head.project_elev_tape(&mut tape, &z);
            let protos = tape.param(head.prototypes_id());
            let sg = tape.matmul_nt(zg, protos);
            let se = tape.matmul_nt(ze, protos);
            (
                sinkhorn(&tape.value(sg).map(|v| v / cfg.sinkhorn_eps), cfg.sinkhorn_iters),
                sinkhorn(&tape.value(se).map(|v| v / cfg.sinkhorn_eps), cfg.sinkhorn_iters),
            )
        };
        let mut tape = Tape::new(&store);
        let wv = tape.constant(w.clone());
        let loss = head.swav_loss_with_targets_tape(&mut tape, wv, &z, &qg, &qe);
        let grads = tape.backward(loss).unwrap();
        let ids = head.param_ids();
        let err = gradcheck::max_rel_err(&mut store, &ids, &grads, |s| {
            let mut t = Tape::new(s);
            let wv = t.constant(w.clone());
            let l = head.swav_loss_with_targets_tape(&mut t, wv, &z, &qg, &qe);
            t.scalar_value(l)
        });
        assert!(err < 1e-4, "swav fd mismatch {err}");
    }

    #[test]
    fn gradient_reaches_gate_weights_but_not_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let head = ContrastiveHead::new(&mut store, &ContrastiveConfig::default(), 5, 16, &mut rng);
        let w_param = store.register("w_in", randn_tensor(&mut rng, 8, 5));
        let z = randn_tensor(&mut rng, 8, 16);
        let mut tape = Tape::new(&store);
        let wv = tape.param(w_param);
        let loss = head.swav_loss_tape(&mut tape, wv, &z);
        let grads = tape.backward(loss).unwrap();
        let gw = grads.get(w_param).expect("gate side must carry gradient");
        assert!(gw.data.iter().any(|v| v.abs() > 0.0));
        let gp = grads.get(head.prototypes_id()).expect("prototypes learn");
        assert!(gp.data.iter().any(|v| v.abs() > 0.0));
    }
}
