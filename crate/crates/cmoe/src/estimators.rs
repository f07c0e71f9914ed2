//! Context-state distillation and terrain feature extraction.
//!
//! Two small models sit between raw observations and the policy: a beta-VAE
//! over the proprioception history that predicts body velocity and the next
//! observation, and a plain autoencoder that compresses the elevation map.
//! Both are trained jointly with the policy; the policy consumes the velocity
//! estimate and the latent means at inference time.

use crate::nn::mlp::{Activation, Mlp};
use crate::nn::store::ParamStore;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use rand::Rng;

pub const VEL_DIM: usize = 2;

#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub history_len: usize,
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub beta: f64,
    pub elevation_dim: usize,
    pub elevation_latent: usize,
    pub elevation_hidden: Vec<usize>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            history_len: 20,
            obs_dim: 17,
            latent_dim: 16,
            trunk_hidden: vec![64, 64],
            decoder_hidden: vec![64],
            beta: 0.2,
            elevation_dim: 45,
            elevation_latent: 16,
            elevation_hidden: vec![32],
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.beta < 0.0 {
            return Err(crate::Error::Config(format!(
                "estimator beta must be >= 0, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("history_len", self.history_len),
            ("obs_dim", self.obs_dim),
            ("latent_dim", self.latent_dim),
            ("elevation_dim", self.elevation_dim),
            ("elevation_latent", self.elevation_latent),
        ] {
            if v == 0 {
                return Err(crate::Error::Config(format!("estimator {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// z = mean + exp(logvar / 2) * noise, elementwise over a batch.  Gradient
/// flows to mean and logvar; the noise is a constant.
pub fn sample_latent_tape(tape: &mut Tape, mean: Var, logvar: Var, noise: &Tensor) -> Var {
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let n = tape.constant(noise.clone());
    let spread = tape.mul(std, n);
    tape.add(mean, spread)
}

/// Single-sample reparameterization without a tape.
pub fn sample_latent(mean: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    assert_eq!(mean.len(), logvar.len(), "latent shape");
    assert_eq!(mean.len(), noise.len(), "noise shape");
    mean.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (lv / 2.0).exp() * n)
        .collect()
}

/// KL(N(mean, diag exp(logvar)) || N(0, I)) for one sample, in closed form.
pub fn kl_to_standard_normal(mean: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mean.len(), logvar.len(), "latent shape");
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Batch KL on the tape: mean over rows of the per-sample closed form.
fn kl_tape(tape: &mut Tape, mean: Var, logvar: Var) -> Var {
    let rows = tape.value(mean).rows;
    let ev = tape.exp(logvar);
    let m2 = tape.square(mean);
    let s = tape.add(ev, m2);
    let s = tape.sub(s, logvar);
    let s = tape.add_scalar(s, -1.0);
    let total = tape.sum_all(s);
    tape.scale(total, 0.5 / rows as f64)
}

/// Mean squared error against a constant target, averaged over every element.
fn mse_tape(tape: &mut Tape, pred: Var, target: &Tensor) -> Var {
    let t = tape.constant(target.clone());
    let d = tape.sub(pred, t);
    let sq = tape.square(d);
    tape.mean_all(sq)
}

/// Velocity estimate and latent posterior read off the trunk.
#[derive(Clone, Debug)]
pub struct ContextEncoding {
    pub vel: Vec<f64>,
    pub z_mean: Vec<f64>,
    pub z_logvar: Vec<f64>,
}

/// The three summands of the distillation loss, kept separate for logging.
pub struct ContextLossParts {
    pub total: Var,
    pub vel_mse: Var,
    pub rec_mse: Var,
    pub kl: Var,
}

/// Beta-VAE over the proprioception history.  A shared trunk feeds three
/// linear heads (velocity, latent mean, latent log-variance); the decoder
/// reconstructs the *next* observation from a latent sample.
#[derive(Clone, Debug)]
pub struct ContextEstimator {
    trunk: Mlp,
    vel_head: Mlp,
    mean_head: Mlp,
    logvar_head: Mlp,
    decoder: Mlp,
    pub beta: f64,
    pub history_len: usize,
    pub obs_dim: usize,
    pub latent_dim: usize,
}

impl ContextEstimator {
    pub fn new(store: &mut ParamStore, cfg: &EstimatorConfig, rng: &mut impl Rng) -> Self {
        let in_dim = cfg.history_len * cfg.obs_dim;
        let mut trunk_sizes = vec![in_dim];
        trunk_sizes.extend_from_slice(&cfg.trunk_hidden);
        // Trunk output stays nonlinear so each head is a distinct linear
        // readout of the same feature layer.
        let trunk = Mlp::new(
            store,
            "ctx.trunk",
            &trunk_sizes,
            Activation::Elu,
            Activation::Elu,
            rng,
        );
        let feat = *trunk_sizes.last().unwrap();
        fn head(
            store: &mut ParamStore,
            name: &str,
            feat: usize,
            out: usize,
            rng: &mut impl Rng,
        ) -> Mlp {
            Mlp::new(
                store,
                name,
                &[feat, out],
                Activation::Identity,
                Activation::Identity,
                rng,
            )
        }
        let vel_head = head(store, "ctx.vel", feat, VEL_DIM, rng);
        let mean_head = head(store, "ctx.mean", feat, cfg.latent_dim, rng);
        let logvar_head = head(store, "ctx.logvar", feat, cfg.latent_dim, rng);
        let mut dec_sizes = vec![cfg.latent_dim];
        dec_sizes.extend_from_slice(&cfg.decoder_hidden);
        dec_sizes.push(cfg.obs_dim);
        let decoder = Mlp::new(
            store,
            "ctx.dec",
            &dec_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        ContextEstimator {
            trunk,
            vel_head,
            mean_head,
            logvar_head,
            decoder,
            beta: cfg.beta,
            history_len: cfg.history_len,
            obs_dim: cfg.obs_dim,
            latent_dim: cfg.latent_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.history_len * self.obs_dim
    }

    /// Inference path for one environment.
    pub fn encode_history(&self, store: &ParamStore, history: &[f64]) -> ContextEncoding {
        assert_eq!(history.len(), self.input_dim(), "history length");
        let feat = self.trunk.forward_one(store, history);
        ContextEncoding {
            vel: self.vel_head.forward_one(store, &feat),
            z_mean: self.mean_head.forward_one(store, &feat),
            z_logvar: self.logvar_head.forward_one(store, &feat),
        }
    }

    /// Training path: histories is `(batch, history_len * obs_dim)`.
    pub fn encode_tape(&self, tape: &mut Tape, histories: Var) -> (Var, Var, Var) {
        let feat = self.trunk.forward_tape(tape, histories);
        (
            self.vel_head.forward_tape(tape, feat),
            self.mean_head.forward_tape(tape, feat),
            self.logvar_head.forward_tape(tape, feat),
        )
    }

    pub fn decode_tape(&self, tape: &mut Tape, z: Var) -> Var {
        self.decoder.forward_tape(tape, z)
    }

    /// MSE(vel) + MSE(next obs) + beta * KL, each averaged over the batch.
    /// `noise` is the reparameterization draw, `(batch, latent_dim)` standard
    /// normal, supplied by the caller so training stays deterministic.
    pub fn context_loss_tape(
        &self,
        tape: &mut Tape,
        histories: &Tensor,
        true_vel: &Tensor,
        next_obs: &Tensor,
        noise: &Tensor,
    ) -> ContextLossParts {
        assert_eq!(histories.cols, self.input_dim(), "history length");
        assert_eq!(true_vel.cols, VEL_DIM, "velocity target");
        assert_eq!(next_obs.cols, self.obs_dim, "next-obs target");
        assert_eq!(noise.rows, histories.rows, "noise batch");
        assert_eq!(noise.cols, self.latent_dim, "noise dim");
        let h = tape.constant(histories.clone());
        let (vel, mean, logvar) = self.encode_tape(tape, h);
        let z = sample_latent_tape(tape, mean, logvar, noise);
        let rec = self.decode_tape(tape, z);
        let vel_mse = mse_tape(tape, vel, true_vel);
        let rec_mse = mse_tape(tape, rec, next_obs);
        let kl = kl_tape(tape, mean, logvar);
        let scaled_kl = tape.scale(kl, self.beta);
        let s = tape.add(vel_mse, rec_mse);
        let total = tape.add(s, scaled_kl);
        ContextLossParts {
            total,
            vel_mse,
            rec_mse,
            kl,
        }
    }

    /// Scalar convenience for tests and diagnostics.
    pub fn context_loss(
        &self,
        store: &ParamStore,
        histories: &Tensor,
        true_vel: &Tensor,
        next_obs: &Tensor,
        noise: &Tensor,
    ) -> f64 {
        let mut tape = Tape::new(store);
        let parts = self.context_loss_tape(&mut tape, histories, true_vel, next_obs, noise);
        tape.scalar_value(parts.total)
    }

    pub fn param_ids(&self) -> Vec<crate::nn::store::ParamId> {
        let mut ids = self.trunk.param_ids();
        ids.extend(self.vel_head.param_ids());
        ids.extend(self.mean_head.param_ids());
        ids.extend(self.logvar_head.param_ids());
        ids.extend(self.decoder.param_ids());
        ids
    }
}

/// Elevation-map autoencoder; the bottleneck is the policy's terrain code.
#[derive(Clone, Debug)]
pub struct ElevationAutoencoder {
    encoder: Mlp,
    decoder: Mlp,
    pub map_dim: usize,
    pub latent_dim: usize,
}

impl ElevationAutoencoder {
    pub fn new(store: &mut ParamStore, cfg: &EstimatorConfig, rng: &mut impl Rng) -> Self {
        let mut enc_sizes = vec![cfg.elevation_dim];
        enc_sizes.extend_from_slice(&cfg.elevation_hidden);
        enc_sizes.push(cfg.elevation_latent);
        let mut dec_sizes = vec![cfg.elevation_latent];
        dec_sizes.extend(cfg.elevation_hidden.iter().rev());
        dec_sizes.push(cfg.elevation_dim);
        let encoder = Mlp::new(
            store,
            "elev.enc",
            &enc_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        let decoder = Mlp::new(
            store,
            "elev.dec",
            &dec_sizes,
            Activation::Elu,
            Activation::Identity,
            rng,
        );
        ElevationAutoencoder {
            encoder,
            decoder,
            map_dim: cfg.elevation_dim,
            latent_dim: cfg.elevation_latent,
        }
    }

    pub fn encode(&self, store: &ParamStore, map: &[f64]) -> Vec<f64> {
        assert_eq!(map.len(), self.map_dim, "elevation map length");
        self.encoder.forward_one(store, map)
    }

    pub fn reconstruct(&self, store: &ParamStore, map: &[f64]) -> Vec<f64> {
        self.decoder.forward_one(store, &self.encode(store, map))
    }

    /// Mean squared reconstruction error over a batch of maps.
    pub fn elevation_loss_tape(&self, tape: &mut Tape, maps: &Tensor) -> Var {
        assert_eq!(maps.cols, self.map_dim, "elevation map length");
        let x = tape.constant(maps.clone());
        let z = self.encoder.forward_tape(tape, x);
        let rec = self.decoder.forward_tape(tape, z);
        mse_tape(tape, rec, maps)
    }

    pub fn elevation_loss(&self, store: &ParamStore, maps: &Tensor) -> f64 {
        let mut tape = Tape::new(store);
        let loss = self.elevation_loss_tape(&mut tape, maps);
        tape.scalar_value(loss)
    }

    pub fn param_ids(&self) -> Vec<crate::nn::store::ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.decoder.param_ids());
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::nn::optim::Adam;
    use crate::nn::store::Grads;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn small_cfg() -> EstimatorConfig {
        EstimatorConfig {
            trunk_hidden: vec![24],
            decoder_hidden: vec![16],
            elevation_hidden: vec![24],
            ..EstimatorConfig::default()
        }
    }

    fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                x * scale
            })
            .collect();
        Tensor::from_vec(rows, cols, data)
    }

    fn zero_params(store: &mut ParamStore, ids: &[crate::nn::store::ParamId]) {
        for &id in ids {
            for v in &mut store.get_mut(id).data {
                *v = 0.0;
            }
        }
    }

    #[test]
    fn zero_weight_network_outputs_head_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let est = ContextEstimator::new(&mut store, &small_cfg(), &mut rng);
        zero_params(&mut store, &est.param_ids());
        let vb = store.by_name("ctx.vel.l0.b").unwrap();
        let mb = store.by_name("ctx.mean.l0.b").unwrap();
        store.get_mut(vb).data.copy_from_slice(&[0.3, -0.7]);
        store.get_mut(mb).data[5] = 1.25;
        let enc = est.encode_history(&store, &vec![0.4; est.input_dim()]);
        assert_eq!(enc.vel, vec![0.3, -0.7]);
        assert_eq!(enc.z_mean[5], 1.25);
        assert!(enc.z_mean.iter().enumerate().all(|(i, &v)| i == 5 || v == 0.0));
        assert!(enc.z_logvar.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let est = ContextEstimator::new(&mut store, &small_cfg(), &mut rng);
        let hist: Vec<f64> = (0..est.input_dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = est.encode_history(&store, &hist);
        let b = est.encode_history(&store, &hist);
        assert_eq!(a.vel, b.vel);
        assert_eq!(a.z_mean, b.z_mean);
        assert_eq!(a.z_logvar, b.z_logvar);
    }

    #[test]
    #[should_panic(expected = "history length")]
    fn wrong_history_length_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let est = ContextEstimator::new(&mut store, &small_cfg(), &mut rng);
        est.encode_history(&store, &[0.0; 17]);
    }

    #[test]
    fn sample_latent_identities() {
        let mean = [0.4, -1.1, 2.0];
        let logvar = [0.0, 0.5, -0.5];
        let z = sample_latent(&mean, &logvar, &[0.0; 3]);
        assert_eq!(z, mean.to_vec());
        let z1 = sample_latent(&[1.5], &[0.0], &[1.0]);
        assert!((z1[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn sample_latent_matches_moments_over_many_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = [0.7];
        let logvar = [-0.8];
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let z = sample_latent(&mean, &logvar, &[eps])[0];
            sum += z;
            sumsq += z * z;
        }
        let m = sum / n as f64;
        let var = sumsq / n as f64 - m * m;
        assert!((m - 0.7).abs() < 0.01, "mean {m}");
        let want = (-0.8f64).exp();
        assert!((var - want).abs() / want < 0.02, "var {var} vs {want}");
    }

    #[test]
    fn sample_latent_tape_routes_gradient_to_both_heads() {
        // d z / d mean = 1, d z / d logvar = noise * exp(logvar/2) / 2.
        let mut store = ParamStore::new();
        let mean = store.register("m", Tensor::row(&[0.3]));
        let logvar = store.register("lv", Tensor::row(&[0.4]));
        let mut tape = Tape::new(&store);
        let vm = tape.param(mean);
        let vlv = tape.param(logvar);
        let z = sample_latent_tape(&mut tape, vm, vlv, &Tensor::row(&[2.0]));
        let grads = tape.backward(z).unwrap();
        let gm = grads.get(mean).unwrap().data[0];
        let glv = grads.get(logvar).unwrap().data[0];
        assert!((gm - 1.0).abs() < 1e-12);
        let want = 2.0 * (0.4f64 / 2.0).exp() / 2.0;
        assert!((glv - want).abs() < 1e-12, "{glv} vs {want}");
    }

    #[test]
    fn kl_closed_form_matches_known_points() {
        assert_eq!(kl_to_standard_normal(&[0.0], &[0.0]), 0.0);
        assert!((kl_to_standard_normal(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_numerical_integration() {
        // The 16-D KL factorizes per dimension; integrate
        // q(z) * (ln q(z) - ln p(z)) on a fine grid per dimension.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dist = Uniform::new(-1.5f64, 1.5);
        let mean: Vec<f64> = (0..16).map(|_| dist.sample(&mut rng)).collect();
        let logvar: Vec<f64> = (0..16).map(|_| dist.sample(&mut rng)).collect();
        let mut total = 0.0;
        for d in 0..16 {
            let (m, s2) = (mean[d], logvar[d].exp());
            let s = s2.sqrt();
            let steps = 20_000;
            let (lo, hi) = (m - 10.0 * s, m + 10.0 * s);
            let dz = (hi - lo) / steps as f64;
            let mut acc = 0.0;
            for i in 0..=steps {
                let z = lo + i as f64 * dz;
                let q = (-(z - m) * (z - m) / (2.0 * s2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                let ln_q = -(z - m) * (z - m) / (2.0 * s2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let ln_p = -z * z / 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                acc += w * q * (ln_q - ln_p) * dz;
            }
            total += acc;
        }
        let closed = kl_to_standard_normal(&mean, &logvar);
        assert!(
            (closed - total).abs() < 1e-3,
            "closed {closed} vs quadrature {total}"
        );
    }

    #[test]
    fn kl_is_nonnegative_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Uniform::new(-4.0f64, 4.0);
        for _ in 0..10_000 {
            let mean: Vec<f64> = (0..4).map(|_| dist.sample(&mut rng)).collect();
            let logvar: Vec<f64> = (0..4).map(|_| dist.sample(&mut rng)).collect();
            let kl = kl_to_standard_normal(&mean, &logvar);
            assert!(kl >= 0.0, "negative KL {kl} at {mean:?} {logvar:?}");
        }
    }

    #[test]
    fn perfect_predictor_with_prior_latent_has_zero_loss() {
        // All weights zero, zero targets: every head emits its zero bias, the
        // decoder emits zero, and the posterior collapses onto the prior.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let est = ContextEstimator::new(&mut store, &small_cfg(), &mut rng);
        zero_params(&mut store, &est.param_ids());
        let b = 3;
        let histories = Tensor::zeros(b, est.input_dim());
        let vel = Tensor::zeros(b, VEL_DIM);
        let next = Tensor::zeros(b, est.obs_dim);
        let noise = Tensor::zeros(b, est.latent_dim);
        assert_eq!(est.context_loss(&store, &histories, &vel, &next, &noise), 0.0);
    }

    #[test]
    fn beta_zero_reduces_to_the_two_mse_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let mut cfg = small_cfg();
        cfg.beta = 0.0;
        let est = ContextEstimator::new(&mut store, &cfg, &mut rng);
        let b = 4;
        let histories = randn(&mut rng, b, est.input_dim(), 0.5);
        let vel = randn(&mut rng, b, VEL_DIM, 1.0);
        let next = randn(&mut rng, b, est.obs_dim, 1.0);
        let noise = Tensor::zeros(b, est.latent_dim);
        let loss = est.context_loss(&store, &histories, &vel, &next, &noise);

        // Same quantities assembled by hand through the inference path with
        // the latent pinned at its mean.
        let mut vel_mse = 0.0;
        let mut rec_mse = 0.0;
        for r in 0..b {
            let enc = est.encode_history(&store, histories.row_slice(r));
            let rec = est
                .decoder
                .forward_one(&store, &sample_latent(&enc.z_mean, &enc.z_logvar, &vec![0.0; est.latent_dim]));
            for c in 0..VEL_DIM {
                vel_mse += (enc.vel[c] - vel.at(r, c)).powi(2);
            }
            for c in 0..est.obs_dim {
                rec_mse += (rec[c] - next.at(r, c)).powi(2);
            }
        }
        vel_mse /= (b * VEL_DIM) as f64;
        rec_mse /= (b * est.obs_dim) as f64;
        assert!(
            (loss - (vel_mse + rec_mse)).abs() < 1e-12,
            "loss {loss} vs mse sum {}",
            vel_mse + rec_mse
        );
    }

    #[test]
    fn context_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let cfg = EstimatorConfig {
            trunk_hidden: vec![8],
            decoder_hidden: vec![8],
            history_len: 3,
            obs_dim: 5,
            latent_dim: 4,
            ..EstimatorConfig::default()
        };
        let est = ContextEstimator::new(&mut store, &cfg, &mut rng);
        let histories = randn(&mut rng, 2, est.input_dim(), 0.7);
        let vel = randn(&mut rng, 2, VEL_DIM, 1.0);
        let next = randn(&mut rng, 2, est.obs_dim, 1.0);
        let noise = randn(&mut rng, 2, est.latent_dim, 1.0);
        let mut tape = Tape::new(&store);
        let parts = est.context_loss_tape(&mut tape, &histories, &vel, &next, &noise);
        let grads = tape.backward(parts.total).unwrap();
        let ids = est.param_ids();
        let err = gradcheck::max_rel_err(&mut store, &ids, &grads, |s| {
            est.context_loss(s, &histories, &vel, &next, &noise)
        });
        assert!(err < 1e-4, "context loss fd mismatch {err}");
    }

    #[test]
    fn velocity_head_recovers_planted_velocity() {
        // Histories carry the per-sample velocity in two fixed channels amid
        // noise; after a short fit the head must read it back out.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let cfg = EstimatorConfig {
            trunk_hidden: vec![32],
            decoder_hidden: vec![8],
            ..EstimatorConfig::default()
        };
        let est = ContextEstimator::new(&mut store, &cfg, &mut rng);
        let vel_dist = Uniform::new(-1.0f64, 1.0);
        let make = |rng: &mut ChaCha8Rng, n: usize| {
            let mut hist = Tensor::zeros(n, est.input_dim());
            let mut vel = Tensor::zeros(n, VEL_DIM);
            for r in 0..n {
                let v = [vel_dist.sample(rng), vel_dist.sample(rng)];
                vel.set(r, 0, v[0]);
                vel.set(r, 1, v[1]);
                for step in 0..est.history_len {
                    let base = step * est.obs_dim;
                    hist.set(r, base, v[0]);
                    hist.set(r, base + 1, v[1]);
                    for c in 2..est.obs_dim {
                        let jitter: f64 = StandardNormal.sample(rng);
                        hist.set(r, base + c, 0.1 * jitter);
                    }
                }
            }
            (hist, vel)
        };
        let next = Tensor::zeros(64, est.obs_dim);
        let mut adam = Adam::new(&store, 1e-2, 0.9, 0.999);
        for _ in 0..1500 {
            let (train_h, train_v) = make(&mut rng, 64);
            let noise = randn(&mut rng, 64, est.latent_dim, 1.0);
            let mut tape = Tape::new(&store);
            let parts = est.context_loss_tape(&mut tape, &train_h, &train_v, &next, &noise);
            let grads = tape.backward(parts.total).unwrap();
            adam.step(&mut store, &grads);
        }
        let (test_h, test_v) = make(&mut rng, 16);
        for r in 0..16 {
            let enc = est.encode_history(&store, test_h.row_slice(r));
            for c in 0..VEL_DIM {
                let err = (enc.vel[c] - test_v.at(r, c)).abs();
                assert!(err < 0.05, "velocity err {err} at sample {r}");
            }
        }
    }

    #[test]
    fn elevation_zero_everything_is_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let ae = ElevationAutoencoder::new(&mut store, &small_cfg(), &mut rng);
        zero_params(&mut store, &ae.param_ids());
        let maps = Tensor::zeros(3, ae.map_dim);
        assert_eq!(ae.elevation_loss(&store, &maps), 0.0);
    }

    #[test]
    fn constant_decoder_gives_exact_square_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let ae = ElevationAutoencoder::new(&mut store, &small_cfg(), &mut rng);
        zero_params(&mut store, &ae.param_ids());
        let out_bias = store.by_name("elev.dec.l1.b").unwrap();
        for v in &mut store.get_mut(out_bias).data {
            *v = 0.3;
        }
        let maps = Tensor::from_vec(2, ae.map_dim, vec![0.1; 2 * ae.map_dim]);
        let loss = ae.elevation_loss(&store, &maps);
        assert!((loss - 0.04).abs() < 1e-15, "loss {loss}");
    }

    #[test]
    fn elevation_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let cfg = EstimatorConfig {
            elevation_dim: 9,
            elevation_latent: 4,
            elevation_hidden: vec![6],
            ..EstimatorConfig::default()
        };
        let ae = ElevationAutoencoder::new(&mut store, &cfg, &mut rng);
        let maps = randn(&mut rng, 3, ae.map_dim, 0.4);
        let mut tape = Tape::new(&store);
        let loss = ae.elevation_loss_tape(&mut tape, &maps);
        let grads = tape.backward(loss).unwrap();
        let ids = ae.param_ids();
        let err = gradcheck::max_rel_err(&mut store, &ids, &grads, |s| {
            ae.elevation_loss(s, &maps)
        });
        assert!(err < 1e-4, "elevation loss fd mismatch {err}");
    }

    #[test]
    fn autoencoder_overfits_a_single_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let ae = ElevationAutoencoder::new(&mut store, &small_cfg(), &mut rng);
        let map: Vec<f64> = (0..ae.map_dim).map(|i| 0.3 * (i as f64 * 0.5).sin()).collect();
        let maps = Tensor::from_vec(1, ae.map_dim, map);
        let mut adam = Adam::new(&store, 1e-2, 0.9, 0.999);
        for _ in 0..500 {
            let mut tape = Tape::new(&store);
            let loss = ae.elevation_loss_tape(&mut tape, &maps);
            let grads = tape.backward(loss).unwrap();
            adam.step(&mut store, &grads);
        }
        let final_loss = ae.elevation_loss(&store, &maps);
        assert!(final_loss < 1e-4, "overfit stalled at {final_loss}");
    }

    #[test]
    fn beta_must_be_nonnegative() {
        let cfg = EstimatorConfig {
            beta: -0.1,
            ..EstimatorConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(EstimatorConfig::default().validate().is_ok());
    }

    #[test]
    fn estimators_only_touch_their_own_parameters() {
        // Grads from the context loss must not reach the elevation AE and
        // vice versa; both models share one store in the trainer.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::new();
        let cfg = small_cfg();
        let est = ContextEstimator::new(&mut store, &cfg, &mut rng);
        let ae = ElevationAutoencoder::new(&mut store, &cfg, &mut rng);
        let histories = randn(&mut rng, 2, est.input_dim(), 0.5);
        let vel = randn(&mut rng, 2, VEL_DIM, 1.0);
        let next = randn(&mut rng, 2, est.obs_dim, 1.0);
        let noise = randn(&mut rng, 2, est.latent_dim, 1.0);
        let mut tape = Tape::new(&store);
        let parts = est.context_loss_tape(&mut tape, &histories, &vel, &next, &noise);
        let grads: Grads = tape.backward(parts.total).unwrap();
        for id in ae.param_ids() {
            assert!(grads.get(id).is_none(), "context loss leaked into {}", store.name(id));
        }
    }
}
