//! Elevation sensing. The walker samples a strip of terrain heights around
//! its base; training corrupts that strip with edge chamfering, salt-and-
//! pepper outliers, gaussian noise, a sensor delay, and a per-episode
//! offset and shift, so the policy never sees a perfect map.

use crate::terrain::{Heightfield, SPACING};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;

/// Sample window relative to the base, in meters.
pub const WINDOW: (f64, f64) = (-0.3, 0.8);
/// Samples per strip: the window at terrain spacing, endpoints included.
pub const ELEVATION_DIM: usize = 45;
/// Neighbor jump treated as a map discontinuity by the chamfer.
pub const DISCONTINUITY: f64 = 0.05;

#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    /// Eq-style two-sided outlier probability per tail; effective replace
    /// rate is 2p. Must stay in [0, 0.5].
    pub salt_pepper_p: f64,
    /// Multiplier on difficulty added to p: p_eff = p * (1 + scaling * d).
    pub difficulty_scaling: f64,
    pub gaussian_sigma: f64,
    pub delay_steps: usize,
    pub chamfer_radius: f64,
    /// Per-episode vertical measurement bias, drawn U(-offset, offset).
    pub offset_range: f64,
    /// Per-episode horizontal window shift, drawn U(-shift, shift).
    pub shift_range: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            salt_pepper_p: 0.03,
            difficulty_scaling: 1.0,
            gaussian_sigma: 0.01,
            delay_steps: 2,
            chamfer_radius: 0.05,
            offset_range: 0.03,
            shift_range: 0.05,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            salt_pepper_p: 0.0,
            difficulty_scaling: 0.0,
            gaussian_sigma: 0.0,
            delay_steps: 0,
            chamfer_radius: 0.0,
            offset_range: 0.0,
            shift_range: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.salt_pepper_p) {
            return Err(Error::Config(format!(
                "salt_pepper_p {} outside [0, 0.5]",
                self.salt_pepper_p
            )));
        }
        if self.gaussian_sigma < 0.0 || self.chamfer_radius < 0.0 {
            return Err(Error::Config("negative noise magnitude".into()));
        }
        Ok(())
    }
}

/// Ground-truth strip: heights at base_x + [-0.3, 0.8] relative to base
/// height. Queries beyond the terrain clamp to the end heights.
pub fn sample_elevation(hf: &Heightfield, base_x: f64, base_z: f64) -> Vec<f64> {
    (0..ELEVATION_DIM)
        .map(|i| hf.height_at(base_x + WINDOW.0 + i as f64 * SPACING) - base_z)
        .collect()
}

/// Two-sided outlier replacement. With probability p a sample jumps into
/// (M, 2M - m), with probability p into (2m - M, m), where M and m are the
/// per-map max and min; otherwise it passes through untouched.
pub fn apply_salt_pepper(map: &[f64], p: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Contract(format!("salt-pepper p {p} outside [0, 0.5]")));
    }
    let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = max - min;
    Ok(map
        .iter()
        .map(|&v| {
            let u: f64 = rng.gen();
            if u < 2.0 * p && span > 1e-12 {
                if u < p {
                    rng.gen_range(max..max + span)
                } else {
                    rng.gen_range(min - span..min)
                }
            } else {
                v
            }
        })
        .collect())
}

/// Replaces sharp steps with monotone ramps: samples within `radius` of a
/// neighbor jump larger than [`DISCONTINUITY`] are moving-averaged over a
/// window of width 2 * radius. Samples farther away are untouched.
pub fn apply_chamfer(map: &[f64], radius: f64) -> Vec<f64> {
    if radius <= 0.0 || map.len() < 2 {
        return map.to_vec();
    }
    let half = (radius / SPACING).round() as usize;
    let mut marked = vec![false; map.len()];
    for i in 0..map.len() - 1 {
        if (map[i + 1] - map[i]).abs() > DISCONTINUITY {
            let edge = i as f64 + 0.5;
            let lo = (edge - radius / SPACING).ceil().max(0.0) as usize;
            let hi = (edge + radius / SPACING).floor().min(map.len() as f64 - 1.0) as usize;
            for m in &mut marked[lo..=hi] {
                *m = true;
            }
        }
    }
    map.iter()
        .enumerate()
        .map(|(i, &v)| {
            if !marked[i] {
                return v;
            }
            let mut acc = 0.0;
            for o in -(half as i64)..=half as i64 {
                let j = (i as i64 + o).clamp(0, map.len() as i64 - 1) as usize;
                acc += map[j];
            }
            acc / (2 * half + 1) as f64
        })
        .collect()
}

/// Per-env sensing pipeline with episode-scoped randomization and a short
/// delay line.
#[derive(Clone, Debug)]
pub struct ElevationSensor {
    pub cfg: NoiseConfig,
    offset: f64,
    shift: f64,
    history: VecDeque<Vec<f64>>,
}

pub struct Sensed {
    /// Exact strip, for the autoencoder target and privileged storage.
    pub clean: Vec<f64>,
    /// What the policy sees.
    pub noisy: Vec<f64>,
}

impl ElevationSensor {
    pub fn new(cfg: NoiseConfig) -> Self {
        ElevationSensor {
            cfg,
            offset: 0.0,
            shift: 0.0,
            history: VecDeque::new(),
        }
    }

    pub fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.offset = sym_range(rng, self.cfg.offset_range);
        self.shift = sym_range(rng, self.cfg.shift_range);
        self.history.clear();
    }

    pub fn sense(
        &mut self,
        hf: &Heightfield,
        base_x: f64,
        base_z: f64,
        difficulty: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sensed> {
        let clean = sample_elevation(hf, base_x, base_z);
        let mut m = sample_elevation(hf, base_x + self.shift, base_z);
        for v in &mut m {
            *v += self.offset;
        }
        m = apply_chamfer(&m, self.cfg.chamfer_radius);
        let p_eff = (self.cfg.salt_pepper_p * (1.0 + self.cfg.difficulty_scaling * difficulty))
            .min(0.5);
        m = apply_salt_pepper(&m, p_eff, rng)?;

        self.history.push_back(m);
        if self.history.len() > self.cfg.delay_steps + 1 {
            self.history.pop_front();
        }
        // Delay is bounded by what the episode has produced so far.
        let mut noisy = self.history.front().unwrap().clone();
        if self.cfg.gaussian_sigma > 0.0 {
            let normal = Normal::new(0.0, self.cfg.gaussian_sigma).unwrap();
            for v in &mut noisy {
                *v += normal.sample(rng);
            }
        }
        Ok(Sensed { clean, noisy })
    }
}

fn sym_range(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r > 0.0 {
        rng.gen_range(-r..r)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::terrain::TerrainClass;

    fn step_field() -> Heightfield {
        // Flat then a 0.2 m step at x = 10.
        let mut hf = Heightfield::generate(TerrainClass::Flat, 0.0, 20.0, &mut stream(0, 0)).unwrap();
        for (i, h) in hf.heights.iter_mut().enumerate() {
            if i as f64 * SPACING >= 10.0 {
                *h = 0.2;
            }
        }
        hf.feature_edges.push(10.0);
        hf
    }

    #[test]
    fn window_sees_a_step_ahead() {
        let hf = step_field();
        // Base just before the step: forward part of the window is on the
        // step, rear part is not.
        let e = sample_elevation(&hf, 9.9, 0.65);
        assert_eq!(e.len(), ELEVATION_DIM);
        let rear = e[0];
        let front = e[ELEVATION_DIM - 1];
        assert!((front - rear - 0.2).abs() < 1e-9, "front {front} rear {rear}");
    }

    #[test]
    fn window_clamps_past_terrain_end() {
        let hf = step_field();
        let e = sample_elevation(&hf, 19.9, 0.0);
        for v in &e {
            assert_eq!(*v, 0.2);
        }
    }

    #[test]
    fn salt_pepper_statistics() {
        let mut rng = stream(1, 0);
        let map: Vec<f64> = (0..100_000).map(|i| (i % 50) as f64 * 0.01).collect();
        let max = 0.49;
        let min = 0.0;
        let out = apply_salt_pepper(&map, 0.05, &mut rng).unwrap();
        let mut replaced = 0usize;
        for (a, b) in map.iter().zip(&out) {
            if a != b {
                replaced += 1;
                let hi = *b >= max && *b <= 2.0 * max - min;
                let lo = *b >= 2.0 * min - max && *b <= min;
                assert!(hi || lo, "replacement {b} outside outlier bands");
            }
        }
        let frac = replaced as f64 / map.len() as f64;
        assert!((0.09..=0.11).contains(&frac), "replaced fraction {frac}");
    }

    #[test]
    fn salt_pepper_zero_p_is_identity() {
        let mut rng = stream(2, 0);
        let map: Vec<f64> = (0..200).map(|i| (i as f64).sin()).collect();
        let out = apply_salt_pepper(&map, 0.0, &mut rng).unwrap();
        assert_eq!(map, out);
    }

    #[test]
    fn salt_pepper_constant_map_unchanged() {
        let mut rng = stream(3, 0);
        let map = vec![0.123; 64];
        let out = apply_salt_pepper(&map, 0.3, &mut rng).unwrap();
        assert_eq!(map, out);
    }

    #[test]
    fn salt_pepper_rejects_large_p() {
        let mut rng = stream(4, 0);
        assert!(apply_salt_pepper(&[0.0, 1.0], 0.6, &mut rng).is_err());
    }

    #[test]
    fn chamfer_builds_monotone_ramp() {
        let mut map = vec![0.0; 20];
        for v in &mut map[10..] {
            *v = 0.2;
        }
        let out = apply_chamfer(&map, 0.05);
        // Outside the radius nothing moves.
        assert_eq!(out[..8], map[..8]);
        assert_eq!(out[12..], map[12..]);
        // Across the edge the ramp is strictly increasing with at least
        // three intermediate samples.
        let ramp: Vec<f64> = out[7..13].to_vec();
        let intermediates = ramp.iter().filter(|v| **v > 1e-12 && **v < 0.2 - 1e-12).count();
        assert!(intermediates >= 3, "ramp {ramp:?}");
        for w in ramp.windows(2) {
            assert!(w[1] > w[0] - 1e-12, "not monotone: {ramp:?}");
        }
    }

    #[test]
    fn chamfer_ignores_smooth_maps() {
        let map: Vec<f64> = (0..40).map(|i| i as f64 * 0.03).collect();
        let out = apply_chamfer(&map, 0.05);
        assert_eq!(map, out);
    }

    #[test]
    fn sensor_delay_returns_old_maps() {
        let hf = step_field();
        let cfg = NoiseConfig {
            salt_pepper_p: 0.0,
            difficulty_scaling: 0.0,
            gaussian_sigma: 0.0,
            delay_steps: 2,
            chamfer_radius: 0.0,
            offset_range: 0.0,
            shift_range: 0.0,
        };
        let mut sensor = ElevationSensor::new(cfg);
        let mut rng = stream(5, 0);
        sensor.reset(&mut rng);
        // March the base forward; with a 2-step delay the sensed map must
        // equal the clean map from two steps earlier.
        let mut cleans = Vec::new();
        for k in 0..6 {
            let x = 9.0 + k as f64 * 0.1;
            let s = sensor.sense(&hf, x, 0.65, 0.0, &mut rng).unwrap();
            cleans.push(s.clean.clone());
            if k >= 2 {
                assert_eq!(s.noisy, cleans[k - 2], "step {k}");
            } else {
                assert_eq!(s.noisy, cleans[0], "warmup step {k}");
            }
        }
    }

    #[test]
    fn sensor_is_reproducible_per_seed() {
        let hf = step_field();
        let run = || {
            let mut sensor = ElevationSensor::new(NoiseConfig::default());
            let mut rng = stream(9, 3);
            sensor.reset(&mut rng);
            let mut out = Vec::new();
            for k in 0..5 {
                let s = sensor
                    .sense(&hf, 9.5 + k as f64 * 0.05, 0.6, 0.5, &mut rng)
                    .unwrap();
                out.extend(s.noisy);
            }
            out
        };
        assert_eq!(run(), run());
    }
}
