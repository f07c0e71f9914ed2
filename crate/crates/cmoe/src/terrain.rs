//! Procedural 1-D heightfields. Feature magnitudes interpolate their class
//! range linearly in difficulty and are exact; feature positions randomize
//! with 1.0 to 2.0 m spacing and snap to the sample grid, so any measured
//! width is within one sample spacing of the requested value.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SPACING: f64 = 0.025;
pub const SPAWN_PAD: f64 = 2.0;
pub const GAP_DEPTH: f64 = 0.8;
/// Shorter fields leave no room for the spawn pad plus any features.
pub const MIN_LENGTH: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TerrainClass {
    Flat,
    Slope,
    StairsUp,
    StairsDown,
    Gap,
    Hurdle,
    Discrete,
    Mix1,
    Mix2,
}

pub const ALL_CLASSES: [TerrainClass; 9] = [
    TerrainClass::Flat,
    TerrainClass::Slope,
    TerrainClass::StairsUp,
    TerrainClass::StairsDown,
    TerrainClass::Gap,
    TerrainClass::Hurdle,
    TerrainClass::Discrete,
    TerrainClass::Mix1,
    TerrainClass::Mix2,
];

impl TerrainClass {
    pub fn index(self) -> usize {
        ALL_CLASSES.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainClass::Flat => "flat",
            TerrainClass::Slope => "slope",
            TerrainClass::StairsUp => "stairs_up",
            TerrainClass::StairsDown => "stairs_down",
            TerrainClass::Gap => "gap",
            TerrainClass::Hurdle => "hurdle",
            TerrainClass::Discrete => "discrete",
            TerrainClass::Mix1 => "mix1",
            TerrainClass::Mix2 => "mix2",
        }
    }

    pub fn parse(s: &str) -> Result<TerrainClass> {
        ALL_CLASSES
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown terrain class '{s}' (expected one of {})",
                    ALL_CLASSES.map(|c| c.name()).join(", ")
                ))
            })
    }

    /// Classes whose curriculum additionally widens the velocity command
    /// range as levels rise.
    pub fn is_complex(self) -> bool {
        matches!(
            self,
            TerrainClass::StairsUp
                | TerrainClass::StairsDown
                | TerrainClass::Gap
                | TerrainClass::Hurdle
                | TerrainClass::Mix1
                | TerrainClass::Mix2
        )
    }
}

/// Linear interpolation of a feature range by difficulty in [0, 1].
pub fn interp(range: (f64, f64), difficulty: f64) -> f64 {
    range.0 + difficulty * (range.1 - range.0)
}

pub const SLOPE_DEG: (f64, f64) = (0.0, 20.0);
pub const STAIR_HEIGHT: (f64, f64) = (0.05, 0.23);
pub const GAP_WIDTH: (f64, f64) = (0.1, 0.8);
pub const HURDLE_HEIGHT: (f64, f64) = (0.2, 0.4);
pub const HURDLE_WIDTH: (f64, f64) = (0.1, 0.3);
pub const DISCRETE_HEIGHT: (f64, f64) = (0.1, 0.2);
pub const DISCRETE_LENGTH: (f64, f64) = (0.3, 0.6);
pub const MIX1_STEP_HEIGHT: (f64, f64) = (0.1, 0.15);
pub const MIX2_STEP_HEIGHT: (f64, f64) = (0.1, 0.25);
const FEATURE_SPACING: (f64, f64) = (1.0, 2.0);
const STAIR_TREAD: (f64, f64) = (0.25, 0.35);

#[derive(Clone, Debug)]
pub struct Heightfield {
    pub class: TerrainClass,
    pub difficulty: f64,
    pub length: f64,
    /// Sample i sits at x = i * SPACING.
    pub heights: Vec<f64>,
    /// x positions of vertical discontinuities, sorted ascending.
    pub feature_edges: Vec<f64>,
}

impl Heightfield {
    pub fn generate(
        class: TerrainClass,
        difficulty: f64,
        length: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Heightfield> {
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(Error::Contract(format!(
                "terrain difficulty {difficulty} outside [0, 1]"
            )));
        }
        if length < MIN_LENGTH {
            return Err(Error::Contract(format!(
                "terrain length {length} below minimum {MIN_LENGTH} m"
            )));
        }
        let n = (length / SPACING).round() as usize + 1;
        let mut hf = Heightfield {
            class,
            difficulty,
            length,
            heights: vec![0.0; n],
            feature_edges: Vec::new(),
        };
        let d = difficulty;
        match class {
            TerrainClass::Flat => {}
            TerrainClass::Slope => {
                let slope = interp(SLOPE_DEG, d).to_radians().tan();
                for i in 0..n {
                    let x = i as f64 * SPACING;
                    if x > SPAWN_PAD {
                        hf.heights[i] = (x - SPAWN_PAD) * slope;
                    }
                }
            }
            TerrainClass::StairsUp | TerrainClass::StairsDown => {
                let step = interp(STAIR_HEIGHT, d);
                let sign = if class == TerrainClass::StairsUp { 1.0 } else { -1.0 };
                let mut x = SPAWN_PAD + rng.gen_range(FEATURE_SPACING.0..FEATURE_SPACING.1);
                let mut level = 0.0;
                while x < length {
                    level += sign * step;
                    let tread = rng.gen_range(STAIR_TREAD.0..STAIR_TREAD.1);
                    let x_end = x + tread;
                    hf.paint(x, x_end, level);
                    if step > 0.0 {
                        hf.feature_edges.push(hf.snap(x));
                    }
                    x = x_end;
                }
            }
            TerrainClass::Gap => {
                let w = interp(GAP_WIDTH, d);
                hf.repeat_features(rng, |hf, _rng, x| {
                    hf.carve_span(x, w, -GAP_DEPTH);
                    x + w
                });
            }
            TerrainClass::Hurdle => {
                let h = interp(HURDLE_HEIGHT, d);
                let w = interp(HURDLE_WIDTH, d);
                hf.repeat_features(rng, |hf, _rng, x| {
                    hf.carve_span(x, w, h);
                    x + w
                });
            }
            TerrainClass::Discrete => {
                let h = interp(DISCRETE_HEIGHT, d);
                hf.repeat_features(rng, |hf, rng, x| {
                    let len = hf.snap_len(rng_range(rng, DISCRETE_LENGTH));
                    hf.carve_span(x, len, h);
                    x + len
                });
            }
            TerrainClass::Mix1 => {
                let gap_w = interp(GAP_WIDTH, d);
                let step_h = interp(MIX1_STEP_HEIGHT, d);
                let mut gap_next = true;
                hf.repeat_features(rng, |hf, rng, x| {
                    let end = if gap_next {
                        hf.carve_span(x, gap_w, -GAP_DEPTH);
                        x + gap_w
                    } else {
                        let len = hf.snap_len(rng_range(rng, (0.4, 0.8)));
                        hf.carve_span(x, len, step_h);
                        x + len
                    };
                    gap_next = !gap_next;
                    end
                });
            }
            TerrainClass::Mix2 => {
                let step = interp(MIX2_STEP_HEIGHT, d);
                let mut level = 0.0;
                let mut up_next = true;
                hf.repeat_features(rng, |hf, _rng, x| {
                    level += if up_next { step } else { -step };
                    up_next = !up_next;
                    let xs = hf.snap(x);
                    hf.paint_from(xs, level);
                    hf.feature_edges.push(xs);
                    x
                });
            }
        }
        if !hf.heights.iter().all(|h| h.is_finite()) {
            return Err(Error::Numeric("non-finite terrain height".into()));
        }
        Ok(hf)
    }

    fn snap(&self, x: f64) -> f64 {
        (x / SPACING).round() * SPACING
    }

    fn snap_len(&self, len: f64) -> f64 {
        (len / SPACING).round().max(1.0) * SPACING
    }

    /// Sets the span [x0, x0+w) to height h and records both edges. Start and
    /// width snap to the grid first.
    fn carve_span(&mut self, x0: f64, w: f64, h: f64) {
        let xs = self.snap(x0);
        let xe = xs + self.snap_len(w);
        self.paint(xs, xe, h);
        self.feature_edges.push(xs);
        self.feature_edges.push(xe);
    }

    fn paint(&mut self, x0: f64, x1: f64, h: f64) {
        let i0 = (x0 / SPACING).round() as usize;
        let i1 = ((x1 / SPACING).round() as usize).min(self.heights.len());
        for i in i0..i1 {
            self.heights[i] = h;
        }
    }

    fn paint_from(&mut self, x0: f64, h: f64) {
        let i0 = (x0 / SPACING).round() as usize;
        for i in i0..self.heights.len() {
            self.heights[i] = h;
        }
    }

    /// Places features left to right with 1.0 to 2.0 m spacing after the
    /// spawn pad. `place` paints one feature starting at x and returns the x
    /// where it ends.
    fn repeat_features(
        &mut self,
        rng: &mut ChaCha8Rng,
        mut place: impl FnMut(&mut Heightfield, &mut ChaCha8Rng, f64) -> f64,
    ) {
        let mut x = SPAWN_PAD;
        loop {
            x += rng.gen_range(FEATURE_SPACING.0..FEATURE_SPACING.1);
            if x >= self.length - 1.0 {
                break;
            }
            x = place(self, rng, x);
        }
        self.feature_edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    /// Height by linear interpolation between samples; clamps beyond both
    /// ends so queries off the runway are well defined.
    pub fn height_at(&self, x: f64) -> f64 {
        let t = x / SPACING;
        if t <= 0.0 {
            return self.heights[0];
        }
        let i = t.floor() as usize;
        if i + 1 >= self.heights.len() {
            return *self.heights.last().unwrap();
        }
        let frac = t - i as f64;
        self.heights[i] * (1.0 - frac) + self.heights[i + 1] * frac
    }

    /// Horizontal distance from x to the nearest recorded feature edge.
    pub fn edge_distance(&self, x: f64) -> f64 {
        self.feature_edges
            .iter()
            .map(|e| (e - x).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

fn rng_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..range.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn same_seed_reproduces_field() {
        for class in ALL_CLASSES {
            let a = Heightfield::generate(class, 0.5, 20.0, &mut stream(3, 0)).unwrap();
            let b = Heightfield::generate(class, 0.5, 20.0, &mut stream(3, 0)).unwrap();
            assert_eq!(a.heights, b.heights);
            assert_eq!(a.feature_edges, b.feature_edges);
        }
    }

    #[test]
    fn spawn_pad_is_flat_for_all_classes() {
        for class in ALL_CLASSES {
            for seed in 0..20 {
                let hf = Heightfield::generate(class, 1.0, 20.0, &mut stream(seed, 0)).unwrap();
                let pad_samples = (SPAWN_PAD / SPACING) as usize;
                for i in 0..=pad_samples {
                    let x = i as f64 * SPACING;
                    assert_eq!(hf.height_at(x), 0.0, "{} at {x}", class.name());
                }
            }
        }
    }

    #[test]
    fn gap_at_full_difficulty_is_080_wide() {
        for seed in 0..50 {
            let hf = Heightfield::generate(TerrainClass::Gap, 1.0, 20.0, &mut stream(seed, 1)).unwrap();
            let widths = measured_gap_widths(&hf);
            assert!(!widths.is_empty());
            for w in widths {
                assert!((w - 0.8).abs() <= SPACING, "width {w}");
            }
        }
    }

    #[test]
    fn stairs_half_difficulty_steps_are_014() {
        let hf = Heightfield::generate(TerrainClass::StairsUp, 0.5, 20.0, &mut stream(7, 0)).unwrap();
        let mut risers = Vec::new();
        for i in 1..hf.heights.len() {
            let dh = hf.heights[i] - hf.heights[i - 1];
            if dh.abs() > 1e-9 {
                risers.push(dh);
            }
        }
        assert!(risers.len() > 10);
        for r in risers {
            assert!((r - 0.14).abs() < 1e-12, "riser {r}");
        }
    }

    #[test]
    fn mix1_has_both_gaps_and_steps() {
        for seed in 0..20 {
            let hf = Heightfield::generate(TerrainClass::Mix1, 0.8, 25.0, &mut stream(seed, 2)).unwrap();
            let has_gap = hf.heights.iter().any(|&h| h < -0.5);
            let has_step = hf.heights.iter().any(|&h| h > 0.05);
            assert!(has_gap && has_step, "seed {seed}");
        }
    }

    #[test]
    fn height_clamps_beyond_both_ends() {
        let hf = Heightfield::generate(TerrainClass::Slope, 1.0, 20.0, &mut stream(0, 0)).unwrap();
        assert_eq!(hf.height_at(-5.0), hf.heights[0]);
        assert_eq!(hf.height_at(500.0), *hf.heights.last().unwrap());
    }

    #[test]
    fn difficulty_out_of_range_is_rejected() {
        let err = Heightfield::generate(TerrainClass::Flat, 1.5, 20.0, &mut stream(0, 0)).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
        let err = Heightfield::generate(TerrainClass::Flat, -0.1, 20.0, &mut stream(0, 0)).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn short_length_is_rejected() {
        let err = Heightfield::generate(TerrainClass::Flat, 0.5, 5.0, &mut stream(0, 0)).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn edges_are_sorted_and_on_features() {
        let hf = Heightfield::generate(TerrainClass::Hurdle, 0.7, 20.0, &mut stream(4, 0)).unwrap();
        assert!(!hf.feature_edges.is_empty());
        for w in hf.feature_edges.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // Every recorded edge sits within a sample of an actual height jump.
        for &e in &hf.feature_edges {
            let before = hf.height_at(e - 1.5 * SPACING);
            let after = hf.height_at(e + 1.5 * SPACING);
            assert!((before - after).abs() > 0.01, "edge {e} has no jump");
        }
    }

    pub fn measured_gap_widths(hf: &Heightfield) -> Vec<f64> {
        let mut widths = Vec::new();
        let mut start = None;
        for (i, &h) in hf.heights.iter().enumerate() {
            let in_gap = h < -0.5;
            match (start, in_gap) {
                (None, true) => start = Some(i),
                (Some(s), false) => {
                    widths.push((i - s) as f64 * SPACING);
                    start = None;
                }
                _ => {}
            }
        }
        widths
    }
}
