//! Initial conditions: a single seed cell or a pair of hue-coded seed cells.

use core::f64::consts::TAU;

use crate::model::{ModelConfig, Variant, ALPHA};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    Single,
    Two,
}

impl SeedMode {
    pub fn name(self) -> &'static str {
        match self {
            SeedMode::Single => "single",
            SeedMode::Two => "two",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(SeedMode::Single),
            "two" => Some(SeedMode::Two),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSpec {
    pub mode: SeedMode,
    /// (row, col) of the seed, or of the midpoint of the pair.
    pub center: (f64, f64),
    /// Distance between the two seed cells, in cells.
    pub separation: f64,
    /// Direction from the first to the second seed, radians, measured from
    /// the +column axis towards the +row axis.
    pub orientation: f64,
    /// HSV hues of the two seeds in degrees (saturation = value = 1).
    pub hue_a: f64,
    pub hue_b: f64,
    /// Initial steering value of seed cells for the angle variant.
    pub angle: f64,
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec {
            mode: SeedMode::Two,
            center: (0.0, 0.0),
            separation: 8.0,
            orientation: 0.0,
            hue_a: 0.0,
            hue_b: 180.0,
            angle: 0.0,
        }
    }
}

impl SeedSpec {
    pub fn single(row: f64, col: f64) -> Self {
        SeedSpec {
            mode: SeedMode::Single,
            center: (row, col),
            ..SeedSpec::default()
        }
    }

    pub fn pair(row: f64, col: f64, separation: f64, orientation: f64) -> Self {
        SeedSpec {
            mode: SeedMode::Two,
            center: (row, col),
            separation,
            orientation,
            ..SeedSpec::default()
        }
    }

    /// Grid cells occupied by the seeds, each with its RGB colour.
    pub fn cells(&self) -> alloc::vec::Vec<((i64, i64), [f64; 3])> {
        let (r, c) = self.center;
        match self.mode {
            SeedMode::Single => alloc::vec![((round(r), round(c)), [0.0; 3])],
            SeedMode::Two => {
                // Rounding the offset once keeps the pair within half a cell
                // per axis of the requested separation.
                let oy = round(libm::sin(self.orientation) * self.separation);
                let ox = round(libm::cos(self.orientation) * self.separation);
                let first = (round(r - oy as f64 / 2.0), round(c - ox as f64 / 2.0));
                alloc::vec![
                    (first, hsv_to_rgb(self.hue_a, 1.0, 1.0)),
                    ((first.0 + oy, first.1 + ox), hsv_to_rgb(self.hue_b, 1.0, 1.0)),
                ]
            }
        }
    }
}

/// `v` reduced into `[0, m)`.
pub(crate) fn wrap(v: f64, m: f64) -> f64 {
    let r = v - m * libm::floor(v / m);
    if r >= m { 0.0 } else { r }
}

fn round(v: f64) -> i64 {
    libm::round(v) as i64
}

/// HSV to RGB with hue in degrees and saturation, value in [0, 1].
pub fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = wrap(hue, 360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - libm::fabs(wrap(h, 2.0) - 1.0));
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Builds a batch-1 state of size `height x width` containing the seed.
///
/// Seed cells get alpha 1 and their RGB colour (zero for a single seed);
/// angle-variant seeds also get `spec.angle` in the steering channel. When
/// both seeds land on one cell their values add and alpha is clamped to 1.
pub fn make_seed<T: Scalar>(
    spec: &SeedSpec,
    cfg: &ModelConfig,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let mut state = Tensor::zeros(cfg.state_shape(1, height, width));
    for ((row, col), rgb) in spec.cells() {
        if row < 0 || col < 0 || row >= height as i64 || col >= width as i64 {
            return Err(Error::Placement {
                row,
                col,
                height,
                width,
            });
        }
        let (y, x) = (row as usize, col as usize);
        for (ch, v) in rgb.iter().enumerate() {
            let cur = state.get(0, y, x, ch);
            state.set(0, y, x, ch, cur + T::from_f64(*v));
        }
        let a: T = state.get(0, y, x, ALPHA) + T::one();
        let a = if a > T::one() { T::one() } else { a };
        state.set(0, y, x, ALPHA, a);
        if cfg.variant == Variant::Angle {
            state.set(0, y, x, cfg.steering_channel, T::from_f64(spec.angle));
        }
    }
    Ok(state)
}

/// Turns the seed pair by `delta` radians about its midpoint.
pub fn rotate_seed_pair(spec: &SeedSpec, delta: f64) -> Result<SeedSpec> {
    if spec.mode != SeedMode::Two {
        return Err(Error::Contract("rotate_seed_pair needs a two-seed spec".into()));
    }
    Ok(SeedSpec {
        orientation: wrap(spec.orientation + delta, TAU),
        ..spec.clone()
    })
}

/// Replaces the distance between the two seeds.
pub fn vary_seed_diameter(spec: &SeedSpec, diameter: f64) -> Result<SeedSpec> {
    if spec.mode != SeedMode::Two {
        return Err(Error::Contract("vary_seed_diameter needs a two-seed spec".into()));
    }
    if !(diameter >= 0.0) {
        return Err(Error::Contract(alloc::format!("negative seed diameter {}", diameter)));
    }
    Ok(SeedSpec {
        separation: diameter,
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    fn nonzero_cells(t: &Tensor<f64>) -> alloc::vec::Vec<(usize, usize)> {
        let s = t.shape();
        let mut out = alloc::vec::Vec::new();
        for y in 0..s.height {
            for x in 0..s.width {
                if (0..s.channels).any(|c| t.get(0, y, x, c) != 0.0) {
                    out.push((y, x));
                }
            }
        }
        out
    }

    #[test]
    fn single_seed() {
        let s: Tensor<f64> = make_seed(&SeedSpec::single(32.0, 32.0), &cfg(), 64, 64).unwrap();
        assert_eq!(nonzero_cells(&s), alloc::vec![(32, 32)]);
        assert_eq!(s.get(0, 32, 32, ALPHA), 1.0);
        assert_eq!(s.sum(), 1.0);
    }

    #[test]
    fn pair_horizontal_and_vertical() {
        let s: Tensor<f64> = make_seed(&SeedSpec::pair(32.0, 32.0, 8.0, 0.0), &cfg(), 64, 64).unwrap();
        assert_eq!(nonzero_cells(&s), alloc::vec![(32, 28), (32, 36)]);
        let v: Tensor<f64> = make_seed(&SeedSpec::pair(32.0, 32.0, 8.0, FRAC_PI_2), &cfg(), 64, 64).unwrap();
        assert_eq!(nonzero_cells(&v), alloc::vec![(28, 32), (36, 32)]);
    }

    #[test]
    fn pair_colours_are_distinct_hues() {
        let s: Tensor<f64> = make_seed(&SeedSpec::pair(10.0, 10.0, 8.0, 0.0), &cfg(), 20, 20).unwrap();
        assert_eq!([s.get(0, 10, 6, 0), s.get(0, 10, 6, 1), s.get(0, 10, 6, 2)], [1.0, 0.0, 0.0]);
        assert_eq!([s.get(0, 10, 14, 0), s.get(0, 10, 14, 1), s.get(0, 10, 14, 2)], [0.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_diameter_overlaps_and_clamps() {
        let spec = vary_seed_diameter(&SeedSpec::pair(5.0, 5.0, 8.0, 0.3), 0.0).unwrap();
        let s: Tensor<f64> = make_seed(&spec, &cfg(), 11, 11).unwrap();
        assert_eq!(nonzero_cells(&s), alloc::vec![(5, 5)]);
        assert_eq!(s.get(0, 5, 5, ALPHA), 1.0);
        assert_eq!([s.get(0, 5, 5, 0), s.get(0, 5, 5, 1), s.get(0, 5, 5, 2)], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_bounds_seed() {
        let r: Result<Tensor<f64>> = make_seed(&SeedSpec::pair(2.0, 2.0, 8.0, 0.0), &cfg(), 10, 10);
        assert!(matches!(r, Err(Error::Placement { .. })));
    }

    #[test]
    fn rotate_pair() {
        let spec = SeedSpec::pair(0.0, 0.0, 8.0, 0.0);
        assert_eq!(rotate_seed_pair(&spec, 0.0).unwrap(), spec);
        let r = rotate_seed_pair(&rotate_seed_pair(&spec, 30f64.to_radians()).unwrap(), 330f64.to_radians()).unwrap();
        let wrapped = r.orientation.min(TAU - r.orientation);
        assert!(wrapped < 1e-12);
        let r280 = rotate_seed_pair(&spec, 280f64.to_radians()).unwrap();
        assert!((r280.orientation.to_degrees() - 280.0).abs() < 1e-9);
        assert!(rotate_seed_pair(&SeedSpec::single(0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn diameter_for_training_condition_is_identity() {
        let spec = SeedSpec::pair(12.0, 12.0, 8.0, 0.0);
        assert_eq!(vary_seed_diameter(&spec, 8.0).unwrap(), spec);
        for d in [2.0, 6.0] {
            assert_eq!(vary_seed_diameter(&spec, d).unwrap().separation, d);
        }
    }

    #[test]
    fn angle_variant_seed_carries_angle() {
        let spec = SeedSpec {
            angle: 1.25,
            ..SeedSpec::single(4.0, 4.0)
        };
        let s: Tensor<f64> = make_seed(&spec, &cfg(), 9, 9).unwrap();
        assert_eq!(s.get(0, 4, 4, 15), 1.25);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
        assert_eq!(hsv_to_rgb(360.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
    }
}
