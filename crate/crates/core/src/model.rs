//! Cell state layout, steerable perception, alive masking and the stochastic
//! update step.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Kernel3, Tape, Var};
use crate::rng::NcaRng;
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Index of the alpha channel; a cell is alive when the 3x3 maximum of this
/// channel exceeds the alive threshold.
pub const ALPHA: usize = 3;

/// How a cell obtains the orientation of its perception field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// The steering channel stores an angle in radians. The angle itself is
    /// not part of what the cell perceives.
    Angle,
    /// The orientation is the normalized Sobel gradient of the steering
    /// (concentration) channel.
    Gradient,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Angle => "angle",
            Variant::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "angle" => Some(Variant::Angle),
            "gradient" => Some(Variant::Gradient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Total state channels: RGBA, auxiliary outputs, hidden, steering.
    pub channels: usize,
    pub hidden: usize,
    /// Per-cell probability of applying the update at each step.
    pub p_upd: f64,
    pub alive_threshold: f64,
    pub steering_channel: usize,
    /// Channels 4.. 4+aux_channels are trained against auxiliary targets.
    pub aux_channels: usize,
    /// Include the Laplacian block in the perception vector.
    pub use_laplacian: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Angle,
            channels: 16,
            hidden: 192,
            p_upd: 0.5,
            alive_threshold: 0.1,
            steering_channel: 15,
            aux_channels: 0,
            use_laplacian: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.channels < 5 {
            return bad(format!("channels = {} but at least 5 are needed", self.channels));
        }
        if !(self.p_upd > 0.0 && self.p_upd <= 1.0) {
            return bad(format!("p_upd = {} is outside (0, 1]", self.p_upd));
        }
        if self.hidden == 0 {
            return bad("hidden = 0".into());
        }
        if self.steering_channel <= ALPHA || self.steering_channel >= self.channels {
            return bad(format!(
                "steering_channel = {} must lie in 4..{}",
                self.steering_channel, self.channels
            ));
        }
        if self.aux_channels > 0
            && (4..4 + self.aux_channels).contains(&self.steering_channel)
        {
            return bad(format!(
                "steering_channel = {} overlaps the auxiliary channels 4..{}",
                self.steering_channel,
                4 + self.aux_channels
            ));
        }
        if 4 + self.aux_channels + 1 > self.channels {
            return bad(format!(
                "{} auxiliary channels do not fit in {} channels",
                self.aux_channels, self.channels
            ));
        }
        Ok(())
    }

    /// Channels that enter the perception stack. The angle variant cannot see
    /// its own angle; the gradient variant perceives everything.
    pub fn perceived_channels(&self) -> Vec<usize> {
        match self.variant {
            Variant::Angle => (0..self.channels)
                .filter(|&c| c != self.steering_channel)
                .collect(),
            Variant::Gradient => (0..self.channels).collect(),
        }
    }

    /// Width of the perception vector fed to the first dense layer.
    pub fn perception_width(&self) -> usize {
        let blocks = if self.use_laplacian { 4 } else { 3 };
        blocks * self.perceived_channels().len()
    }

    pub fn state_shape(&self, batch: usize, height: usize, width: usize) -> Shape {
        Shape::new(batch, height, width, self.channels)
    }
}

/// Update-rule weights: `ds = relu(p W0 + b0) W1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Shape `(1, 1, perception_width, hidden)`.
    pub w0: Tensor<T>,
    /// Shape `(1, 1, 1, hidden)`.
    pub b0: Tensor<T>,
    /// Shape `(1, 1, hidden, channels)`.
    pub w1: Tensor<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform `W0`, zero `b0`, zero `W1`: the initial update is the identity.
    pub fn init(cfg: &ModelConfig, rng: &mut NcaRng) -> Self {
        let p = cfg.perception_width();
        let limit = libm::sqrt(6.0 / (p + cfg.hidden) as f64);
        let w0 = Tensor::from_fn(Shape::new(1, 1, p, cfg.hidden), |_, _, _, _| {
            T::from_f64(rng.gen_range(-limit..limit))
        });
        ModelParams {
            w0,
            b0: Tensor::zeros(Shape::new(1, 1, 1, cfg.hidden)),
            w1: Tensor::zeros(Shape::new(1, 1, cfg.hidden, cfg.channels)),
        }
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = [
            Shape::new(1, 1, cfg.perception_width(), cfg.hidden),
            Shape::new(1, 1, 1, cfg.hidden),
            Shape::new(1, 1, cfg.hidden, cfg.channels),
        ];
        for ((name, t), e) in self.named().iter().zip(expect) {
            if t.shape() != e {
                return Err(Error::dim(
                    "model params",
                    format!("{} has shape {:?}, configuration needs {:?}", name, t.shape(), e),
                ));
            }
        }
        Ok(())
    }

    pub fn arrays(&self) -> [&Tensor<T>; 3] {
        [&self.w0, &self.b0, &self.w1]
    }

    pub fn arrays_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.w0, &mut self.b0, &mut self.w1]
    }

    pub fn named(&self) -> [(&'static str, &Tensor<T>); 3] {
        [("w0", &self.w0), ("b0", &self.b0), ("w1", &self.w1)]
    }

    pub fn from_arrays(mut arrays: Vec<Tensor<T>>) -> Result<Self> {
        if arrays.len() != 3 {
            return Err(Error::dim("model params", format!("{} arrays", arrays.len())));
        }
        let w1 = arrays.pop().unwrap();
        let b0 = arrays.pop().unwrap();
        let w0 = arrays.pop().unwrap();
        Ok(ModelParams { w0, b0, w1 })
    }

    pub fn count(&self) -> usize {
        self.arrays().iter().map(|a| a.shape().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            w0: self.w0.cast(),
            b0: self.b0.cast(),
            w1: self.w1.cast(),
        }
    }
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub w0: Var,
    pub b0: Var,
    pub w1: Var,
}

impl ParamVars {
    pub fn leaves<T: Scalar>(tape: &mut Tape<T>, p: &ModelParams<T>) -> Self {
        ParamVars {
            w0: tape.leaf(p.w0.clone()),
            b0: tape.leaf(p.b0.clone()),
            w1: tape.leaf(p.w1.clone()),
        }
    }

    pub fn constants<T: Scalar>(tape: &mut Tape<T>, p: &ModelParams<T>) -> Self {
        ParamVars {
            w0: tape.constant(p.w0.clone()),
            b0: tape.constant(p.b0.clone()),
            w1: tape.constant(p.w1.clone()),
        }
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.w0, self.b0, self.w1]
    }
}

/// 1 where the 3x3 maximum of alpha is strictly above `threshold`, else 0.
/// Shape `(batch, height, width, 1)`.
pub fn alive_mask<T: Scalar>(state: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let s = state.shape();
    let th = T::from_f64(threshold);
    let (h, w) = (s.height as isize, s.width as isize);
    let mut out = Tensor::zeros(s.with_channels(1));
    for b in 0..s.batch {
        for y in 0..h {
            for x in 0..w {
                let mut alive = false;
                'scan: for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || yy >= h || xx < 0 || xx >= w {
                            continue;
                        }
                        if state.get(b, yy as usize, xx as usize, ALPHA) > th {
                            alive = true;
                            break 'scan;
                        }
                    }
                }
                if alive {
                    out.set(b, y as usize, x as usize, 0, T::one());
                }
            }
        }
    }
    out
}

fn check_state(shape: Shape, cfg: &ModelConfig) -> Result<()> {
    if shape.channels != cfg.channels {
        return Err(Error::dim(
            "nca",
            format!("state has {} channels, model expects {}", shape.channels, cfg.channels),
        ));
    }
    Ok(())
}

/// Per-cell `(cos, sin)` of the perception rotation, each of shape
/// `(batch, height, width, 1)`.
///
/// Angle variant: trigonometric functions of the steering channel. Gradient
/// variant: the clipped-normalized Sobel gradient of the steering channel,
/// which is `(0, 0)` where that gradient is small.
pub fn orientation<T: Scalar>(tape: &mut Tape<T>, state: Var, cfg: &ModelConfig) -> Result<(Var, Var)> {
    let steer = tape.select(state, &[cfg.steering_channel])?;
    match cfg.variant {
        Variant::Angle => Ok((tape.cos(steer), tape.sin(steer))),
        Variant::Gradient => {
            let gx = tape.conv3x3(steer, Kernel3::SOBEL_X)?;
            let gy = tape.conv3x3(steer, Kernel3::SOBEL_Y)?;
            tape.clipped_normalize_pair(gx, gy)
        }
    }
}

fn rotate_pair<T: Scalar>(tape: &mut Tape<T>, gx: Var, gy: Var, cos: Var, sin: Var) -> Result<(Var, Var)> {
    let a = tape.cell_mul(gx, cos)?;
    let b = tape.cell_mul(gy, sin)?;
    let px = tape.add(a, b)?;
    let c = tape.cell_mul(gy, cos)?;
    let d = tape.cell_mul(gx, sin)?;
    let py = tape.sub(c, d)?;
    Ok((px, py))
}

/// Steerable perception: `concat(s, K_lap * s, p_x, p_y)` with
/// `p_x = g_x cos + g_y sin` and `p_y = g_y cos - g_x sin`.
pub fn perceive<T: Scalar>(tape: &mut Tape<T>, state: Var, cfg: &ModelConfig) -> Result<Var> {
    check_state(tape.shape(state), cfg)?;
    let seen = match cfg.variant {
        Variant::Angle => tape.select(state, &cfg.perceived_channels())?,
        Variant::Gradient => state,
    };
    let gx = tape.conv3x3(seen, Kernel3::SOBEL_X)?;
    let gy = tape.conv3x3(seen, Kernel3::SOBEL_Y)?;
    let (cos, sin) = match cfg.variant {
        Variant::Angle => orientation(tape, state, cfg)?,
        Variant::Gradient => {
            // The steering gradient is one channel of the full-state gradients.
            let cx = tape.select(gx, &[cfg.steering_channel])?;
            let cy = tape.select(gy, &[cfg.steering_channel])?;
            tape.clipped_normalize_pair(cx, cy)?
        }
    };
    let (px, py) = rotate_pair(tape, gx, gy, cos, sin)?;
    if cfg.use_laplacian {
        let lap = tape.conv3x3(seen, Kernel3::LAPLACIAN)?;
        tape.concat(&[seen, lap, px, py])
    } else {
        tape.concat(&[seen, px, py])
    }
}

/// Angle-variant perception; errors for a gradient-variant configuration.
pub fn perceive_angle<T: Scalar>(tape: &mut Tape<T>, state: Var, cfg: &ModelConfig) -> Result<Var> {
    if cfg.variant != Variant::Angle {
        return Err(Error::Contract("perceive_angle on a gradient-variant model".into()));
    }
    perceive(tape, state, cfg)
}

/// Gradient-variant perception; errors for an angle-variant configuration.
pub fn perceive_gradient<T: Scalar>(tape: &mut Tape<T>, state: Var, cfg: &ModelConfig) -> Result<Var> {
    if cfg.variant != Variant::Gradient {
        return Err(Error::Contract("perceive_gradient on an angle-variant model".into()));
    }
    perceive(tape, state, cfg)
}

/// Independent Bernoulli(`p_upd`) draw for every cell, in (batch, y, x) order.
/// Always consumes exactly one draw per cell.
pub fn update_mask(shape: Shape, p_upd: f64, rng: &mut NcaRng) -> Vec<bool> {
    (0..shape.cells()).map(|_| rng.gen::<f64>() < p_upd).collect()
}

/// One stochastic update recorded on `tape`.
///
/// The update network runs only on cells that are alive before the step and
/// selected by the update mask; every other cell receives no update. Cells
/// outside the intersection of the pre- and post-update alive masks are
/// zeroed. Masks enter the tape as constants.
pub fn step_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    state: Var,
    params: &ParamVars,
    cfg: &ModelConfig,
    rng: &mut NcaRng,
) -> Result<Var> {
    let shape = tape.shape(state);
    check_state(shape, cfg)?;
    let pre = alive_mask(tape.value(state), cfg.alive_threshold);
    let updates = update_mask(shape, cfg.p_upd, rng);
    let rows: Vec<bool> = pre
        .data()
        .iter()
        .zip(&updates)
        .map(|(&m, &u)| u && m > T::zero())
        .collect();
    let rows = Arc::new(rows);

    let p = perceive(tape, state, cfg)?;
    let h = tape.dense_rows(p, params.w0, Some(params.b0), rows.clone())?;
    let h = tape.relu(h);
    let ds = tape.dense_rows(h, params.w1, None, rows)?;
    let next = tape.add(state, ds)?;

    let post = alive_mask(tape.value(next), cfg.alive_threshold);
    let keep: Vec<T> = pre
        .data()
        .iter()
        .zip(post.data())
        .map(|(&a, &b)| a * b)
        .collect();
    let keep = tape.constant(Tensor::from_vec(shape.with_channels(1), keep)?);
    tape.cell_mul(next, keep)
}

/// One stochastic update without gradient tracking.
pub fn nca_step<T: Scalar>(
    state: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    rng: &mut NcaRng,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let pv = ParamVars::constants(&mut tape, params);
    let s = tape.constant(state.clone());
    let out = step_on_tape(&mut tape, s, &pv, cfg, rng)?;
    Ok(tape.value(out).clone())
}

/// Snapshots of a rollout: the state at step 0 and at every multiple of the
/// recording stride, plus the final state.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub frames: Vec<(usize, Tensor<T>)>,
    pub final_state: Tensor<T>,
}

pub fn rollout<T: Scalar>(
    seed: &Tensor<T>,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    n_steps: usize,
    rng: &mut NcaRng,
    record_every: usize,
) -> Result<Trajectory<T>> {
    if n_steps == 0 {
        return Err(Error::Contract("rollout needs at least one step".into()));
    }
    let stride = record_every.max(1);
    let mut frames = alloc::vec![(0, seed.clone())];
    let mut state = seed.clone();
    for step in 1..=n_steps {
        state = nca_step(&state, params, cfg, rng)?;
        if step % stride == 0 {
            frames.push((step, state.clone()));
        }
    }
    Ok(Trajectory {
        frames,
        final_state: state,
    })
}

/// Per-cell orientation `(cos, sin)` of a state, for visualization.
pub fn orientation_field<T: Scalar>(state: &Tensor<T>, cfg: &ModelConfig) -> Result<(Tensor<T>, Tensor<T>)> {
    check_state(state.shape(), cfg)?;
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    let (c, s) = orientation(&mut tape, s, cfg)?;
    Ok((tape.value(c).clone(), tape.value(s).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use core::f64::consts::FRAC_PI_2;

    fn small_cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            channels: 6,
            hidden: 8,
            steering_channel: 5,
            ..ModelConfig::default()
        }
    }

    fn random_state(cfg: &ModelConfig, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeded(seed);
        Tensor::from_fn(cfg.state_shape(1, h, w), |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    fn perception(state: &Tensor<f64>, cfg: &ModelConfig) -> Tensor<f64> {
        let mut t = Tape::new();
        let s = t.constant(state.clone());
        let p = perceive(&mut t, s, cfg).unwrap();
        t.value(p).clone()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.channels = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.p_upd = 0.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.steering_channel = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn perception_widths() {
        let a = ModelConfig::default();
        assert_eq!(a.perception_width(), 60);
        let g = ModelConfig {
            variant: Variant::Gradient,
            ..ModelConfig::default()
        };
        assert_eq!(g.perception_width(), 64);
        let no_lap = ModelConfig {
            use_laplacian: false,
            ..g
        };
        assert_eq!(no_lap.perception_width(), 48);
    }

    #[test]
    fn zero_angle_leaves_gradients_unrotated() {
        let cfg = small_cfg(Variant::Angle);
        let mut st = random_state(&cfg, 6, 6, 1);
        for y in 0..6 {
            for x in 0..6 {
                st.set(0, y, x, 5, 0.0);
            }
        }
        let p = perception(&st, &cfg);
        let n = 5;
        let mut t = Tape::new();
        let s = t.constant(st.clone());
        let seen = t.select(s, &[0, 1, 2, 3, 4]).unwrap();
        let gx = t.conv3x3(seen, Kernel3::SOBEL_X).unwrap();
        let gy = t.conv3x3(seen, Kernel3::SOBEL_Y).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                for c in 0..n {
                    assert_eq!(p.get(0, y, x, 2 * n + c), t.value(gx).get(0, y, x, c));
                    assert_eq!(p.get(0, y, x, 3 * n + c), t.value(gy).get(0, y, x, c));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_angle_swaps_gradients() {
        let cfg = small_cfg(Variant::Angle);
        let mut st = random_state(&cfg, 5, 5, 2);
        for y in 0..5 {
            for x in 0..5 {
                st.set(0, y, x, 5, FRAC_PI_2);
            }
        }
        let p = perception(&st, &cfg);
        let mut zeroed = st.clone();
        for y in 0..5 {
            for x in 0..5 {
                zeroed.set(0, y, x, 5, 0.0);
            }
        }
        let q = perception(&zeroed, &cfg);
        let n = 5;
        for y in 0..5 {
            for x in 0..5 {
                for c in 0..n {
                    let (gx, gy) = (q.get(0, y, x, 2 * n + c), q.get(0, y, x, 3 * n + c));
                    assert!((p.get(0, y, x, 2 * n + c) - gy).abs() < 1e-12);
                    assert!((p.get(0, y, x, 3 * n + c) + gx).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_gradient_pair_norm() {
        let cfg = small_cfg(Variant::Angle);
        let st = random_state(&cfg, 7, 7, 3).map(|v| v * 4.0);
        let p = perception(&st, &cfg);
        let mut zeroed = st.clone();
        for y in 0..7 {
            for x in 0..7 {
                zeroed.set(0, y, x, 5, 0.0);
            }
        }
        let q = perception(&zeroed, &cfg);
        let n = 5;
        for y in 0..7 {
            for x in 0..7 {
                for c in 0..n {
                    let a = p.get(0, y, x, 2 * n + c).powi(2) + p.get(0, y, x, 3 * n + c).powi(2);
                    let b = q.get(0, y, x, 2 * n + c).powi(2) + q.get(0, y, x, 3 * n + c).powi(2);
                    assert!((a - b).abs() < 1e-5 * (1.0 + b));
                }
            }
        }
    }

    #[test]
    fn uniform_concentration_suppresses_gradients() {
        let cfg = small_cfg(Variant::Gradient);
        let mut st = random_state(&cfg, 6, 6, 4);
        for y in 0..6 {
            for x in 0..6 {
                st.set(0, y, x, 5, 0.7);
            }
        }
        let p = perception(&st, &cfg);
        // Interior cells only: zero padding makes the border gradient nonzero.
        for y in 1..5 {
            for x in 1..5 {
                for c in 12..24 {
                    assert!(p.get(0, y, x, c).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn steep_concentration_ramp_gives_identity_rotation() {
        let cfg = small_cfg(Variant::Gradient);
        let mut st = random_state(&cfg, 6, 6, 5);
        for y in 0..6 {
            for x in 0..6 {
                st.set(0, y, x, 5, x as f64);
            }
        }
        let p = perception(&st, &cfg);
        let mut t = Tape::new();
        let s = t.constant(st.clone());
        let gx = t.conv3x3(s, Kernel3::SOBEL_X).unwrap();
        for y in 1..5 {
            for x in 1..5 {
                for c in 0..6 {
                    assert!((p.get(0, y, x, 12 + c) - t.value(gx).get(0, y, x, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wrong_variant_is_a_contract_error() {
        let cfg = small_cfg(Variant::Angle);
        let mut t = Tape::new();
        let s = t.constant(random_state(&cfg, 4, 4, 0));
        assert!(matches!(perceive_gradient(&mut t, s, &cfg), Err(Error::Contract(_))));
        let g = small_cfg(Variant::Gradient);
        assert!(matches!(perceive_angle(&mut t, s, &g), Err(Error::Contract(_))));
    }

    #[test]
    fn alive_mask_cases() {
        let mut st = Tensor::<f64>::zeros(Shape::new(1, 5, 5, 5));
        assert!(alive_mask(&st, 0.1).data().iter().all(|&v| v == 0.0));
        st.set(0, 2, 2, ALPHA, 1.0);
        let m = alive_mask(&st, 0.1);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(m.get(0, y, x, 0), if inside { 1.0 } else { 0.0 });
            }
        }
        st.set(0, 2, 2, ALPHA, 0.1);
        assert!(alive_mask(&st, 0.1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_w1_keeps_state() {
        let cfg = small_cfg(Variant::Angle);
        let mut rng = seeded(3);
        let params = ModelParams::<f64>::init(&cfg, &mut rng);
        let mut seed = Tensor::zeros(cfg.state_shape(1, 9, 9));
        seed.set(0, 4, 4, ALPHA, 1.0);
        let traj = rollout(&seed, &params, &cfg, 20, &mut rng, 5).unwrap();
        assert_eq!(traj.final_state, seed);
        assert_eq!(traj.frames.len(), 5);
    }

    #[test]
    fn empty_grid_stays_empty() {
        let cfg = small_cfg(Variant::Gradient);
        let mut rng = seeded(4);
        let mut params = ModelParams::<f64>::init(&cfg, &mut rng);
        params.w1 = params.w1.map(|_| 0.5);
        params.b0 = params.b0.map(|_| 1.0);
        let empty = Tensor::zeros(cfg.state_shape(1, 6, 6));
        assert_eq!(nca_step(&empty, &params, &cfg, &mut rng).unwrap(), empty);
    }

    #[test]
    fn deterministic_with_fixed_rng() {
        let cfg = ModelConfig {
            p_upd: 1.0,
            ..small_cfg(Variant::Angle)
        };
        let mut r = seeded(9);
        let mut params = ModelParams::<f32>::init(&cfg, &mut r);
        params.w1 = Tensor::from_fn(params.w1.shape(), |_, _, i, j| ((i * 3 + j) % 7) as f32 * 0.01 - 0.03);
        let mut seed = Tensor::zeros(cfg.state_shape(1, 8, 8));
        seed.set(0, 4, 4, ALPHA, 1.0);
        let a = rollout(&seed, &params, &cfg, 6, &mut seeded(1), 1).unwrap();
        let b = rollout(&seed, &params, &cfg, 6, &mut seeded(1), 1).unwrap();
        assert_eq!(a.final_state, b.final_state);
        let one = nca_step(&seed, &params, &cfg, &mut seeded(2)).unwrap();
        let r1 = rollout(&seed, &params, &cfg, 1, &mut seeded(2), 1).unwrap();
        assert_eq!(one, r1.final_state);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let cfg = small_cfg(Variant::Angle);
        let params = ModelParams::<f64>::init(&cfg, &mut seeded(0));
        let st = Tensor::zeros(Shape::new(1, 5, 5, 7));
        assert!(matches!(
            nca_step(&st, &params, &cfg, &mut seeded(0)),
            Err(Error::Dimension { .. })
        ));
    }
}
