//! Training objectives.
//!
//! Both losses compare the RGBA (and any auxiliary) channels of the grown
//! state with the target after applying the same unsharp mask to both.
//! Channel weights: 1/4 for each RGBA channel, `lambda_binary` for the
//! silhouette and `lambda_radial / 2` for each component of the radial pair.
//!
//! The rotation-invariant loss resamples both patterns on a polar lattice, so
//! a rotation about the pattern centre becomes a cyclic shift along the
//! angle axis. Distances for every shift come from one frequency-domain
//! cross-correlation; the minimum is selected and differentiated as a plain
//! weighted squared distance against the correspondingly shifted target.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Kernel3, Tape, Var};
use crate::fft::{fft, ifft, Complex64};
use crate::target::{PolarTarget, TargetPattern};
use crate::{Error, Result, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Two hue-coded seeds, plain pixel-wise loss.
    TwoSeedL2,
    /// One seed, loss minimized over all target rotations.
    SingleSeedRotInv,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::TwoSeedL2 => "two_seed_l2",
            Regime::SingleSeedRotInv => "single_seed_rotinv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two_seed_l2" => Some(Regime::TwoSeedL2),
            "single_seed_rotinv" => Some(Regime::SingleSeedRotInv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Unsharp-mask amount applied to both patterns; 0 disables it.
    pub sharpen: f64,
    pub lambda_binary: f64,
    pub lambda_radial: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            sharpen: 1.0,
            lambda_binary: 1.0,
            lambda_radial: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    /// Mean of `per_sample`.
    pub value: f64,
    pub per_sample: Vec<f64>,
    /// Selected cyclic shift per sample (rotation-invariant loss only).
    pub best_shift: Vec<usize>,
    /// Selected rotation in `[0, 2 pi)` per sample (rotation-invariant loss only).
    pub best_rotation: Vec<f64>,
}

impl LossReport {
    fn from_samples(per_sample: Vec<f64>) -> Self {
        let value = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
        LossReport {
            value,
            per_sample,
            ..LossReport::default()
        }
    }
}

fn channel_weights(target: &TargetPattern, cfg: &LossConfig) -> Vec<f64> {
    let mut w = alloc::vec![0.25; 4];
    let k = target.aux_kind.channels();
    if k >= 1 {
        w.push(cfg.lambda_binary);
    }
    if k == 3 {
        w.push(cfg.lambda_radial / 2.0);
        w.push(cfg.lambda_radial / 2.0);
    }
    w
}

fn check_dims(state: Shape, target: &TargetPattern) -> Result<()> {
    if state.height != target.height() || state.width != target.width() {
        return Err(Error::dim(
            "loss",
            format!(
                "state is {}x{}, target is {}x{}",
                state.height,
                state.width,
                target.height(),
                target.width()
            ),
        ));
    }
    if state.channels < target.channels() {
        return Err(Error::dim(
            "loss",
            format!(
                "state has {} channels, target compares {}",
                state.channels,
                target.channels()
            ),
        ));
    }
    Ok(())
}

/// The compared channels of the state, sharpened.
fn compared_channels<T: Scalar>(tape: &mut Tape<T>, state: Var, target: &TargetPattern, sharpen: f64) -> Result<Var> {
    let chans: Vec<usize> = (0..target.channels()).collect();
    let sel = tape.select(state, &chans)?;
    if sharpen == 0.0 {
        Ok(sel)
    } else {
        tape.conv3x3(sel, Kernel3::unsharp(sharpen))
    }
}

/// Weighted squared distance per sample between `pred` and the constant
/// `reference`, with per-element weights; returns `(mean loss, per-sample)`.
fn weighted_sq_dist<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    reference: Tensor<T>,
    weights: Tensor<T>,
) -> Result<(Var, Var)> {
    let batch = tape.shape(pred).batch;
    let r = tape.constant(reference);
    let w = tape.constant(weights);
    let d = tape.sub(pred, r)?;
    let sq = tape.mul(d, d)?;
    let wsq = tape.mul(sq, w)?;
    let per = tape.sum_per_sample(wsq);
    let total = tape.sum(per);
    let mean = tape.scale(total, T::one() / T::from_f64(batch as f64));
    Ok((mean, per))
}

/// Plain pixel-wise loss recorded on `tape`.
pub fn l2_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    state: Var,
    target: &TargetPattern,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let s = tape.shape(state);
    check_dims(s, target)?;
    let pred = compared_channels(tape, state, target, cfg.sharpen)?;
    let sharp = crate::target::sharpen(&target.stacked(), cfg.sharpen)?;
    let k = target.channels();
    let cw = channel_weights(target, cfg);
    let pixels = (s.height * s.width) as f64;
    let shape = s.with_channels(k);
    let reference = Tensor::from_fn(shape, |_, y, x, c| T::from_f64(sharp.get(0, y, x, c)));
    let weights = Tensor::from_fn(shape, |_, _, _, c| T::from_f64(cw[c] / pixels));
    let (mean, per) = weighted_sq_dist(tape, pred, reference, weights)?;
    let report = LossReport::from_samples(tape.value(per).data().iter().map(|v| v.as_f64()).collect());
    Ok((mean, report))
}

/// Plain pixel-wise loss of a state, without gradients.
pub fn l2_loss<T: Scalar>(state: &Tensor<T>, target: &TargetPattern, cfg: &LossConfig) -> Result<LossReport> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    Ok(l2_loss_on_tape(&mut tape, s, target, cfg)?.1)
}

fn polar_of(target: &TargetPattern) -> Result<&PolarTarget> {
    target
        .polar
        .as_ref()
        .ok_or_else(|| Error::Contract("target polar table not prepared".into()))
}

/// Reference polar image for shift `k`: every scalar channel cyclically
/// shifted by `k` bins, the radial pair additionally turned by the shift angle.
fn shifted_reference(target: &TargetPattern, polar: &PolarTarget, k: usize) -> Tensor<f64> {
    let a_bins = polar.grid.a_bins;
    let theta = polar.grid.shift_angle(k);
    let (c, s) = (libm::cos(theta), libm::sin(theta));
    let radial = target.aux_kind.radial_offset();
    let p = &polar.polar;
    Tensor::from_fn(p.shape(), |_, r, a, ch| {
        let src = (a + a_bins - k) % a_bins;
        match radial {
            Some(o) if ch == o => c * p.get(0, r, src, o) - s * p.get(0, r, src, o + 1),
            Some(o) if ch == o + 1 => s * p.get(0, r, src, o) + c * p.get(0, r, src, o + 1),
            _ => p.get(0, r, src, ch),
        }
    })
}

/// Per-element weights on the polar lattice: ring weight times channel
/// weight, averaged over the angle axis.
fn polar_weights(target: &TargetPattern, polar: &PolarTarget, cfg: &LossConfig) -> Tensor<f64> {
    let cw = channel_weights(target, cfg);
    let a_bins = polar.grid.a_bins as f64;
    Tensor::from_fn(polar.polar.shape(), |_, r, _, c| {
        polar.grid.radial_weights[r] * cw[c] / a_bins
    })
}

/// Distances `D_k` for every shift `k`, from the frequency domain.
fn shift_distances_fft(target: &TargetPattern, polar: &PolarTarget, grown: &Tensor<f64>, b: usize, cfg: &LossConfig) -> Vec<f64> {
    let (r_bins, a_bins) = (polar.grid.r_bins, polar.grid.a_bins);
    let cw = channel_weights(target, cfg);
    let scalar = target.scalar_channels();
    let radial = target.aux_kind.radial_offset();

    let mut norms = 0.0;
    let mut acc = alloc::vec![Complex64::new(0.0, 0.0); a_bins];
    let mut acc_radial = alloc::vec![Complex64::new(0.0, 0.0); a_bins];
    let mut buf = alloc::vec![Complex64::new(0.0, 0.0); a_bins];
    for r in 0..r_bins {
        let wr = polar.grid.radial_weights[r] / a_bins as f64;
        if wr == 0.0 {
            continue;
        }
        for (i, &c) in scalar.iter().enumerate() {
            let w = wr * cw[c];
            for (a, z) in buf.iter_mut().enumerate() {
                let g = grown.get(b, r, a, c);
                let t = polar.polar.get(0, r, a, c);
                norms += w * (g * g + t * t);
                *z = Complex64::new(g, 0.0);
            }
            fft(&mut buf);
            for (dst, (fg, ft)) in acc.iter_mut().zip(buf.iter().zip(&polar.spectra[r][i])) {
                *dst += w * fg * ft.conj();
            }
        }
        if let (Some(o), Some(rs)) = (radial, polar.radial_spectra.as_ref()) {
            let w = wr * cw[o];
            for (a, z) in buf.iter_mut().enumerate() {
                let (u, v) = (grown.get(b, r, a, o), grown.get(b, r, a, o + 1));
                let (tu, tv) = (polar.polar.get(0, r, a, o), polar.polar.get(0, r, a, o + 1));
                norms += w * (u * u + v * v + tu * tu + tv * tv);
                *z = Complex64::new(u, v);
            }
            fft(&mut buf);
            for (dst, (fg, ft)) in acc_radial.iter_mut().zip(buf.iter().zip(&rs[r])) {
                *dst += w * fg * ft.conj();
            }
        }
    }
    // The accumulators hold weighted G * conj(T); their inverse transforms
    // are the weighted cross-correlations over all shifts.
    ifft(&mut acc);
    ifft(&mut acc_radial);
    let corr = acc;
    let corr_radial = radial.map(|_| acc_radial);
    (0..a_bins)
        .map(|k| {
            let mut cross = corr[k].re;
            if let Some(q) = &corr_radial {
                let rot = Complex64::from_polar(1.0, polar.grid.shift_angle(k));
                cross += (rot * q[k].conj()).re;
            }
            norms - 2.0 * cross
        })
        .collect()
}

/// Distances `D_k` for every shift `k` by explicit shifting (test oracle).
fn shift_distances_direct(target: &TargetPattern, polar: &PolarTarget, grown: &Tensor<f64>, b: usize, cfg: &LossConfig) -> Vec<f64> {
    let weights = polar_weights(target, polar, cfg);
    (0..polar.grid.a_bins)
        .map(|k| {
            let reference = shifted_reference(target, polar, k);
            let s = reference.shape();
            let mut d = 0.0;
            for r in 0..s.height {
                for a in 0..s.width {
                    for c in 0..s.channels {
                        let diff = grown.get(b, r, a, c) - reference.get(0, r, a, c);
                        d += weights.get(0, r, a, c) * diff * diff;
                    }
                }
            }
            d
        })
        .collect()
}

/// First index of the minimum; ties go to the smallest shift.
fn argmin(d: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = k;
        }
    }
    best
}

fn rotinv_impl<T: Scalar>(
    tape: &mut Tape<T>,
    state: Var,
    target: &TargetPattern,
    cfg: &LossConfig,
    brute_force: bool,
) -> Result<(Var, LossReport)> {
    let s = tape.shape(state);
    check_dims(s, target)?;
    let polar = polar_of(target)?;
    if (polar.sharpen - cfg.sharpen).abs() > 0.0 {
        return Err(Error::Contract(format!(
            "polar table prepared with sharpen {} but loss uses {}",
            polar.sharpen, cfg.sharpen
        )));
    }
    let pred = compared_channels(tape, state, target, cfg.sharpen)?;
    let grown_polar = tape.resample(pred, polar.grid.plan.clone())?;
    let grown = tape.value(grown_polar).cast::<f64>();

    let mut report = LossReport::default();
    let mut refs = Vec::with_capacity(s.batch);
    for b in 0..s.batch {
        let d = if brute_force {
            shift_distances_direct(target, polar, &grown, b, cfg)
        } else {
            shift_distances_fft(target, polar, &grown, b, cfg)
        };
        let k = argmin(&d);
        report.per_sample.push(d[k]);
        report.best_shift.push(k);
        report.best_rotation.push(polar.grid.shift_angle(k));
        refs.push(shifted_reference(target, polar, k).cast::<T>());
    }
    report.value = report.per_sample.iter().sum::<f64>() / s.batch.max(1) as f64;

    let reference = Tensor::stack(&refs)?;
    let w = polar_weights(target, polar, cfg);
    let weights = Tensor::stack(&alloc::vec![w.cast::<T>(); s.batch])?;
    let (mean, _) = weighted_sq_dist(tape, grown_polar, reference, weights)?;
    Ok((mean, report))
}

/// Rotation-invariant loss recorded on `tape`. The returned variable is the
/// distance at the selected shift, so gradients flow through that rotation only.
pub fn rotinv_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    state: Var,
    target: &TargetPattern,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    rotinv_impl(tape, state, target, cfg, false)
}

/// Rotation-invariant loss of a state via frequency-domain correlation.
pub fn rotinv_loss_fft<T: Scalar>(state: &Tensor<T>, target: &TargetPattern, cfg: &LossConfig) -> Result<LossReport> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    Ok(rotinv_impl(&mut tape, s, target, cfg, false)?.1)
}

/// Rotation-invariant loss by explicitly trying every shift.
pub fn rotinv_loss_bruteforce<T: Scalar>(state: &Tensor<T>, target: &TargetPattern, cfg: &LossConfig) -> Result<LossReport> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    Ok(rotinv_impl(&mut tape, s, target, cfg, true)?.1)
}

/// Distance for every shift of one sample, by frequency-domain correlation.
pub fn rotation_profile<T: Scalar>(state: &Tensor<T>, target: &TargetPattern, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_dims(state.shape(), target)?;
    let polar = polar_of(target)?;
    let mut tape = Tape::new();
    let s = tape.constant(state.cast::<f64>());
    let pred = compared_channels(&mut tape, s, target, cfg.sharpen)?;
    let gp = tape.resample(pred, polar.grid.plan.clone())?;
    Ok(shift_distances_fft(target, polar, tape.value(gp), 0, cfg))
}

/// Regime loss on `tape`: plain pixel-wise for two seeds, rotation-invariant
/// for a single seed. Auxiliary channels share the selected rotation.
pub fn total_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    state: Var,
    target: &TargetPattern,
    aux_channels: usize,
    regime: Regime,
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    if aux_channels != target.aux_kind.channels() {
        return Err(Error::Config(format!(
            "model has {} auxiliary channels, target provides {}",
            aux_channels,
            target.aux_kind.channels()
        )));
    }
    match regime {
        Regime::TwoSeedL2 => l2_loss_on_tape(tape, state, target, cfg),
        Regime::SingleSeedRotInv => rotinv_loss_on_tape(tape, state, target, cfg),
    }
}

/// [`total_loss_on_tape`] without gradients.
pub fn total_loss<T: Scalar>(
    state: &Tensor<T>,
    target: &TargetPattern,
    aux_channels: usize,
    regime: Regime,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let s = tape.constant(state.clone());
    Ok(total_loss_on_tape(&mut tape, s, target, aux_channels, regime, cfg)?.1)
}
