use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::{Result, Scalar, Tensor};

/// Settings for a central-difference gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    /// Above this many coordinates a uniform random subset of this size is checked.
    pub max_coords: usize,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is zero are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-4,
            max_coords: 10_000,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates left out because the two perturbations landed on
    /// different pieces of a piecewise function.
    pub coords_skipped: usize,
    /// (parameter index, flat coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares tape gradients of `build` against central differences.
///
/// `build` records the loss on a fresh tape given one leaf per parameter.
pub fn grad_check<T, F>(build: F, params: &[Tensor<T>], cfg: &GradCheck) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v)).collect();
    let eval = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).item().as_f64())
    };
    grad_check_with(eval, &analytic, params, cfg)
}

/// Compares a supplied analytic gradient against central differences of `eval`.
pub fn grad_check_with<T, E>(
    eval: E,
    analytic: &[Tensor<T>],
    params: &[Tensor<T>],
    cfg: &GradCheck,
) -> Result<GradCheckReport>
where
    T: Scalar,
    E: Fn(&[Tensor<T>]) -> Result<f64>,
{
    grad_check_piecewise(|ps| Ok((eval(ps)?, 0)), analytic, params, cfg)
}

/// Like [`grad_check_with`], for functions that are only piecewise smooth.
///
/// `eval` also returns a signature of the active piece (for example a hash
/// of relu sign patterns). A coordinate whose `+eps` and `-eps` evaluations
/// report different signatures straddles a kink and is skipped.
pub fn grad_check_piecewise<T, E>(
    eval: E,
    analytic: &[Tensor<T>],
    params: &[Tensor<T>],
    cfg: &GradCheck,
) -> Result<GradCheckReport>
where
    T: Scalar,
    E: Fn(&[Tensor<T>]) -> Result<(f64, u64)>,
{
    let sizes: Vec<usize> = params.iter().map(|p| p.shape().len()).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut v = index::sample(&mut rng, total, cfg.max_coords).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..total).collect()
    };

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        coords_skipped: 0,
        worst: None,
    };
    for flat in coords {
        let (mut p, mut i) = (0, flat);
        while i >= sizes[p] {
            i -= sizes[p];
            p += 1;
        }
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = T::from_f64(orig.as_f64() + cfg.eps);
        let (plus, sig_plus) = eval(&work)?;
        work[p].data_mut()[i] = T::from_f64(orig.as_f64() - cfg.eps);
        let (minus, sig_minus) = eval(&work)?;
        work[p].data_mut()[i] = orig;
        if sig_plus != sig_minus {
            report.coords_skipped += 1;
            continue;
        }
        report.coords_checked += 1;

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let a = analytic[p].data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((p, i, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Kernel3;
    use crate::Shape;
    use alloc::vec;
    use rand::Rng;

    fn random(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.5, -2.0, 7.0]).unwrap();
        let r = grad_check(
            |t, v| {
                let s = t.scale(v[0], 3.0);
                Ok(t.sum(s))
            },
            &[w],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{:?}", r);
    }

    #[test]
    fn mul_gradient_matches_finite_differences() {
        let s = Shape::new(2, 3, 3, 4);
        let r = grad_check(
            |t, v| {
                let m = t.mul(v[0], v[1])?;
                let sq = t.mul(m, m)?;
                Ok(t.sum(sq))
            },
            &[random(s, 1), random(s, 2)],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let s = Shape::new(2, 4, 5, 3);
        let w = random(Shape::new(1, 1, 3, 4), 11);
        let b = random(Shape::new(1, 1, 1, 4), 12);
        let build = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
            let x = v[0];
            let gx = t.conv3x3(x, Kernel3::SOBEL_X)?;
            let gy = t.conv3x3(x, Kernel3::SOBEL_Y)?;
            let lap = t.conv3x3(x, Kernel3::LAPLACIAN)?;
            let (c, sn) = t.clipped_normalize_pair(gx, gy)?;
            let cell = t.select(x, &[1])?;
            let ang = t.sin(cell);
            let cc = t.cos(cell);
            let px = t.cell_mul(c, ang)?;
            let py = t.cell_mul(sn, cc)?;
            let cat = t.concat(&[px, py, lap])?;
            let picked = t.select(cat, &[0, 4, 8])?;
            let d = t.dense(picked, v[1], Some(v[2]))?;
            let r = t.relu(d);
            let clipped = t.clip(r, 0.0, 1.5);
            let two = t_const_two(t, clipped);
            let q = t.div(clipped, two)?;
            let diff = t.sub(q, d)?;
            let sq = t.mul(diff, diff)?;
            let per = t.sum_per_sample(sq);
            let sc = t.scale(per, 0.3);
            let sum = t.sum(sc);
            let added = t.add(sum, sum)?;
            Ok(added)
        };
        let r = grad_check(build, &[random(s, 10), w, b], &GradCheck::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    fn t_const_two(t: &mut Tape<f64>, like: Var) -> Var {
        let s = t.shape(like);
        t.constant(Tensor::full(s, 2.0))
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // tanh with a wrong derivative (1 instead of 1 - tanh^2).
        let x = random(Shape::new(1, 3, 3, 2), 3).map(|v| v * 2.0);
        let r = grad_check(
            |t, v| {
                let y = t.pointwise(v[0], libm::tanh, |_| 1.0);
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
            &[x.clone()],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-2, "{:?}", r);

        let ok = grad_check(
            |t, v| {
                let y = t.pointwise(v[0], libm::tanh, |u| 1.0 - libm::tanh(u) * libm::tanh(u));
                let sq = t.mul(y, y)?;
                Ok(t.sum(sq))
            },
            &[x],
            &GradCheck::default(),
        )
        .unwrap();
        assert!(ok.max_rel_error < 1e-6, "{:?}", ok);
    }

    #[test]
    fn subsamples_large_parameter_sets() {
        let w = random(Shape::new(1, 1, 1, 50), 4);
        let cfg = GradCheck {
            max_coords: 10,
            ..GradCheck::default()
        };
        let r = grad_check(|t, v| Ok(t.sum(v[0])), &[w], &cfg).unwrap();
        assert_eq!(r.coords_checked, 10);
    }

    #[test]
    fn kink_straddling_coordinates_are_skipped() {
        // relu at 3e-5: the +-1e-4 stencil crosses zero.
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![3e-5, 0.7]).unwrap();
        let analytic = [Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 1.0]).unwrap()];
        let eval = |ps: &[Tensor<f64>]| {
            let d = ps[0].data();
            let sig = d.iter().fold(0u64, |acc, v| acc << 1 | u64::from(*v > 0.0));
            Ok((d.iter().map(|v| v.max(0.0)).sum(), sig))
        };
        let r = grad_check_piecewise(eval, &analytic, &[x], &GradCheck::default()).unwrap();
        assert_eq!((r.coords_checked, r.coords_skipped), (1, 1));
        assert!(r.max_rel_error < 1e-9);
    }
}
