//! Procedurally drawn targets and target loading.

use std::path::Path;

use snca_core::target::{pad, premultiplied_from_rgba8, AuxKind, TargetPattern};
use snca_core::Tensor;

use crate::config::TargetSource;

#[derive(Debug, thiserror::Error)]
#[error("target {path}: {message}")]
pub struct TargetError {
    pub path: String,
    pub message: String,
}

pub const BUILTIN: &[&str] = &["toy", "lizard"];

/// Premultiplied `(1, size, size, 4)` image from a painter returning the
/// straight-alpha colour at a point of the unit square (x right, y down),
/// averaged over `ss x ss` subsamples per pixel.
fn paint(size: usize, ss: usize, f: impl Fn(f64, f64) -> Option<[f64; 4]>) -> Tensor<f64> {
    let shape = snca_core::Shape::new(1, size, size, 4);
    let mut img = Tensor::zeros(shape);
    let n = (ss * ss) as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 4];
            for sy in 0..ss {
                for sx in 0..ss {
                    let u = (x as f64 + (sx as f64 + 0.5) / ss as f64) / size as f64;
                    let v = (y as f64 + (sy as f64 + 0.5) / ss as f64) / size as f64;
                    if let Some([r, g, b, a]) = f(u, v) {
                        acc[0] += r * a;
                        acc[1] += g * a;
                        acc[2] += b * a;
                        acc[3] += a;
                    }
                }
            }
            for (c, v) in acc.iter().enumerate() {
                img.set(0, y, x, c, v / n);
            }
        }
    }
    img
}

/// 24x24 disk, red above the horizontal midline and blue below, with a
/// small green bump on the upper right rim. No mirror image of it is a
/// rotation of it.
pub fn toy_disk() -> Tensor<f64> {
    paint(24, 1, |u, v| {
        let (dx, dy) = ((u - 0.5) * 24.0, (v - 0.5) * 24.0);
        let disk = dx * dx + dy * dy <= 81.0;
        let nub = (dy + 7.0).powi(2) + (dx - 8.0).powi(2) <= 9.0;
        if !(disk || nub) {
            return None;
        }
        let top = dy < 0.0;
        Some([
            if top { 1.0 } else { 0.1 },
            if nub { 0.8 } else { 0.2 },
            if top { 0.1 } else { 1.0 },
            1.0,
        ])
    })
}

fn in_ellipse(u: f64, v: f64, c: (f64, f64), a: f64, b: f64, rot: f64) -> bool {
    let (du, dv) = (u - c.0, v - c.1);
    let (cs, sn) = (rot.cos(), rot.sin());
    let (p, q) = (du * cs + dv * sn, -du * sn + dv * cs);
    (p / a).powi(2) + (q / b).powi(2) <= 1.0
}

/// Distance from `p` to the segment `a b`.
fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    ((p.0 - a.0 - t * abx).powi(2) + (p.1 - a.1 - t * aby).powi(2)).sqrt()
}

/// 40x40 stylized lizard: body, head with one eye, splayed legs, a tail
/// curling to one side and a stripe along one flank, so the figure is chiral.
pub fn lizard() -> Tensor<f64> {
    let green = [0.25, 0.65, 0.25, 1.0];
    let dark = [0.1, 0.4, 0.15, 1.0];
    let stripe = [0.95, 0.8, 0.2, 1.0];
    let eye = [0.05, 0.05, 0.05, 1.0];
    // Tail as a polyline curling clockwise.
    let tail: Vec<(f64, f64)> = (0..=12)
        .map(|i| {
            let t = i as f64 / 12.0;
            let ang = 1.6 + 2.4 * t;
            let r = 0.18 - 0.06 * t;
            (0.5 + 0.02 + r * ang.cos() * 0.9, 0.62 + r * ang.sin())
        })
        .collect();
    paint(40, 4, move |u, v| {
        if in_ellipse(u, v, (0.5, 0.22), 0.07, 0.09, 0.0) {
            if (u - 0.53).powi(2) + (v - 0.19).powi(2) < 0.012f64.powi(2) {
                return Some(eye);
            }
            return Some(dark);
        }
        if in_ellipse(u, v, (0.5, 0.42), 0.08, 0.17, 0.0) {
            if u > 0.535 && v > 0.32 && v < 0.54 {
                return Some(stripe);
            }
            return Some(green);
        }
        let legs = [
            ((0.45, 0.34), (0.3, 0.28)),
            ((0.55, 0.34), (0.7, 0.4)),
            ((0.45, 0.52), (0.32, 0.62)),
            ((0.55, 0.52), (0.72, 0.56)),
        ];
        for (a, b) in legs {
            if seg_dist((u, v), a, b) < 0.028 {
                return Some(dark);
            }
        }
        for (k, w) in tail.windows(2).enumerate() {
            let width = 0.035 * (1.0 - k as f64 / 14.0);
            if seg_dist((u, v), w[0], w[1]) < width {
                return Some(green);
            }
        }
        None
    })
}

pub fn builtin(name: &str) -> Option<Tensor<f64>> {
    match name {
        "toy" => Some(toy_disk()),
        "lizard" => Some(lizard()),
        _ => None,
    }
}

/// Loads a PNG as premultiplied RGBA with a zero border of `pad_cells`.
pub fn load_png(path: &Path, pad_cells: usize) -> Result<Tensor<f64>, TargetError> {
    let err = |message: String| TargetError {
        path: path.display().to_string(),
        message,
    };
    let img = image::open(path).map_err(|e| err(e.to_string()))?.to_rgba8();
    let (w, h) = img.dimensions();
    premultiplied_from_rgba8(w as usize, h as usize, img.as_raw(), pad_cells).map_err(|e| err(e.to_string()))
}

pub fn load_image(source: &TargetSource, pad_cells: usize) -> Result<Tensor<f64>, TargetError> {
    match source {
        TargetSource::Builtin(name) => builtin(name).map(|t| pad(&t, pad_cells)).ok_or_else(|| TargetError {
            path: source.describe(),
            message: format!("unknown builtin target (available: {})", BUILTIN.join(", ")),
        }),
        TargetSource::Png(p) => load_png(p, pad_cells),
    }
}

pub fn load_target(source: &TargetSource, pad_cells: usize, aux: AuxKind) -> Result<TargetPattern, TargetError> {
    let img = load_image(source, pad_cells)?;
    TargetPattern::new(img, aux).map_err(|e| TargetError {
        path: source.describe(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use snca_core::target::is_premultiplied;

    #[test]
    fn builtins_are_premultiplied_and_nonempty() {
        for name in BUILTIN {
            let t = builtin(name).unwrap();
            assert!(is_premultiplied(&t));
            let alpha: f64 = t.data().chunks(4).map(|p| p[3]).sum();
            assert!(alpha > 50.0, "{name}");
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn toy_is_not_mirror_symmetric() {
        let t = toy_disk();
        let mut diff = 0.0;
        for y in 0..24 {
            for x in 0..24 {
                diff += (t.get(0, y, x, 1) - t.get(0, y, 23 - x, 1)).abs();
            }
        }
        assert!(diff > 1.0);
    }

    #[test]
    fn missing_png_names_path() {
        let e = load_image(&TargetSource::Png("/no/such/file.png".into()), 0).unwrap_err();
        assert!(e.to_string().contains("/no/such/file.png"));
    }
}
