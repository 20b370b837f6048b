//! Turning states into 8-bit images and animations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgba, RgbaImage};
use snca_core::model::{alive_mask, orientation_field, ModelConfig, Variant, ALPHA};
use snca_core::seeding::hsv_to_rgb;
use snca_core::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Rgba,
    AngleField,
}

impl RenderMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgba" => Some(RenderMode::Rgba),
            "angle_field" => Some(RenderMode::AngleField),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Checker,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSpec {
    pub mode: RenderMode,
    pub background: Background,
    /// Keep every `stride`-th step when animating.
    pub stride: usize,
    /// Pixels per cell.
    pub scale: u32,
    /// Draw each alive cell's orientation as a short line on top.
    pub arrows: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            mode: RenderMode::Rgba,
            background: Background::White,
            stride: 4,
            scale: 4,
            arrows: false,
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn upscale(cells: &[[f64; 3]], h: usize, w: usize, scale: u32) -> RgbaImage {
    let s = scale.max(1);
    RgbaImage::from_fn(w as u32 * s, h as u32 * s, |px, py| {
        let c = cells[(py / s) as usize * w + (px / s) as usize];
        Rgba([to_u8(c[0]), to_u8(c[1]), to_u8(c[2]), 255])
    })
}

/// Premultiplied RGBA of sample `b` composited over the background.
pub fn render_rgba<T: Scalar>(state: &Tensor<T>, b: usize, background: Background, scale: u32) -> RgbaImage {
    let s = state.shape();
    let mut cells = Vec::with_capacity(s.height * s.width);
    for y in 0..s.height {
        for x in 0..s.width {
            let a = state.get(b, y, x, ALPHA).as_f64().clamp(0.0, 1.0);
            let bg = match background {
                Background::White => 1.0,
                Background::Checker if (x / 2 + y / 2) % 2 == 0 => 0.9,
                Background::Checker => 0.7,
            };
            let px = [0, 1, 2].map(|c| state.get(b, y, x, c).as_f64() + (1.0 - a) * bg);
            cells.push(px);
        }
    }
    upscale(&cells, s.height, s.width, scale)
}

/// Orientation of every alive cell of sample `b` as hue, with brightness
/// given by alpha. Cells without a direction (gradient variant with a
/// suppressed gradient) are gray; dead cells are white.
pub fn render_angle_field<T: Scalar>(state: &Tensor<T>, b: usize, cfg: &ModelConfig, scale: u32) -> snca_core::Result<RgbaImage> {
    let sample = state.sample(b);
    let s = sample.shape();
    let alive = alive_mask(&sample, cfg.alive_threshold);
    let (cos, sin) = orientation_field(&sample, cfg)?;
    let mut cells = Vec::with_capacity(s.height * s.width);
    for y in 0..s.height {
        for x in 0..s.width {
            if alive.get(0, y, x, 0) == T::zero() {
                cells.push([1.0; 3]);
                continue;
            }
            let v = sample.get(0, y, x, ALPHA).as_f64().clamp(0.0, 1.0);
            let (c, sn) = (cos.get(0, y, x, 0).as_f64(), sin.get(0, y, x, 0).as_f64());
            let directed = cfg.variant == Variant::Angle || c * c + sn * sn > 1e-12;
            if directed {
                cells.push(hsv_to_rgb(sn.atan2(c).to_degrees(), 1.0, v));
            } else {
                cells.push([0.5 * v; 3]);
            }
        }
    }
    Ok(upscale(&cells, s.height, s.width, scale))
}

/// Draws a line from the centre of every directed alive cell of sample 0
/// towards its orientation. Needs at least 5 pixels per cell to be legible;
/// smaller scales leave the image untouched.
pub fn overlay_arrows<T: Scalar>(img: &mut RgbaImage, state: &Tensor<T>, cfg: &ModelConfig, scale: u32) -> snca_core::Result<()> {
    if scale < 5 {
        return Ok(());
    }
    let sample = state.sample(0);
    let s = sample.shape();
    let alive = alive_mask(&sample, cfg.alive_threshold);
    let (cos, sin) = orientation_field(&sample, cfg)?;
    let half = scale as f64 / 2.0;
    for y in 0..s.height {
        for x in 0..s.width {
            let (c, sn) = (cos.get(0, y, x, 0).as_f64(), sin.get(0, y, x, 0).as_f64());
            let norm = (c * c + sn * sn).sqrt();
            if alive.get(0, y, x, 0) == T::zero() || norm < 1e-6 {
                continue;
            }
            let (cx, cy) = (x as f64 * scale as f64 + half, y as f64 * scale as f64 + half);
            let len = 0.9 * half;
            let n = (2.0 * len).ceil() as usize;
            for i in 0..=n {
                let t = len * i as f64 / n as f64;
                let (px, py) = (cx + t * c / norm, cy + t * sn / norm);
                if px >= 0.0 && py >= 0.0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, Rgba([0, 0, 0, 255]));
                }
            }
        }
    }
    Ok(())
}

pub fn render<T: Scalar>(state: &Tensor<T>, cfg: &ModelConfig, spec: &RenderSpec) -> snca_core::Result<RgbaImage> {
    let mut img = match spec.mode {
        RenderMode::Rgba => render_rgba(state, 0, spec.background, spec.scale),
        RenderMode::AngleField => render_angle_field(state, 0, cfg, spec.scale)?,
    };
    if spec.arrows {
        overlay_arrows(&mut img, state, cfg, spec.scale)?;
    }
    Ok(img)
}

pub fn write_gif(path: &Path, frames: Vec<RgbaImage>, delay_ms: u32) -> image::ImageResult<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = GifEncoder::new_with_speed(file, 10);
    enc.set_repeat(Repeat::Infinite)?;
    enc.encode_frames(
        frames
            .into_iter()
            .map(|f| Frame::from_parts(f, 0, 0, Delay::from_numer_denom_ms(delay_ms, 1))),
    )
}
