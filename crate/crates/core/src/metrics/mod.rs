//! Image-quality measures over 8-bit-range RGB images.

mod eval;

pub use eval::{evaluate_pairs, write_csv, write_json, EvalRow, EvalTable, CSV_HEADER};

use crate::transform::PlanarImage;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall { height: usize, width: usize },
}

/// Peak signal-to-noise ratio; equal inputs have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }

    pub fn is_identical(self) -> bool {
        self == Psnr::Identical
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.4}"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityReport {
    pub psnr: Psnr,
    pub ssim: f64,
    pub apd: f64,
}

fn check(a: &PlanarImage, b: &PlanarImage) -> Result<(), MetricsError> {
    if !a.same_shape(b) || a.data.len() != b.data.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn mse(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricsError> {
    check(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(255² / MSE)` over all channels.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<Psnr, MetricsError> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / m).log10()))
}

/// Mean absolute difference in 8-bit levels.
pub fn apd(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricsError> {
    check(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

/// Normalized 1-D Gaussian taps of length [`SSIM_WINDOW`].
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable filtering keeping only fully covered positions.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|k| taps[k] * horiz[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with an 11x11 Gaussian window (σ = 1.5), evaluated
/// at every fully contained window position and averaged over positions and
/// channels.
pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64, MetricsError> {
    check(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall { height: h, width: w });
    }
    let taps = gaussian_window();
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x = &a.data[c * plane..(c + 1) * plane];
        let y = &b.data[c * plane..(c + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(x, h, w, &taps);
        let (my, _, _) = filter_valid(y, h, w, &taps);
        let (exx, _, _) = filter_valid(&xx, h, w, &taps);
        let (eyy, _, _) = filter_valid(&yy, h, w, &taps);
        let (exy, _, _) = filter_valid(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

pub fn quality(a: &PlanarImage, b: &PlanarImage) -> Result<QualityReport, MetricsError> {
    Ok(QualityReport { psnr: psnr(a, b)?, ssim: ssim(a, b)?, apd: apd(a, b)? })
}
