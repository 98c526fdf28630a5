//! Full-range BT.601 colour conversion as used by JFIF.
//!
//! The inverse coefficients are derived from the same luma weights as the
//! forward ones, so the two maps are exact inverses up to rounding in f64.

use super::{ColorSpace, PlanarImage};

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;
const CB_SCALE: f64 = 2.0 * (1.0 - KB);
const CR_SCALE: f64 = 2.0 * (1.0 - KR);

#[inline]
pub fn rgb_to_ycbcr_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    [y, (b - y) / CB_SCALE + 128.0, (r - y) / CR_SCALE + 128.0]
}

#[inline]
pub fn ycbcr_to_rgb_pixel([y, cb, cr]: [f64; 3]) -> [f64; 3] {
    let cb = cb - 128.0;
    let cr = cr - 128.0;
    let r = y + CR_SCALE * cr;
    let b = y + CB_SCALE * cb;
    let g = (y - KR * r - KB * b) / KG;
    [r, g, b]
}

fn map_pixels(img: &PlanarImage, f: impl Fn([f64; 3]) -> [f64; 3]) -> Vec<f64> {
    let plane = img.height * img.width;
    let mut out = vec![0.0; img.data.len()];
    for i in 0..plane {
        let p = f([img.data[i], img.data[plane + i], img.data[2 * plane + i]]);
        out[i] = p[0];
        out[plane + i] = p[1];
        out[2 * plane + i] = p[2];
    }
    out
}

pub fn rgb_to_ycbcr(img: &PlanarImage) -> PlanarImage {
    debug_assert_eq!(img.colorspace, ColorSpace::Rgb);
    PlanarImage { colorspace: ColorSpace::YCbCr, height: img.height, width: img.width, data: map_pixels(img, rgb_to_ycbcr_pixel) }
}

/// Inverse conversion without clamping; used where the result must stay
/// differentiable or exactly invertible.
pub fn ycbcr_to_rgb_unclamped(img: &PlanarImage) -> PlanarImage {
    debug_assert_eq!(img.colorspace, ColorSpace::YCbCr);
    PlanarImage { colorspace: ColorSpace::Rgb, height: img.height, width: img.width, data: map_pixels(img, ycbcr_to_rgb_pixel) }
}

/// Inverse conversion, clamped to `[0, 255]`.
pub fn ycbcr_to_rgb(img: &PlanarImage) -> PlanarImage {
    let mut out = ycbcr_to_rgb_unclamped(img);
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    out
}
