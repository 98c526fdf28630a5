//! Spatial images, 8x8 DCT blocks and fine-grained sub-band maps.
//!
//! A sub-band map gathers one (colour channel, DCT frequency) coefficient from
//! every 8x8 block into its own plane, so channel `k = c*64 + u*8 + v` at
//! spatial position `(by, bx)` holds `blocks[c][by][bx][u][v]`. Inter-block
//! correlation becomes spatial structure and intra-block correlation lives
//! across channels.

mod block;
mod color;
mod dct;
mod subband;

pub use block::{block_merge, block_split, Blocks};
pub use color::{rgb_to_ycbcr, rgb_to_ycbcr_pixel, ycbcr_to_rgb, ycbcr_to_rgb_pixel, ycbcr_to_rgb_unclamped};
pub use dct::{dct8x8, dct8x8_block, dct_matrix, idct8x8, idct8x8_block};
pub use subband::{
    blocks_to_subbands, secret_to_subbands, subbands_to_blocks, subbands_to_secret,
    subbands_to_secret_unclamped,
};

use thiserror::Error;

/// Number of sub-band channels describing one colour image.
pub const IMAGE_SUBBANDS: usize = 3 * 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("image dimensions {height}x{width} are not multiples of 8")]
    NotBlockAligned { height: usize, width: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
}

/// Three-plane image, channel-major, values nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    pub colorspace: ColorSpace,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PlanarImage {
    pub fn new(colorspace: ColorSpace, height: usize, width: usize, data: Vec<f64>) -> Result<Self, TransformError> {
        if data.len() != 3 * height * width {
            return Err(TransformError::ShapeMismatch(format!(
                "expected {} samples for 3x{height}x{width}, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(Self { colorspace, height, width, data })
    }

    pub fn filled(colorspace: ColorSpace, height: usize, width: usize, value: f64) -> Self {
        Self { colorspace, height, width, data: vec![value; 3 * height * width] }
    }

    /// Builds an RGB image from interleaved 8-bit samples.
    pub fn from_rgb8(height: usize, width: usize, interleaved: &[u8]) -> Result<Self, TransformError> {
        if interleaved.len() != 3 * height * width {
            return Err(TransformError::ShapeMismatch(format!(
                "expected {} interleaved bytes, got {}",
                3 * height * width,
                interleaved.len()
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in interleaved.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f64;
            }
        }
        Ok(Self { colorspace: ColorSpace::Rgb, height, width, data })
    }

    /// Interleaved 8-bit samples, rounded and clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[3 * i + c] = self.data[c * plane + i].round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &PlanarImage) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Rounds every sample to the nearest integer and clamps to `[0, 255]`.
    pub fn quantized_to_u8_levels(&self) -> PlanarImage {
        PlanarImage {
            data: self.data.iter().map(|v| v.round().clamp(0.0, 255.0)).collect(),
            ..self.clone()
        }
    }

    pub(crate) fn check_block_aligned(&self) -> Result<(), TransformError> {
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return Err(TransformError::NotBlockAligned { height: self.height, width: self.width });
        }
        Ok(())
    }
}

/// Channel-major real tensor of shape `(channels, rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandMap {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SubbandMap {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { channels, rows, cols, data: vec![0.0; channels * rows * cols] }
    }

    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TransformError> {
        if data.len() != channels * rows * cols {
            return Err(TransformError::ShapeMismatch(format!(
                "expected {} values for ({channels},{rows},{cols}), got {}",
                channels * rows * cols,
                data.len()
            )));
        }
        Ok(Self { channels, rows, cols, data })
    }

    #[inline]
    pub fn positions(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn get(&self, k: usize, by: usize, bx: usize) -> f64 {
        self.data[(k * self.rows + by) * self.cols + bx]
    }

    /// Channel-wise concatenation.
    pub fn concat(&self, other: &SubbandMap) -> Result<SubbandMap, TransformError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TransformError::ShapeMismatch(format!(
                "cannot concatenate {}x{} with {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(SubbandMap { channels: self.channels + other.channels, rows: self.rows, cols: self.cols, data })
    }

    /// Splits off channels `[at, channels)`.
    pub fn split_channels(&self, at: usize) -> (SubbandMap, SubbandMap) {
        let plane = self.positions();
        let (a, b) = self.data.split_at(at * plane);
        (
            SubbandMap { channels: at, rows: self.rows, cols: self.cols, data: a.to_vec() },
            SubbandMap { channels: self.channels - at, rows: self.rows, cols: self.cols, data: b.to_vec() },
        )
    }

    pub fn max_abs_diff(&self, other: &SubbandMap) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
