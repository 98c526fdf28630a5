//! Hiding and revealing on real JPEG files, the training objective, the
//! training loop and dataset preparation.
//!
//! The cover enters the network as its quantized coefficients (one sub-band
//! channel per colour and frequency), the secret as the DCT of its YCbCr
//! planes. The stego sub-band map leaving the network is rounded to integers
//! and written back with the cover's quantization tables.

mod dataset;
mod loss;
mod train;

pub use dataset::{center_crop_window, prepare_dataset, read_rgb_image, write_png, Dataset, LoadedPair, PairEntry, PrepareSummary, MANIFEST};
pub use loss::{decode_matrix, hiding_loss, hiding_loss_graph, revealing_loss, revealing_loss_graph, secret_matrix};
pub use train::{train, EpochRecord, PlateauScheduler, TrainConfig, TrainOutcome, CHECKPOINT_NAME, LOG_NAME};

use crate::jpeg::{CoefficientImage, JpegError, JpegFile, QuantTable, AC_RANGE, DC_RANGE};
use crate::metrics::{psnr, MetricsError, Psnr};
use crate::network::{EfdrModel, NetworkError, BRANCH_CHANNELS};
use crate::tensor::Scalar;
use crate::transform::{
    block_merge, blocks_to_subbands, idct8x8, secret_to_subbands, subbands_to_blocks, subbands_to_secret, Blocks,
    ColorSpace, PlanarImage, SubbandMap, TransformError, ycbcr_to_rgb,
};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// Output of [`hide`].
#[derive(Debug, Clone)]
pub struct StegoResult {
    pub stego_jpeg: JpegFile,
    pub r_f: SubbandMap,
    /// Cover vs stego before the stego coefficients are rounded.
    pub prequant_psnr: Psnr,
    /// Cover vs stego after rounding and clamping.
    pub postquant_psnr: Psnr,
}

/// Quantized coefficients as a 192-channel sub-band map.
pub fn coefficients_to_subbands(coefs: &CoefficientImage) -> SubbandMap {
    let blocks = Blocks { channels: 3, rows: coefs.rows, cols: coefs.cols, data: coefs.data.iter().map(|&v| v as f64).collect() };
    blocks_to_subbands(&blocks)
}

/// Rounds half away from zero and clamps to the baseline coefficient ranges.
pub fn subbands_to_coefficients(map: &SubbandMap, quant_tables_by_channel: [u8; 3]) -> Result<CoefficientImage, PipelineError> {
    if map.channels != BRANCH_CHANNELS {
        return Err(PipelineError::SizeMismatch(format!("expected {BRANCH_CHANNELS} channels, got {}", map.channels)));
    }
    let blocks = subbands_to_blocks(map)?;
    let data = blocks
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = if i % 64 == 0 { DC_RANGE } else { AC_RANGE };
            if v.is_nan() {
                0
            } else {
                v.round().clamp(lo as f64, hi as f64) as i16
            }
        })
        .collect();
    Ok(CoefficientImage { rows: map.rows, cols: map.cols, data, quant_tables_by_channel })
}

/// Pixel decode of real-valued coefficients: dequantize, inverse DCT, colour
/// conversion, clamp to `[0, 255]`, no rounding.
pub fn decode_continuous(map: &SubbandMap, tables: &[QuantTable; 3]) -> Result<PlanarImage, PipelineError> {
    let mut blocks = subbands_to_blocks(map)?;
    if blocks.channels != 3 {
        return Err(PipelineError::SizeMismatch(format!("expected 3 colour channels, got {}", blocks.channels)));
    }
    for c in 0..3 {
        let q = tables[c].natural();
        for by in 0..blocks.rows {
            for bx in 0..blocks.cols {
                for (v, &s) in blocks.block_mut(c, by, bx).iter_mut().zip(q) {
                    *v *= s as f64;
                }
            }
        }
    }
    let ycc = block_merge(&idct8x8(&blocks), ColorSpace::YCbCr)?;
    Ok(ycbcr_to_rgb(&ycc))
}

fn check_pair(cover: &JpegFile, secret: &PlanarImage) -> Result<(), PipelineError> {
    if secret.colorspace != ColorSpace::Rgb {
        return Err(PipelineError::SizeMismatch("secret must be an RGB image".into()));
    }
    if cover.height != secret.height || cover.width != secret.width {
        return Err(PipelineError::SizeMismatch(format!(
            "cover is {}x{}, secret is {}x{}",
            cover.height, cover.width, secret.height, secret.width
        )));
    }
    Ok(())
}

/// Embeds `secret` into the coefficients of `cover`.
pub fn hide<T: Scalar>(cover: &JpegFile, secret: &PlanarImage, model: &EfdrModel<T>) -> Result<StegoResult, PipelineError> {
    check_pair(cover, secret)?;
    let cover_map = coefficients_to_subbands(&cover.coefficients);
    let secret_map = secret_to_subbands(secret)?;
    let (stego_map, r_f) = model.forward(&cover_map, &secret_map)?;
    let coefs = subbands_to_coefficients(&stego_map, cover.coefficients.quant_tables_by_channel)?;
    let stego_jpeg = cover.with_coefficients(coefs.data)?;
    let tables = cover.channel_quants();
    let cover_px = decode_continuous(&cover_map, &tables)?;
    let pre_px = decode_continuous(&stego_map, &tables)?;
    let post_px = decode_continuous(&coefficients_to_subbands(&stego_jpeg.coefficients), &tables)?;
    Ok(StegoResult {
        stego_jpeg,
        r_f,
        prequant_psnr: psnr(&cover_px, &pre_px)?,
        postquant_psnr: psnr(&cover_px, &post_px)?,
    })
}

/// Recovers the secret from a stego file using `aux` in place of `r_f`.
pub fn reveal_with_aux<T: Scalar>(stego: &JpegFile, aux: &SubbandMap, model: &EfdrModel<T>) -> Result<PlanarImage, PipelineError> {
    let map = coefficients_to_subbands(&stego.coefficients);
    let (_, secret) = model.inverse(&map, aux)?;
    Ok(subbands_to_secret(&secret)?)
}

/// Recovers the secret from the stego file alone, with an all-zero
/// auxiliary input.
pub fn reveal<T: Scalar>(stego: &JpegFile, model: &EfdrModel<T>) -> Result<PlanarImage, PipelineError> {
    let c = &stego.coefficients;
    reveal_with_aux(stego, &SubbandMap::zeros(BRANCH_CHANNELS, c.rows, c.cols), model)
}
