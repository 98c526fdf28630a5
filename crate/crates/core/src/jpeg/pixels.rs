use super::{dequantize, make_quant_tables, quantize, CoefficientImage, JpegError, JpegFile, QuantTable};
use crate::transform::{
    block_merge, block_split, dct8x8, idct8x8, rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, PlanarImage,
};

/// Decodes coefficients to RGB the way a conformant decoder does: YCbCr
/// samples are rounded and clamped to 8 bits before colour conversion, and
/// the RGB result is rounded and clamped again.
pub fn decode_coefficients_rgb(coefs: &CoefficientImage, tables: &[QuantTable; 3]) -> PlanarImage {
    let blocks = idct8x8(&dequantize(coefs, tables));
    let mut ycc = block_merge(&blocks, ColorSpace::YCbCr).expect("three channels");
    ycc.data.iter_mut().for_each(|v| *v = v.round().clamp(0.0, 255.0));
    let mut rgb = ycbcr_to_rgb(&ycc);
    rgb.data.iter_mut().for_each(|v| *v = v.round());
    rgb
}

pub fn decode_rgb(file: &JpegFile) -> PlanarImage {
    decode_coefficients_rgb(&file.coefficients, &file.channel_quants())
}

/// Compresses an RGB image into a baseline 4:4:4 file at quality `qf`.
pub fn encode_rgb(img: &PlanarImage, qf: u32) -> Result<JpegFile, JpegError> {
    let (luma, chroma) = make_quant_tables(qf)?;
    let blocks = block_split(&rgb_to_ycbcr(img)).map_err(|e| JpegError::ShapeMismatch(e.to_string()))?;
    let coefs = quantize(&dct8x8(&blocks), &[luma, chroma, chroma])?;
    Ok(JpegFile::from_coefficients(coefs, luma, chroma))
}
