use super::{CoefficientImage, JpegError, QuantTable, AC_RANGE, DC_RANGE};
use crate::transform::Blocks;

/// Annex K luminance table, natural order.
pub const STD_LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural order.
pub const STD_CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scales the Annex K tables to a quality factor using the conventional
/// IJG rule, clamping entries to `[1, 255]`. Returns `(luma, chroma)`.
pub fn make_quant_tables(qf: u32) -> Result<(QuantTable, QuantTable), JpegError> {
    if !(1..=100).contains(&qf) {
        return Err(JpegError::InvalidQuality(qf));
    }
    let scale = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
    let scale_table = |base: &[u16; 64]| {
        QuantTable(std::array::from_fn(|i| ((base[i] as u32 * scale + 50) / 100).clamp(1, 255) as u16))
    };
    Ok((scale_table(&STD_LUMA_QUANT), scale_table(&STD_CHROMA_QUANT)))
}

/// Multiplies every coefficient by its quant step.
pub fn dequantize(coefs: &CoefficientImage, tables: &[QuantTable; 3]) -> Blocks {
    let mut out = Blocks::zeros(3, coefs.rows, coefs.cols);
    for c in 0..3 {
        let q = tables[c].natural();
        for by in 0..coefs.rows {
            for bx in 0..coefs.cols {
                let src = coefs.block(c, by, bx);
                let dst = out.block_mut(c, by, bx);
                for k in 0..64 {
                    dst[k] = src[k] as f64 * q[k] as f64;
                }
            }
        }
    }
    out
}

/// Divides by the quant step, rounds half away from zero and clamps to the
/// baseline-encodable ranges.
pub fn quantize(blocks: &Blocks, tables: &[QuantTable; 3]) -> Result<CoefficientImage, JpegError> {
    if blocks.channels != 3 {
        return Err(JpegError::ShapeMismatch(format!("expected 3 channels, got {}", blocks.channels)));
    }
    let mut out = CoefficientImage::zeros(blocks.rows, blocks.cols, [0, 1, 1]);
    for c in 0..3 {
        let q = tables[c].natural();
        for by in 0..blocks.rows {
            for bx in 0..blocks.cols {
                let src = blocks.block(c, by, bx);
                let dst = out.block_mut(c, by, bx);
                for k in 0..64 {
                    let (lo, hi) = if k == 0 { DC_RANGE } else { AC_RANGE };
                    // f64::round rounds half away from zero.
                    dst[k] = (src[k] / q[k] as f64).round().clamp(lo as f64, hi as f64) as i16;
                }
            }
        }
    }
    Ok(out)
}
