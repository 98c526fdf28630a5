//! Baseline JPEG parsing and coefficient-exact re-encoding.
//!
//! Only baseline sequential, 8-bit, Huffman-coded, three-component 4:4:4
//! files with block-aligned dimensions are accepted; anything else is
//! rejected with [`JpegError::UnsupportedFormat`]. Parsing stops at the
//! quantized DCT coefficients, and serialization writes those coefficients
//! back with freshly optimized Huffman tables, so no pixel-domain round trip
//! ever happens.

mod decoder;
mod encoder;
mod huffman;
mod pixels;
mod quant;

pub use decoder::parse;
pub use encoder::serialize;
pub use huffman::HuffmanSpec;
pub use pixels::{decode_coefficients_rgb, decode_rgb, encode_rgb};
pub use quant::{dequantize, make_quant_tables, quantize, STD_CHROMA_QUANT, STD_LUMA_QUANT};

use thiserror::Error;

/// `ZIGZAG[i]` is the natural (row-major) index of the i-th zig-zag coefficient.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14,
    21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53,
    60, 61, 54, 47, 55, 62, 63,
];

/// Smallest and largest DC value whose differences always fit the eleven
/// baseline DC categories.
pub const DC_RANGE: (i16, i16) = (-1024, 1023);
/// AC values must fit the ten baseline AC categories.
pub const AC_RANGE: (i16, i16) = (-1023, 1023);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JpegError {
    #[error("unsupported JPEG: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt JPEG stream: {0}")]
    CorruptStream(String),
    #[error("truncated JPEG file")]
    TruncatedFile,
    #[error("coefficient not encodable in baseline JPEG: {0}")]
    Encodability(String),
    #[error("quality factor {0} outside 1..=100")]
    InvalidQuality(u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// 64 quantization steps in natural (row-major) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantTable(pub [u16; 64]);

impl QuantTable {
    pub fn natural(&self) -> &[u16; 64] {
        &self.0
    }

    pub fn zigzag(&self) -> [u16; 64] {
        let mut out = [0u16; 64];
        for (i, &n) in ZIGZAG.iter().enumerate() {
            out[i] = self.0[n];
        }
        out
    }

    pub fn from_zigzag(zz: &[u16; 64]) -> Self {
        let mut nat = [0u16; 64];
        for (i, &n) in ZIGZAG.iter().enumerate() {
            nat[n] = zz[i];
        }
        Self(nat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub id: u8,
    pub quant_table: u8,
    pub dc_table: u8,
    pub ac_table: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HuffmanTables {
    pub dc: [Option<HuffmanSpec>; 4],
    pub ac: [Option<HuffmanSpec>; 4],
}

/// Quantized DCT coefficients of a 4:4:4 colour image, natural order within
/// each block, laid out as `(3, rows, cols, 64)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientImage {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i16>,
    /// Quant table slot used by each of the three channels.
    pub quant_tables_by_channel: [u8; 3],
}

impl CoefficientImage {
    pub fn zeros(rows: usize, cols: usize, quant_tables_by_channel: [u8; 3]) -> Self {
        Self { rows, cols, data: vec![0; 3 * rows * cols * 64], quant_tables_by_channel }
    }

    #[inline]
    pub fn offset(&self, c: usize, by: usize, bx: usize) -> usize {
        ((c * self.rows + by) * self.cols + bx) * 64
    }

    pub fn block(&self, c: usize, by: usize, bx: usize) -> &[i16] {
        let o = self.offset(c, by, bx);
        &self.data[o..o + 64]
    }

    pub fn block_mut(&mut self, c: usize, by: usize, bx: usize) -> &mut [i16] {
        let o = self.offset(c, by, bx);
        &mut self.data[o..o + 64]
    }

    /// First coefficient (in natural order) that violates the baseline ranges.
    pub fn find_out_of_range(&self) -> Option<(usize, i16)> {
        self.data.iter().enumerate().find_map(|(i, &v)| {
            let (lo, hi) = if i % 64 == 0 { DC_RANGE } else { AC_RANGE };
            (v < lo || v > hi).then_some((i, v))
        })
    }
}

/// A parsed baseline JPEG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JpegFile {
    pub width: usize,
    pub height: usize,
    pub components: [Component; 3],
    pub quant_tables: [Option<QuantTable>; 4],
    pub huff_tables: HuffmanTables,
    pub restart_interval: Option<u16>,
    pub coefficients: CoefficientImage,
}

impl JpegFile {
    /// Builds a file around freshly produced coefficients, with component ids
    /// 1..=3, luma using table slot 0 and chroma slot 1.
    pub fn from_coefficients(
        coefficients: CoefficientImage,
        luma: QuantTable,
        chroma: QuantTable,
    ) -> Self {
        let mut quant_tables = [None; 4];
        quant_tables[0] = Some(luma);
        quant_tables[1] = Some(chroma);
        let comp = |id, t| Component { id, quant_table: t, dc_table: t, ac_table: t };
        let coefficients = CoefficientImage { quant_tables_by_channel: [0, 1, 1], ..coefficients };
        Self {
            width: coefficients.cols * 8,
            height: coefficients.rows * 8,
            components: [comp(1, 0), comp(2, 1), comp(3, 1)],
            quant_tables,
            huff_tables: HuffmanTables::default(),
            restart_interval: None,
            coefficients,
        }
    }

    /// Quant table applied to channel `c`.
    pub fn channel_quant(&self, c: usize) -> &QuantTable {
        let slot = self.components[c].quant_table as usize;
        self.quant_tables[slot].as_ref().expect("parser guarantees referenced tables exist")
    }

    pub fn channel_quants(&self) -> [QuantTable; 3] {
        [*self.channel_quant(0), *self.channel_quant(1), *self.channel_quant(2)]
    }

    /// Replaces the coefficients, keeping every table and header field.
    pub fn with_coefficients(&self, data: Vec<i16>) -> Result<JpegFile, JpegError> {
        if data.len() != self.coefficients.data.len() {
            return Err(JpegError::ShapeMismatch(format!(
                "expected {} coefficients, got {}",
                self.coefficients.data.len(),
                data.len()
            )));
        }
        let mut out = self.clone();
        out.coefficients.data = data;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zigzag_is_a_permutation() {
        let mut seen = [false; 64];
        for &i in &ZIGZAG {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }

    #[test]
    fn quant_table_order_round_trip() {
        let t = QuantTable(std::array::from_fn(|i| i as u16 + 1));
        assert_eq!(QuantTable::from_zigzag(&t.zigzag()), t);
        assert_eq!(t.zigzag()[2], 9);
    }
}
