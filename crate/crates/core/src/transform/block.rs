use super::{ColorSpace, PlanarImage, TransformError};

/// Real-valued 8x8 block tensor of shape `(channels, rows, cols, 8, 8)`.
///
/// `rows`/`cols` count blocks, not pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Blocks {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { channels, rows, cols, data: vec![0.0; channels * rows * cols * 64] }
    }

    #[inline]
    pub fn offset(&self, c: usize, by: usize, bx: usize) -> usize {
        ((c * self.rows + by) * self.cols + bx) * 64
    }

    pub fn block(&self, c: usize, by: usize, bx: usize) -> &[f64] {
        let o = self.offset(c, by, bx);
        &self.data[o..o + 64]
    }

    pub fn block_mut(&mut self, c: usize, by: usize, bx: usize) -> &mut [f64] {
        let o = self.offset(c, by, bx);
        &mut self.data[o..o + 64]
    }

    pub fn block_count(&self) -> usize {
        self.channels * self.rows * self.cols
    }
}

/// Partitions an image into non-overlapping 8x8 blocks and level-shifts
/// samples by -128.
pub fn block_split(img: &PlanarImage) -> Result<Blocks, TransformError> {
    img.check_block_aligned()?;
    let (rows, cols) = (img.height / 8, img.width / 8);
    let mut out = Blocks::zeros(3, rows, cols);
    for c in 0..3 {
        for by in 0..rows {
            for bx in 0..cols {
                let o = out.offset(c, by, bx);
                for i in 0..8 {
                    for j in 0..8 {
                        out.data[o + i * 8 + j] = img.get(c, by * 8 + i, bx * 8 + j) - 128.0;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reassembles blocks into an image, undoing the -128 level shift.
pub fn block_merge(blocks: &Blocks, colorspace: ColorSpace) -> Result<PlanarImage, TransformError> {
    if blocks.channels != 3 {
        return Err(TransformError::ShapeMismatch(format!("expected 3 channels, got {}", blocks.channels)));
    }
    let (h, w) = (blocks.rows * 8, blocks.cols * 8);
    let mut img = PlanarImage::filled(colorspace, h, w, 0.0);
    for c in 0..3 {
        for by in 0..blocks.rows {
            for bx in 0..blocks.cols {
                let b = blocks.block(c, by, bx);
                for i in 0..8 {
                    for j in 0..8 {
                        img.set(c, by * 8 + i, bx * 8 + j, b[i * 8 + j] + 128.0);
                    }
                }
            }
        }
    }
    Ok(img)
}
