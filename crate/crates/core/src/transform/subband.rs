use super::{
    block_merge, block_split, dct8x8, idct8x8, rgb_to_ycbcr, ycbcr_to_rgb_unclamped, Blocks, ColorSpace,
    PlanarImage, SubbandMap, TransformError, IMAGE_SUBBANDS,
};

/// Pure index permutation: channel `c*64 + u*8 + v` at `(by, bx)` takes
/// `blocks[c, by, bx, u, v]`.
pub fn blocks_to_subbands(blocks: &Blocks) -> SubbandMap {
    let (rows, cols) = (blocks.rows, blocks.cols);
    let mut map = SubbandMap::zeros(blocks.channels * 64, rows, cols);
    let plane = rows * cols;
    for c in 0..blocks.channels {
        for by in 0..rows {
            for bx in 0..cols {
                let b = blocks.block(c, by, bx);
                for (f, &v) in b.iter().enumerate() {
                    map.data[(c * 64 + f) * plane + by * cols + bx] = v;
                }
            }
        }
    }
    map
}

pub fn subbands_to_blocks(map: &SubbandMap) -> Result<Blocks, TransformError> {
    if map.channels % 64 != 0 {
        return Err(TransformError::ShapeMismatch(format!("{} channels is not a multiple of 64", map.channels)));
    }
    let channels = map.channels / 64;
    let plane = map.positions();
    let mut blocks = Blocks::zeros(channels, map.rows, map.cols);
    for c in 0..channels {
        for by in 0..map.rows {
            for bx in 0..map.cols {
                let o = blocks.offset(c, by, bx);
                for f in 0..64 {
                    blocks.data[o + f] = map.data[(c * 64 + f) * plane + by * map.cols + bx];
                }
            }
        }
    }
    Ok(blocks)
}

/// RGB secret -> YCbCr -> level-shifted 8x8 blocks -> DCT -> sub-bands.
pub fn secret_to_subbands(img: &PlanarImage) -> Result<SubbandMap, TransformError> {
    if img.colorspace != ColorSpace::Rgb {
        return Err(TransformError::ShapeMismatch("secret must be an RGB image".into()));
    }
    let ycc = rgb_to_ycbcr(img);
    let blocks = block_split(&ycc)?;
    Ok(blocks_to_subbands(&dct8x8(&blocks)))
}

/// Exact inverse of [`secret_to_subbands`], no clamping.
pub fn subbands_to_secret_unclamped(map: &SubbandMap) -> Result<PlanarImage, TransformError> {
    if map.channels != IMAGE_SUBBANDS {
        return Err(TransformError::ShapeMismatch(format!("expected {IMAGE_SUBBANDS} channels, got {}", map.channels)));
    }
    let blocks = idct8x8(&subbands_to_blocks(map)?);
    let ycc = block_merge(&blocks, ColorSpace::YCbCr)?;
    Ok(ycbcr_to_rgb_unclamped(&ycc))
}

/// Inverse of [`secret_to_subbands`] with the result clamped to `[0, 255]`.
pub fn subbands_to_secret(map: &SubbandMap) -> Result<PlanarImage, TransformError> {
    let mut img = subbands_to_secret_unclamped(map)?;
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 255.0));
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_formula() {
        let mut b = Blocks::zeros(3, 1, 2);
        b.block_mut(1, 0, 1)[2 * 8 + 3] = 5.0;
        let m = blocks_to_subbands(&b);
        assert_eq!(m.channels, 192);
        assert_eq!(m.get(83, 0, 1), 5.0);
        assert_eq!(m.data.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn zero_blocks_zero_map() {
        let m = blocks_to_subbands(&Blocks::zeros(3, 2, 3));
        assert!(m.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gray_secret_is_all_zero() {
        let img = PlanarImage::filled(ColorSpace::Rgb, 16, 8, 128.0);
        let m = secret_to_subbands(&img).unwrap();
        assert!(m.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let m = SubbandMap::zeros(100, 1, 1);
        assert!(subbands_to_blocks(&m).is_err());
    }
}
