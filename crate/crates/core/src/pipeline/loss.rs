//! Pixel-domain training losses.
//!
//! Decoding a block of coefficients to RGB is affine, so the difference of
//! two decodes is a fixed 192x192 linear map applied to the difference of the
//! coefficient vectors. The graph versions use that map; the plain versions
//! run the full decode and serve as the reference.

use super::PipelineError;
use crate::jpeg::QuantTable;
use crate::metrics::mse;
use crate::network::BRANCH_CHANNELS;
use crate::tensor::{Graph, Scalar, Tensor, TensorError, Var};
use crate::transform::{
    block_merge, idct8x8, subbands_to_blocks, ycbcr_to_rgb_unclamped, ColorSpace, PlanarImage, SubbandMap,
};

/// Unclamped RGB decode of a real-valued sub-band map with the given steps.
fn decode_unclamped(map: &SubbandMap, steps: &[[f64; 64]; 3]) -> Result<PlanarImage, PipelineError> {
    let mut blocks = subbands_to_blocks(map)?;
    if blocks.channels != 3 {
        return Err(PipelineError::SizeMismatch(format!("expected 3 colour channels, got {}", blocks.channels)));
    }
    for c in 0..3 {
        for by in 0..blocks.rows {
            for bx in 0..blocks.cols {
                for (v, s) in blocks.block_mut(c, by, bx).iter_mut().zip(&steps[c]) {
                    *v *= s;
                }
            }
        }
    }
    Ok(ycbcr_to_rgb_unclamped(&block_merge(&idct8x8(&blocks), ColorSpace::YCbCr)?))
}

fn steps_of(tables: &[QuantTable; 3]) -> [[f64; 64]; 3] {
    std::array::from_fn(|c| std::array::from_fn(|k| tables[c].natural()[k] as f64))
}

fn linear_part(steps: &[[f64; 64]; 3]) -> Vec<f64> {
    let n = BRANCH_CHANNELS;
    let zero = decode_unclamped(&SubbandMap::zeros(n, 1, 1), steps).expect("one block");
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let mut e = SubbandMap::zeros(n, 1, 1);
        e.data[k] = 1.0;
        let px = decode_unclamped(&e, steps).expect("one block");
        for (i, (a, b)) in px.data.iter().zip(&zero.data).enumerate() {
            m[i * n + k] = a - b;
        }
    }
    m
}

/// Row-major `[192, 192]` map from a difference of quantized-coefficient
/// vectors (one block, sub-band channel order) to the RGB pixel difference.
pub fn decode_matrix(tables: &[QuantTable; 3]) -> Vec<f64> {
    linear_part(&steps_of(tables))
}

/// Same as [`decode_matrix`] for secret sub-bands, which carry unquantized
/// DCT coefficients.
pub fn secret_matrix() -> Vec<f64> {
    linear_part(&[[1.0; 64]; 3])
}

/// Mean squared RGB error between the decodes of two coefficient maps,
/// without rounding or clamping.
pub fn hiding_loss(stego: &SubbandMap, cover: &SubbandMap, tables: &[QuantTable; 3]) -> Result<f64, PipelineError> {
    if stego.channels != cover.channels || stego.rows != cover.rows || stego.cols != cover.cols {
        return Err(PipelineError::SizeMismatch("stego and cover sub-band maps differ in shape".into()));
    }
    let steps = steps_of(tables);
    Ok(mse(&decode_unclamped(stego, &steps)?, &decode_unclamped(cover, &steps)?)?)
}

/// Mean squared error over RGB values.
pub fn revealing_loss(recovered: &PlanarImage, secret: &PlanarImage) -> Result<f64, PipelineError> {
    Ok(mse(recovered, secret)?)
}

fn quadratic<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var, matrix: Var) -> Result<Var, TensorError> {
    let d = g.sub(a, b)?;
    let px = g.matmul(matrix, d)?;
    let sq = g.mul(px, px)?;
    g.mean(sq)
}

/// Graph form of [`hiding_loss`]: `stego` and `cover` are `[192, P]`,
/// `decode` holds [`decode_matrix`].
pub fn hiding_loss_graph<T: Scalar>(g: &mut Graph<T>, stego: Var, cover: Var, decode: Var) -> Result<Var, TensorError> {
    quadratic(g, stego, cover, decode)
}

/// Graph form of the revealing loss on secret sub-band maps, with `matrix`
/// holding [`secret_matrix`].
pub fn revealing_loss_graph<T: Scalar>(g: &mut Graph<T>, recovered: Var, secret: Var, matrix: Var) -> Result<Var, TensorError> {
    quadratic(g, recovered, secret, matrix)
}

pub(crate) fn matrix_tensor<T: Scalar>(m: &[f64]) -> Tensor<T> {
    Tensor::from_f64(&[BRANCH_CHANNELS, BRANCH_CHANNELS], m).expect("square matrix")
}
