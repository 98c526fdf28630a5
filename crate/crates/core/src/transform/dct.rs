//! Orthonormal 2-D DCT-II on 8x8 blocks and its inverse (DCT-III).
//!
//! With orthonormal scaling the forward transform is exactly the JPEG FDCT,
//! so quantized JPEG coefficients times their quant steps live in the same
//! units as `dct8x8` output.

use std::sync::OnceLock;

use super::Blocks;

/// `m[u][x] = c(u) * cos((2x + 1) u pi / 16)`, with `c(0) = sqrt(1/8)` and
/// `c(u) = sqrt(2/8)` otherwise.
pub fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let cu = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = cu * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// `out = M * block * M^T`, row-major 8x8.
pub fn dct8x8_block(block: &[f64], out: &mut [f64]) {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    // Rows first: tmp[i][v] = sum_j block[i][j] m[v][j]
    for i in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for j in 0..8 {
                acc += block[i * 8 + j] * m[v][j];
            }
            tmp[i * 8 + v] = acc;
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for i in 0..8 {
                acc += m[u][i] * tmp[i * 8 + v];
            }
            out[u * 8 + v] = acc;
        }
    }
}

/// `out = M^T * coef * M`.
pub fn idct8x8_block(coef: &[f64], out: &mut [f64]) {
    let m = dct_matrix();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += coef[u * 8 + v] * m[v][j];
            }
            tmp[u * 8 + j] = acc;
        }
    }
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += m[u][i] * tmp[u * 8 + j];
            }
            out[i * 8 + j] = acc;
        }
    }
}

pub fn dct8x8(blocks: &Blocks) -> Blocks {
    let mut out = Blocks::zeros(blocks.channels, blocks.rows, blocks.cols);
    for (src, dst) in blocks.data.chunks_exact(64).zip(out.data.chunks_exact_mut(64)) {
        dct8x8_block(src, dst);
    }
    out
}

pub fn idct8x8(blocks: &Blocks) -> Blocks {
    let mut out = Blocks::zeros(blocks.channels, blocks.rows, blocks.cols);
    for (src, dst) in blocks.data.chunks_exact(64).zip(out.data.chunks_exact_mut(64)) {
        idct8x8_block(src, dst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_has_only_dc() {
        let mut out = [0.0; 64];
        dct8x8_block(&[8.0; 64], &mut out);
        assert!((out[0] - 64.0).abs() < 1e-12);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn basis_round_trip() {
        let mut e = [0.0; 64];
        e[2 * 8 + 3] = 1.0;
        let mut spatial = [0.0; 64];
        let mut back = [0.0; 64];
        idct8x8_block(&e, &mut spatial);
        dct8x8_block(&spatial, &mut back);
        for k in 0..64 {
            assert!((back[k] - e[k]).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn matrix_is_orthonormal() {
        let m = dct_matrix();
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..8).map(|x| m[a][x] * m[b][x]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-14);
            }
        }
    }
}
