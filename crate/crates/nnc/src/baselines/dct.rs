//! Reference compressor for the separation baseline: 8x8 block DCT, uniform
//! quantization, and an empirical-entropy size estimate. Not a bit-exact
//! codec; it only has to produce realistic compressed sizes so the separation
//! pipeline runs without external measurements.

use std::collections::HashMap;

use crate::error::{NncError, Result};
use crate::tensor::Tensor;

pub const BLOCK: usize = 8;

#[derive(Debug, Clone, Copy)]
pub struct DctCompressorConfig {
    /// Uniform quantizer step applied to every DCT coefficient.
    pub quant_step: f64,
    /// Fixed container cost (headers, quantization tables) in bytes.
    pub container_overhead_bytes: f64,
}

impl Default for DctCompressorConfig {
    fn default() -> Self {
        DctCompressorConfig {
            quant_step: 0.01,
            container_overhead_bytes: 200.0,
        }
    }
}

/// Orthonormal DCT-II basis matrix, row k = frequency k.
fn dct_matrix() -> [[f64; BLOCK]; BLOCK] {
    let mut m = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in m.iter_mut().enumerate() {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = scale
                * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
        }
    }
    m
}

/// 2D DCT of one 8x8 block: M * B * M^T.
pub fn dct2_block(block: &[[f64; BLOCK]; BLOCK]) -> [[f64; BLOCK]; BLOCK] {
    let m = dct_matrix();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for k in 0..BLOCK {
        for j in 0..BLOCK {
            tmp[k][j] = (0..BLOCK).map(|i| m[k][i] * block[i][j]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for k in 0..BLOCK {
        for l in 0..BLOCK {
            out[k][l] = (0..BLOCK).map(|j| tmp[k][j] * m[l][j]).sum();
        }
    }
    out
}

/// Inverse 2D DCT: M^T * C * M.
pub fn idct2_block(coeffs: &[[f64; BLOCK]; BLOCK]) -> [[f64; BLOCK]; BLOCK] {
    let m = dct_matrix();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for l in 0..BLOCK {
            tmp[i][l] = (0..BLOCK).map(|k| m[k][i] * coeffs[k][l]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for i in 0..BLOCK {
        for j in 0..BLOCK {
            out[i][j] = (0..BLOCK).map(|l| tmp[i][l] * m[l][j]).sum();
        }
    }
    out
}

/// Quantized coefficients of an image padded to 8x8 blocks by edge
/// replication.
fn quantized_symbols(pixels: &[f64], height: usize, width: usize, step: f64) -> Vec<i64> {
    let bh = height.div_ceil(BLOCK);
    let bw = width.div_ceil(BLOCK);
    let mut symbols = Vec::with_capacity(bh * bw * BLOCK * BLOCK);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [[0.0; BLOCK]; BLOCK];
            for (i, row) in block.iter_mut().enumerate() {
                let y = (by * BLOCK + i).min(height - 1);
                for (j, v) in row.iter_mut().enumerate() {
                    let x = (bx * BLOCK + j).min(width - 1);
                    *v = pixels[y * width + x];
                }
            }
            let coeffs = dct2_block(&block);
            for row in &coeffs {
                for &c in row {
                    symbols.push((c / step).round() as i64);
                }
            }
        }
    }
    symbols
}

fn empirical_entropy_bits(symbols: &[i64]) -> f64 {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &s in symbols {
        *counts.entry(s).or_insert(0) += 1;
    }
    let n = symbols.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h * n
}

/// Estimated compressed size in bytes of one image given as a row-major
/// `height x width` pixel slice in [0, 1].
pub fn estimate_size_bytes(
    pixels: &[f64],
    height: usize,
    width: usize,
    config: &DctCompressorConfig,
) -> Result<f64> {
    if height == 0 || width == 0 || pixels.len() != height * width {
        return Err(NncError::config(format!(
            "pixel buffer of {} values does not match {height}x{width}",
            pixels.len()
        )));
    }
    if config.quant_step <= 0.0 || !config.quant_step.is_finite() {
        return Err(NncError::config("quantizer step must be positive"));
    }
    let symbols = quantized_symbols(pixels, height, width, config.quant_step);
    let payload_bits = empirical_entropy_bits(&symbols);
    let n_blocks = (height.div_ceil(BLOCK) * width.div_ceil(BLOCK)) as f64;
    // 16 bits of per-block framing approximates DC prediction + EOB markers
    let bits = payload_bits + 16.0 * n_blocks;
    Ok(bits / 8.0 + config.container_overhead_bytes)
}

/// Per-image size estimates for a batch whose rows are `height x width`
/// images.
pub fn estimate_sizes(
    batch: &Tensor,
    height: usize,
    width: usize,
    config: &DctCompressorConfig,
) -> Result<Vec<f64>> {
    if batch.cols() != height * width {
        return Err(NncError::config(format!(
            "batch width {} does not match {height}x{width} images",
            batch.cols()
        )));
    }
    (0..batch.rows())
        .map(|r| estimate_size_bytes(batch.row(r), height, width, config))
        .collect()
}

pub fn mean_size_bytes(
    batch: &Tensor,
    height: usize,
    width: usize,
    config: &DctCompressorConfig,
) -> Result<f64> {
    let sizes = estimate_sizes(batch, height, width, config)?;
    Ok(sizes.iter().sum::<f64>() / sizes.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_matrix_is_orthonormal() {
        let m = dct_matrix();
        for a in 0..BLOCK {
            for b in 0..BLOCK {
                let dot: f64 = (0..BLOCK).map(|i| m[a][i] * m[b][i]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "rows {a},{b}: {dot}");
            }
        }
    }

    #[test]
    fn dct_round_trips() {
        let mut block = [[0.0; BLOCK]; BLOCK];
        for (i, row) in block.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ((i * 13 + j * 7) % 11) as f64 / 11.0;
            }
        }
        let back = idct2_block(&dct2_block(&block));
        for i in 0..BLOCK {
            for j in 0..BLOCK {
                assert!((back[i][j] - block[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_energy_is_preserved() {
        let mut block = [[0.0; BLOCK]; BLOCK];
        for (i, row) in block.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (i as f64 - j as f64) / 8.0;
            }
        }
        let coeffs = dct2_block(&block);
        let e_in: f64 = block.iter().flatten().map(|v| v * v).sum();
        let e_out: f64 = coeffs.iter().flatten().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-12);
    }

    #[test]
    fn constant_block_has_only_dc() {
        let block = [[0.6; BLOCK]; BLOCK];
        let coeffs = dct2_block(&block);
        assert!((coeffs[0][0] - 0.6 * 8.0).abs() < 1e-12);
        for (k, row) in coeffs.iter().enumerate() {
            for (l, &c) in row.iter().enumerate() {
                if (k, l) != (0, 0) {
                    assert!(c.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn coarser_quantization_never_costs_more() {
        let pixels: Vec<f64> = (0..392).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let fine = estimate_size_bytes(
            &pixels,
            28,
            14,
            &DctCompressorConfig { quant_step: 0.005, container_overhead_bytes: 0.0 },
        )
        .unwrap();
        let coarse = estimate_size_bytes(
            &pixels,
            28,
            14,
            &DctCompressorConfig { quant_step: 0.1, container_overhead_bytes: 0.0 },
        )
        .unwrap();
        assert!(coarse <= fine, "coarse {coarse} > fine {fine}");
    }

    #[test]
    fn blank_image_costs_little_more_than_overhead() {
        let pixels = vec![0.0; 392];
        let size =
            estimate_size_bytes(&pixels, 28, 14, &DctCompressorConfig::default()).unwrap();
        // all-zero symbols: payload entropy 0, only framing + container left
        let frames = (28f64 / 8.0).ceil() * (14f64 / 8.0).ceil() * 16.0 / 8.0;
        assert!((size - 200.0 - frames).abs() < 1e-9, "{size}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let pixels = vec![0.0; 10];
        assert!(estimate_size_bytes(&pixels, 28, 14, &DctCompressorConfig::default()).is_err());
    }
}
