//! Distortion and power-allocation measurements: pSNR, MSE, and channel
//! utilization statistics.

use serde::{Deserialize, Serialize};

use crate::error::{NncError, Result};
use crate::tensor::Tensor;

/// Default power below which a channel counts as switched off. Far below the
/// usual noise floor of 1e-4 so an informative channel cannot be misread.
pub const ZERO_POWER_THRESHOLD: f64 = 1e-8;

/// Mean squared error over all entries of the batch.
pub fn mse(original: &Tensor, reconstruction: &Tensor) -> Result<f64> {
    if original.shape() != reconstruction.shape() {
        return Err(NncError::config(format!(
            "mse shape mismatch: {:?} vs {:?}",
            original.shape(),
            reconstruction.shape()
        )));
    }
    let n = original.as_slice().len() as f64;
    let sum: f64 = original
        .as_slice()
        .iter()
        .zip(reconstruction.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

/// MSE restricted to columns `[start, end)` (e.g. one half of an image).
pub fn mse_cols(original: &Tensor, reconstruction: &Tensor, start: usize, end: usize) -> Result<f64> {
    if original.shape() != reconstruction.shape() {
        return Err(NncError::config("mse_cols shape mismatch"));
    }
    if start >= end || end > original.cols() {
        return Err(NncError::config("mse_cols column range out of bounds"));
    }
    let mut sum = 0.0;
    for r in 0..original.rows() {
        for c in start..end {
            let d = original.get(r, c) - reconstruction.get(r, c);
            sum += d * d;
        }
    }
    Ok(sum / (original.rows() * (end - start)) as f64)
}

/// `10 log10(peak^2 / mse)`; the MSE is averaged over every entry before the
/// log. Zero MSE reports +inf.
pub fn psnr(original: &Tensor, reconstruction: &Tensor, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(NncError::config("psnr peak must be positive"));
    }
    let e = mse(original, reconstruction)?;
    Ok(psnr_from_mse(e, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utilization {
    /// Percentage of channels whose average power exceeds the zero threshold.
    pub nonzero_pct: f64,
    /// Percentage of channels whose SNR exceeds the dB threshold.
    pub above_threshold_pct: f64,
    /// Set when a channel carries power over a zero-variance link: its SNR is
    /// unbounded and counts as above threshold.
    pub zero_variance_flag: bool,
}

/// Table-style channel utilization: the fraction of channels carrying any
/// power, and the fraction whose SNR clears `snr_threshold_db`.
pub fn channel_utilization(
    powers: &[f64],
    noise_variances: &[f64],
    zero_threshold: f64,
    snr_threshold_db: f64,
) -> Result<Utilization> {
    if powers.len() != noise_variances.len() {
        return Err(NncError::config(
            "powers and noise_variances must have equal length",
        ));
    }
    if powers.iter().any(|&p| p < 0.0) {
        return Err(NncError::config("channel powers must be >= 0"));
    }
    if powers.is_empty() {
        return Err(NncError::config("channel_utilization of empty channel list"));
    }
    let n = powers.len() as f64;
    let mut nonzero = 0usize;
    let mut above = 0usize;
    let mut zero_var_flag = false;
    for (&p, &var) in powers.iter().zip(noise_variances) {
        if p > zero_threshold {
            nonzero += 1;
        }
        if var == 0.0 {
            if p > 0.0 {
                above += 1;
                zero_var_flag = true;
            }
        } else if 10.0 * (p / var).log10() > snr_threshold_db {
            above += 1;
        }
    }
    Ok(Utilization {
        nonzero_pct: 100.0 * nonzero as f64 / n,
        above_threshold_pct: 100.0 * above as f64 / n,
        zero_variance_flag: zero_var_flag,
    })
}

/// Per-destination distortion plus power statistics for one evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DestinationMetrics {
    pub destination: String,
    pub psnr_db: f64,
    pub psnr_std_db: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub destinations: Vec<DestinationMetrics>,
    /// Average per-image total transmitted energy summed over all links.
    pub total_power: f64,
    /// Average power of every channel in link declaration order.
    pub per_channel_power: Vec<f64>,
    pub nonzero_pct: f64,
    pub above_3db_pct: f64,
    /// Mean total training-objective loss over the evaluation.
    pub loss: f64,
    /// Links whose measured power exceeds a declared hard cap (reported, not
    /// enforced).
    pub power_cap_violations: Vec<String>,
}

impl RunMetrics {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["total_power".to_string(), "nonzero_pct".into(), "above_3db_pct".into(), "loss".into()];
        for d in &self.destinations {
            cols.push(format!("psnr_{}", d.destination));
            cols.push(format!("psnr_std_{}", d.destination));
            cols.push(format!("mse_{}", d.destination));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            format!("{:.12e}", self.total_power),
            format!("{:.6}", self.nonzero_pct),
            format!("{:.6}", self.above_3db_pct),
            format!("{:.12e}", self.loss),
        ];
        for d in &self.destinations {
            cols.push(format!("{:.8}", d.psnr_db));
            cols.push(format!("{:.8}", d.psnr_std_db));
            cols.push(format!("{:.12e}", d.mse));
        }
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_known_values() {
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-9);
        assert!(psnr_from_mse(0.0, 1.0).is_infinite());
        // constant 0.5 prediction on {0,1} pixels: mse 0.25 -> ~6.02 dB
        let orig = Tensor::from_rows(&[vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let rec = Tensor::from_rows(&[vec![0.5, 0.5, 0.5, 0.5]]).unwrap();
        let p = psnr(&orig, &rec, 1.0).unwrap();
        assert!((p - 10.0 * 4.0f64.log10()).abs() < 1e-9);
        assert!((p - 6.0206).abs() < 1e-3);
    }

    #[test]
    fn psnr_exact_reconstruction_is_infinite() {
        let t = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert!(psnr(&t, &t, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_invariant_under_joint_row_permutation() {
        let orig = Tensor::from_rows(&[vec![0.1, 0.9], vec![0.4, 0.6]]).unwrap();
        let rec = Tensor::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.5]]).unwrap();
        let p1 = psnr(&orig, &rec, 1.0).unwrap();
        let orig2 = orig.select_rows(&[1, 0]);
        let rec2 = rec.select_rows(&[1, 0]);
        let p2 = psnr(&orig2, &rec2, 1.0).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for mse in [1e-4, 1e-3, 1e-2, 1e-1] {
            let p = psnr_from_mse(mse, 1.0);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn utilization_all_zero() {
        let u = channel_utilization(&[0.0; 8], &[1e-4; 8], ZERO_POWER_THRESHOLD, 3.0).unwrap();
        assert_eq!(u.nonzero_pct, 0.0);
        assert_eq!(u.above_threshold_pct, 0.0);
    }

    #[test]
    fn snr_of_twice_noise_counts_as_above_3db() {
        // 10 log10 2 ~ 3.0103 dB > 3 dB
        let u = channel_utilization(&[2e-4], &[1e-4], ZERO_POWER_THRESHOLD, 3.0).unwrap();
        assert_eq!(u.above_threshold_pct, 100.0);
        assert_eq!(u.nonzero_pct, 100.0);
    }

    #[test]
    fn zero_variance_with_power_is_flagged() {
        let u = channel_utilization(&[1.0], &[0.0], ZERO_POWER_THRESHOLD, 3.0).unwrap();
        assert!(u.zero_variance_flag);
        assert_eq!(u.above_threshold_pct, 100.0);
    }

    #[test]
    fn nonzero_dominates_above_threshold() {
        let powers = [0.0, 5e-9, 3e-4, 2e-4, 1e-5];
        let vars = [1e-4; 5];
        let u = channel_utilization(&powers, &vars, ZERO_POWER_THRESHOLD, 3.0).unwrap();
        assert!(u.nonzero_pct >= u.above_threshold_pct);
    }

    #[test]
    fn zero_threshold_with_positive_powers_is_all_nonzero() {
        let u = channel_utilization(&[0.1, 0.2, 0.3], &[1e-4; 3], 0.0, 3.0).unwrap();
        assert_eq!(u.nonzero_pct, 100.0);
    }
}
