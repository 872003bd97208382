//! Mini-batch training against the Lagrangian objective, and noisy
//! evaluation.

use rand::seq::SliceRandom;

use crate::error::{NncError, Result};
use crate::metrics::{channel_utilization, psnr_from_mse, DestinationMetrics, RunMetrics, ZERO_POWER_THRESHOLD};
use crate::model::{loss_value, EndToEndModel, PowerProfile, EVAL_DRAW_BASE};
use crate::optim::{Adadelta, AdadeltaConfig};
use crate::rng::stream_rng;
use crate::tape::Mode;
use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adadelta_rho: f64,
    pub adadelta_epsilon: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 32,
            learning_rate: 1.0,
            adadelta_rho: 0.95,
            adadelta_epsilon: 1e-6,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NncError::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(NncError::config("batch_size must be >= 1"));
        }
        self.optimizer_config().validate()
    }

    pub fn optimizer_config(&self) -> AdadeltaConfig {
        AdadeltaConfig {
            learning_rate: self.learning_rate,
            rho: self.adadelta_rho,
            epsilon: self.adadelta_epsilon,
        }
    }

    /// Reduced preset for quick runs: 10 epochs over at most 10000 images.
    pub fn desk_scale(mut self) -> Self {
        self.epochs = 10;
        self
    }
}

pub const DESK_SCALE_TRAIN_IMAGES: usize = 10_000;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub distortion: f64,
    pub power: f64,
}

/// Train in place; returns the per-epoch loss trace. Fully determined by
/// (model seed, data, config): shuffling, noise draws, and updates all derive
/// from fixed streams.
pub fn train(
    model: &mut EndToEndModel,
    train_images: &Tensor,
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    if train_images.cols() != model.source_dim() {
        return Err(NncError::config(format!(
            "dataset dimension {} does not match model source dimension {}",
            train_images.cols(),
            model.source_dim()
        )));
    }
    let sizes: Vec<usize> = model
        .params()
        .iter()
        .map(|(_, t)| t.as_slice().len())
        .collect();
    let mut opt = Adadelta::new(config.optimizer_config(), &sizes)?;

    let n_examples = train_images.rows();
    let mut indices: Vec<usize> = (0..n_examples).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let mut rng = stream_rng(config.shuffle_seed, 0x5487FF1E, epoch as u64);
        indices.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        let mut epoch_distortion = 0.0;
        let mut epoch_power = 0.0;
        let mut seen = 0usize;

        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch = train_images.select_rows(chunk);
            let mut traced = model.forward_traced(&batch, Mode::Train, step)?;
            let loss = model.loss_traced(&mut traced, &batch)?;
            let total = traced.tape.value(loss.total).scalar_value().unwrap();
            if !total.is_finite() {
                return Err(NncError::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let distortion = traced.tape.value(loss.distortion).scalar_value().unwrap();
            let power = traced.tape.value(loss.power_penalty).scalar_value().unwrap();

            traced.tape.backward(loss.total)?;
            let grads: Vec<Tensor> = traced
                .param_nodes
                .iter()
                .map(|&id| traced.tape.grad(id).map(Clone::clone))
                .collect::<Result<_>>()?;
            opt.step(model.params_mut(), &grads)?;

            let w = chunk.len() as f64;
            epoch_total += total * w;
            epoch_distortion += distortion * w;
            epoch_power += power * w;
            seen += chunk.len();
            step += 1;
        }

        let w = seen as f64;
        trace.push(EpochLoss {
            epoch,
            total: epoch_total / w,
            distortion: epoch_distortion / w,
            power: epoch_power / w,
        });
    }
    Ok(trace)
}

/// Evaluate with `repetitions` fresh-noise passes over the test images.
/// Reports per-destination pSNR (pooled-MSE and mean/std over repetitions),
/// the power profile, and the objective value.
pub fn evaluate(model: &EndToEndModel, test_images: &Tensor, repetitions: usize) -> Result<RunMetrics> {
    if repetitions == 0 {
        return Err(NncError::config("repetitions must be >= 1"));
    }
    let dests: Vec<String> = model
        .topology()
        .destinations()
        .iter()
        .map(|d| d.id.clone())
        .collect();

    struct RepOutcome {
        mse_per_dest: Vec<f64>,
        profile: PowerProfile,
        loss: f64,
    }

    let run_rep = |rep: usize| -> Result<RepOutcome> {
        let draw = EVAL_DRAW_BASE + rep as u64;
        let result = model.forward(test_images, Mode::Eval, draw)?;
        let mut mse_per_dest = Vec::with_capacity(dests.len());
        for d in &dests {
            let recon = &result.reconstructions[d];
            mse_per_dest.push(crate::metrics::mse(test_images, recon)?);
        }
        let profile = PowerProfile::from_signals(&result.link_signals);
        let loss = loss_value(&result, test_images, model.topology())?;
        Ok(RepOutcome {
            mse_per_dest,
            profile,
            loss,
        })
    };

    #[cfg(feature = "parallel")]
    let outcomes: Vec<RepOutcome> = (0..repetitions)
        .into_par_iter()
        .map(run_rep)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<RepOutcome> = (0..repetitions).map(run_rep).collect::<Result<_>>()?;

    let reps = repetitions as f64;
    let peak = 1.0; // normalized pixel range
    let mut destinations = Vec::new();
    for (di, d) in dests.iter().enumerate() {
        let mses: Vec<f64> = outcomes.iter().map(|o| o.mse_per_dest[di]).collect();
        let pooled = mses.iter().sum::<f64>() / reps;
        let psnrs: Vec<f64> = mses.iter().map(|&m| psnr_from_mse(m, peak)).collect();
        let mean = psnrs.iter().sum::<f64>() / reps;
        let var = psnrs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / reps;
        destinations.push(DestinationMetrics {
            destination: d.clone(),
            psnr_db: psnr_from_mse(pooled, peak),
            psnr_std_db: var.sqrt(),
            mse: pooled,
        });
    }

    let n_channels = outcomes[0].profile.flat_channel_powers().len();
    let mut channel_powers = vec![0.0; n_channels];
    let mut total_power = 0.0;
    let mut loss_sum = 0.0;
    let mut per_link_power = vec![0.0; model.topology().links.len()];
    for o in &outcomes {
        for (acc, v) in channel_powers.iter_mut().zip(o.profile.flat_channel_powers()) {
            *acc += v / reps;
        }
        for (acc, v) in per_link_power.iter_mut().zip(&o.profile.per_link_total) {
            *acc += v / reps;
        }
        total_power += o.profile.total_per_image / reps;
        loss_sum += o.loss / reps;
    }

    let variances: Vec<f64> = model
        .topology()
        .links
        .iter()
        .flat_map(|l| std::iter::repeat(l.noise_variance).take(l.channels))
        .collect();
    let util = channel_utilization(&channel_powers, &variances, ZERO_POWER_THRESHOLD, 3.0)?;

    let power_cap_violations = model
        .topology()
        .links
        .iter()
        .zip(&per_link_power)
        .filter_map(|(l, &p)| match l.power_cap {
            Some(cap) if p > cap => Some(format!("{} power {p:.6} exceeds cap {cap}", l.key())),
            _ => None,
        })
        .collect();

    Ok(RunMetrics {
        destinations,
        total_power,
        per_channel_power: channel_powers,
        nonzero_pct: util.nonzero_pct,
        above_3db_pct: util.above_threshold_pct,
        loss: loss_sum,
        power_cap_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InnerNnSpec;
    use crate::topology::{butterfly_with_dims, chain, LambdaSpec};

    #[test]
    fn rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn one_epoch_descends_on_toy_problem() {
        let topo = chain(1, 4, 0.0, 0.0, 6);
        let mut model = EndToEndModel::compile(topo, InnerNnSpec { hidden_width: 8 }, 1).unwrap();
        let data = Tensor::from_vec(
            4,
            6,
            vec![
                0.9, 0.1, 0.9, 0.1, 0.9, 0.1, //
                0.1, 0.9, 0.1, 0.9, 0.1, 0.9, //
                0.9, 0.9, 0.1, 0.1, 0.9, 0.9, //
                0.1, 0.1, 0.9, 0.9, 0.1, 0.1,
            ],
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 4,
            ..Default::default()
        };
        let trace = train(&mut model, &data, &cfg).unwrap();
        assert!(trace.last().unwrap().total < trace[0].total);
        assert!(trace.iter().all(|e| e.total.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let topo = butterfly_with_dims(3, 1e-4, &LambdaSpec::Uniform(1e-3), [4, 4]);
            let mut model =
                EndToEndModel::compile(topo, InnerNnSpec { hidden_width: 4 }, 17).unwrap();
            let data = Tensor::from_vec(8, 8, (0..64).map(|i| (i % 7) as f64 / 7.0).collect())
                .unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 3,
                ..Default::default()
            };
            let trace = train(&mut model, &data, &cfg).unwrap();
            (trace.last().unwrap().total, model.params().to_vec())
        };
        let (la, pa) = run();
        let (lb, pb) = run();
        assert_eq!(la, lb);
        for ((_, a), (_, b)) in pa.iter().zip(pb.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_noise_evaluation_has_zero_psnr_variance() {
        let topo = butterfly_with_dims(3, 0.0, &LambdaSpec::Uniform(0.0), [4, 4]);
        let model = EndToEndModel::compile(topo, InnerNnSpec { hidden_width: 4 }, 3).unwrap();
        let data = Tensor::from_vec(5, 8, (0..40).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        let metrics = evaluate(&model, &data, 8).unwrap();
        for d in &metrics.destinations {
            assert_eq!(d.psnr_std_db, 0.0);
        }
    }

    #[test]
    fn untrained_model_close_to_constant_half_predictor() {
        // an untrained model's sigmoid outputs hover near 0.5, so its pSNR
        // should be within a few dB of the constant-0.5 predictor oracle
        let topo = butterfly_with_dims(4, 1e-4, &LambdaSpec::Uniform(0.0), [8, 8]);
        let model = EndToEndModel::compile(topo, InnerNnSpec { hidden_width: 6 }, 23).unwrap();
        let data = Tensor::from_vec(
            16,
            16,
            (0..256).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        // oracle: constant-0.5 predictor
        let half = data.map(|_| 0.5);
        let oracle = crate::metrics::psnr(&data, &half, 1.0).unwrap();
        let metrics = evaluate(&model, &data, 4).unwrap();
        for d in &metrics.destinations {
            assert!(
                (d.psnr_db - oracle).abs() < 3.0,
                "untrained psnr {} vs constant predictor {}",
                d.psnr_db,
                oracle
            );
        }
    }

    #[test]
    fn loss_trace_is_finite_and_optimizer_state_matches() {
        let topo = chain(2, 2, 1e-4, 1e-3, 4);
        let mut model = EndToEndModel::compile(topo, InnerNnSpec { hidden_width: 3 }, 29).unwrap();
        let data = Tensor::from_vec(6, 4, (0..24).map(|i| (i % 4) as f64 / 4.0).collect()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4, // last batch is partial and still used
            ..Default::default()
        };
        let trace = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(trace.len(), 2);
        assert!(trace.iter().all(|e| e.total.is_finite() && e.power.is_finite()));
    }
}
