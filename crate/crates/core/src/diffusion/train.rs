//! Stochastic gradient descent on the hierarchical objective.

use serde::{Deserialize, Serialize};

use super::loss::{hedm_input, LossWeighting};
use super::toy::ToyDenoiser;
use crate::error::{invalid, Error, Result};
use crate::grid::{upsample, Grid};
use crate::rng::Stream;
use crate::schedules::{build_shapes, karras_sigmas, ShapeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub shapes: ShapeKind,
    pub tandem_k: usize,
    pub weighting: LossWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 0,
            steps: 50,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            shapes: ShapeKind::Equal,
            tandem_k: 1,
            weighting: LossWeighting::EdmEpsilon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.steps == 0 {
            return Err(invalid("epochs, batch size and steps must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyDenoiser,
    /// Mean per-example loss of each epoch, measured before each update.
    pub losses: Vec<f64>,
}

/// Trains on `(coarse, fine)` pairs. The coarse field, bilinearly
/// up-sampled to the fine shape, is the conditioning input.
pub fn train(mut model: ToyDenoiser, pairs: &[(Grid, Grid)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = pairs.first().ok_or_else(|| invalid("training set is empty"))?;
    let full = first.1.shape();
    let mut data = Vec::with_capacity(pairs.len());
    for (i, (coarse, fine)) in pairs.iter().enumerate() {
        if fine.shape() != full || fine.channels() != model.arch().channels {
            return Err(invalid(format!(
                "pair {i}: fine grid does not match the first pair or the model"
            )));
        }
        if coarse.channels() != model.arch().cond_channels {
            return Err(invalid(format!("pair {i}: coarse grid has the wrong channel count")));
        }
        data.push((upsample(coarse, full)?, fine));
    }
    let noise = karras_sigmas(cfg.sigma_min, cfg.sigma_max, cfg.rho, cfg.steps)?;
    let shapes = build_shapes(cfg.shapes, full.h, full.w, cfg.steps, cfg.tandem_k)?;
    let sd = model.sigma_data();

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params().len()];
    for epoch in 0..cfg.epochs {
        Stream::new(cfg.seed, "shuffle", &[epoch as u64]).shuffle(&mut order);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (j, &idx) in batch.iter().enumerate() {
                let (cond, fine) = &data[idx];
                let mut rng = Stream::new(cfg.seed, "example", &[epoch as u64, b as u64, j as u64]);
                let t = rng.int_inclusive(1, cfg.steps);
                let c = hedm_input(fine, t, &noise, &shapes, &mut rng)?;
                let w = cfg.weighting.weight(c.sigma, sd);
                total += model.loss_and_grad(&c.z, c.sigma, c.shape, cond, c.eps.data(), w, &mut grad)?;
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= scale * g;
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch: epoch + 1,
                last_finite_epoch: (epoch > 0).then_some(epoch),
            });
        }
        log::debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        losses.push(mean);
    }
    Ok(TrainOutcome { model, losses })
}

/// Deterministic estimate of the objective: every step `t = 1..=T` is
/// visited `draws` times for every pair.
pub fn evaluate_loss(model: &ToyDenoiser, pairs: &[(Grid, Grid)], cfg: &TrainConfig, draws: usize) -> Result<f64> {
    let first = pairs.first().ok_or_else(|| invalid("evaluation set is empty"))?;
    let full = first.1.shape();
    let noise = karras_sigmas(cfg.sigma_min, cfg.sigma_max, cfg.rho, cfg.steps)?;
    let shapes = build_shapes(cfg.shapes, full.h, full.w, cfg.steps, cfg.tandem_k)?;
    let mut scratch = vec![0.0; model.params().len()];
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, (coarse, fine)) in pairs.iter().enumerate() {
        let cond = upsample(coarse, full)?;
        for t in 1..=cfg.steps {
            for d in 0..draws {
                let mut rng = Stream::new(cfg.seed, "evaluate", &[i as u64, t as u64, d as u64]);
                let c = hedm_input(fine, t, &noise, &shapes, &mut rng)?;
                let w = cfg.weighting.weight(c.sigma, model.sigma_data());
                total += model.loss_and_grad(&c.z, c.sigma, c.shape, &cond, c.eps.data(), w, &mut scratch)?;
                n += 1;
            }
        }
    }
    Ok(total / n as f64)
}

/// Loss curve as CSV `epoch,mean_loss`, epochs counted from 1.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}
