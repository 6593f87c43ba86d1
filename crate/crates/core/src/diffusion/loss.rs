//! Forward corruption and the hierarchical EDM objective.

use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{invalid, Result};
use crate::grid::{downsample, upsample, Grid, Shape};
use crate::rng::Stream;
use crate::schedules::{NoiseSchedule, ShapeSchedule};

/// Per-noise-level weight applied to the squared noise-prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// `(sigma^2 + sd^2) / sd^2`: the EDM data-space weight carried over to
    /// noise space, where the residual is already divided by sigma.
    EdmEpsilon,
    /// `(sigma^2 + sd^2) / (sigma * sd)^2` applied directly to the noise
    /// residual.
    EdmLambda,
    Uniform,
}

impl LossWeighting {
    pub fn weight(&self, sigma: f64, sigma_data: f64) -> f64 {
        let s2 = sigma * sigma;
        let d2 = sigma_data * sigma_data;
        match self {
            Self::EdmEpsilon => (s2 + d2) / d2,
            Self::EdmLambda => (s2 + d2) / (s2 * d2),
            Self::Uniform => 1.0,
        }
    }
}

impl std::str::FromStr for LossWeighting {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edm-epsilon" => Ok(Self::EdmEpsilon),
            "edm-lambda" => Ok(Self::EdmLambda),
            "uniform" => Ok(Self::Uniform),
            _ => Err(invalid(format!(
                "unknown loss weighting {s:?} (expected edm-epsilon, edm-lambda or uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for LossWeighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EdmEpsilon => "edm-epsilon",
            Self::EdmLambda => "edm-lambda",
            Self::Uniform => "uniform",
        })
    }
}

/// How noise is mixed into the down-sampled signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionLaw {
    /// `z = D(x0) + sigma * eps`
    VarianceExploding,
    /// `z = sqrt(abar) D(x0) + sqrt(1 - abar) eps` with `abar = 1 / (1 + sigma^2)`
    VariancePreserving,
}

/// `abar_t = 1 / (1 + sigma_t^2)`, the variance-preserving signal fraction
/// that matches a variance-exploding level `sigma_t`.
pub fn alpha_bar(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    /// Latent at the step's native shape.
    pub z: Grid,
    /// The standard-normal draw, same shape as `z`.
    pub eps: Grid,
    pub sigma: f64,
    pub shape: Shape,
}

fn noise_like(g: &Grid, rng: &mut Stream) -> Grid {
    let mut eps = vec![0.0; g.data().len()];
    rng.fill_normal(&mut eps);
    Grid::from_parts_unchecked(g.shape(), g.channel_names().to_vec(), g.extent(), eps)
}

fn check_step(x0: &Grid, t: usize, noise: &NoiseSchedule, shapes: &ShapeSchedule) -> Result<(f64, Shape)> {
    if noise.len() != shapes.len() {
        return Err(invalid(format!(
            "noise schedule has {} steps but shape schedule has {}",
            noise.len(),
            shapes.len()
        )));
    }
    if x0.shape() != shapes.full() {
        return Err(invalid(format!(
            "data shape {} differs from schedule full shape {}",
            x0.shape(),
            shapes.full()
        )));
    }
    Ok((noise.sigma_at(t)?, shapes.shape_at(t)?))
}

/// Forward corruption to step `t`: down-sample to `s_t`, then add noise at
/// that shape.
pub fn corrupt(
    x0: &Grid,
    t: usize,
    noise: &NoiseSchedule,
    shapes: &ShapeSchedule,
    law: CorruptionLaw,
    rng: &mut Stream,
) -> Result<Corrupted> {
    let (sigma, shape) = check_step(x0, t, noise, shapes)?;
    let xt = downsample(x0, shape)?;
    let eps = noise_like(&xt, rng);
    let (a, b) = match law {
        CorruptionLaw::VarianceExploding => (1.0, sigma),
        CorruptionLaw::VariancePreserving => {
            let ab = alpha_bar(sigma);
            (ab.sqrt(), (1.0 - ab).sqrt())
        }
    };
    let z = xt.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Ok(Corrupted {
        z: xt.with_data(z)?,
        eps,
        sigma,
        shape,
    })
}

/// Network input and target of the objective at step `t`:
/// `U(D(x0, s_t)) + sigma_t * eps` with `eps` drawn at full resolution.
pub fn hedm_input(
    x0: &Grid,
    t: usize,
    noise: &NoiseSchedule,
    shapes: &ShapeSchedule,
    rng: &mut Stream,
) -> Result<Corrupted> {
    let (sigma, shape) = check_step(x0, t, noise, shapes)?;
    let base = upsample(&downsample(x0, shape)?, x0.shape())?;
    let eps = noise_like(&base, rng);
    let z = base.data().iter().zip(eps.data()).map(|(x, e)| x + sigma * e).collect();
    Ok(Corrupted {
        z: base.with_data(z)?,
        eps,
        sigma,
        shape,
    })
}

/// One-draw estimate of the weighted objective at step `t`:
/// `w(sigma_t) * mean((eps - f(U(D(x0)) + sigma_t eps, sigma_t, s_t))^2)`.
#[allow(clippy::too_many_arguments)]
pub fn hedm_loss<D: Denoiser + ?Sized>(
    f: &D,
    x0: &Grid,
    cond: &Grid,
    t: usize,
    noise: &NoiseSchedule,
    shapes: &ShapeSchedule,
    weighting: LossWeighting,
    sigma_data: f64,
    rng: &mut Stream,
) -> Result<f64> {
    if cond.shape() != x0.shape() {
        return Err(invalid(format!(
            "conditioning shape {} differs from data shape {}",
            cond.shape(),
            x0.shape()
        )));
    }
    let c = hedm_input(x0, t, noise, shapes, rng)?;
    let pred = f.predict(&c.z, c.sigma, c.shape, cond)?;
    if pred.data().len() != c.eps.data().len() {
        return Err(invalid("denoiser output does not match the data layout"));
    }
    let n = c.eps.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(c.eps.data())
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        / n;
    Ok(weighting.weight(c.sigma, sigma_data) * mse)
}
