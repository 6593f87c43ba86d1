//! Exact denoiser for isotropic Gaussian data `N(mu, sigma_data^2 I)`.

use super::Denoiser;
use crate::error::{invalid, Result};
use crate::grid::{Grid, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracleDenoiser {
    mu: Grid,
    sigma_data: f64,
}

impl GaussianOracleDenoiser {
    pub fn new(mu: Grid, sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(invalid(format!("sigma_data must be positive, got {sigma_data}")));
        }
        Ok(Self { mu, sigma_data })
    }

    pub fn mu(&self) -> &Grid {
        &self.mu
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    /// Posterior mean `E[x0 | x]` at noise level `sigma`.
    pub fn posterior_mean(&self, x: &Grid, sigma: f64) -> Result<Grid> {
        self.check(x, sigma)?;
        let sd2 = self.sigma_data * self.sigma_data;
        let s2 = sigma * sigma;
        let data = x
            .data()
            .iter()
            .zip(self.mu.data())
            .map(|(xv, m)| (sd2 * xv + s2 * m) / (sd2 + s2))
            .collect();
        x.with_data(data)
    }

    fn check(&self, x: &Grid, sigma: f64) -> Result<()> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(invalid(format!("oracle needs sigma > 0, got {sigma}")));
        }
        if x.shape() != self.mu.shape() || x.channels() != self.mu.channels() {
            return Err(invalid(format!(
                "input {}x{} channels does not match oracle mean {}x{} channels",
                x.shape(),
                x.channels(),
                self.mu.shape(),
                self.mu.channels()
            )));
        }
        Ok(())
    }
}

/// Noise estimate `(x - D(x; sigma)) / sigma` of the Gaussian oracle.
pub fn oracle_predict(o: &GaussianOracleDenoiser, x: &Grid, sigma: f64, _shape: Shape, _cond: &Grid) -> Result<Grid> {
    o.check(x, sigma)?;
    let sd2 = o.sigma_data * o.sigma_data;
    let s2 = sigma * sigma;
    // (x - D) / sigma = sigma * (x - mu) / (sd^2 + sigma^2)
    let data = x
        .data()
        .iter()
        .zip(o.mu.data())
        .map(|(xv, m)| {
            let d = if sigma.is_infinite() {
                *m
            } else {
                (sd2 * xv + s2 * m) / (sd2 + s2)
            };
            (xv - d) / sigma
        })
        .collect();
    x.with_data(data)
}

impl Denoiser for GaussianOracleDenoiser {
    fn channels(&self) -> usize {
        self.mu.channels()
    }

    fn predict(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Result<Grid> {
        oracle_predict(self, x, sigma, shape, cond)
    }
}
