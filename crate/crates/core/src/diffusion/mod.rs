//! Hierarchical diffusion: corruption, the training objective, samplers and
//! the denoisers that plug into them.

pub mod checkpoint;
mod conv;
pub mod loss;
pub mod oracle;
pub mod sampler;
pub mod toy;
pub mod train;

use crate::error::Result;
use crate::grid::{Grid, Shape};

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use loss::{corrupt, hedm_input, hedm_loss, Corrupted, CorruptionLaw, LossWeighting};
pub use oracle::{oracle_predict, GaussianOracleDenoiser};
pub use sampler::{
    count_pixels, sample, sample_run, vanilla_sample, vanilla_sample_run, NetworkCall, SampleRun, SamplerMode,
};
pub use toy::{ToyArch, ToyDenoiser};
pub use train::{train, TrainConfig, TrainOutcome};

/// A conditional noise predictor `f(x, sigma, s | cond)`.
///
/// `x` is always at full resolution; `shape` is the native resolution of the
/// current step. Implementations must be deterministic.
pub trait Denoiser {
    /// Channels of the predicted noise (and of the data being generated).
    fn channels(&self) -> usize;

    fn predict(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Result<Grid>;
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn channels(&self) -> usize {
        (**self).channels()
    }

    fn predict(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Result<Grid> {
        (**self).predict(x, sigma, shape, cond)
    }
}
