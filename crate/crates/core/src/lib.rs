pub mod diffusion;
pub mod error;
pub mod footprint;
pub mod grid;
pub mod klcheck;
pub mod metrics;
pub mod rng;
pub mod schedules;
pub mod spectral;
pub mod synth;

pub use error::{Error, ParseError, Result};
pub use grid::{GeoExtent, Grid, Shape};
