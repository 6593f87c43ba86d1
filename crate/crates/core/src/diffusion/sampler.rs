//! Hierarchical reverse process and its plain full-resolution counterpart.
//!
//! The latent lives at the step's native shape. Each step up-samples it to
//! full resolution, queries the denoiser once, takes the update at full
//! resolution and projects the result onto the next step's shape.

use serde::{Deserialize, Serialize};

use super::loss::alpha_bar;
use super::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::grid::{default_names, downsample, upsample, Grid, Shape};
use crate::rng::Stream;
use crate::schedules::{ChurnParams, NoiseSchedule, ShapeSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    /// Euler steps with stochastic churn on the variance-exploding path.
    EdmChurn,
    /// Ancestral update in `abar` notation with `abar_t = 1 / (1 + sigma_t^2)`.
    Literal,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edm-churn" => Ok(Self::EdmChurn),
            "literal" => Ok(Self::Literal),
            _ => Err(invalid(format!(
                "unknown sampler mode {s:?} (expected edm-churn or literal)"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EdmChurn => "edm-churn",
            Self::Literal => "literal",
        })
    }
}

/// One denoiser evaluation as recorded by the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkCall {
    pub t: usize,
    pub shape: Shape,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub output: Grid,
    pub full: Shape,
    pub calls: Vec<NetworkCall>,
}

/// Total pixels processed at native shapes, and that total as a fraction of
/// a full-resolution run with the same number of calls.
pub fn count_pixels(run: &SampleRun) -> (u64, f64) {
    let total: u64 = run.calls.iter().map(|c| c.shape.area()).sum();
    let baseline = run.calls.len() as u64 * run.full.area();
    (total, total as f64 / baseline as f64)
}

struct Ctx<'a, D: ?Sized> {
    f: &'a D,
    cond: &'a Grid,
    names: Vec<String>,
    seed: u64,
    calls: Vec<NetworkCall>,
}

impl<D: Denoiser + ?Sized> Ctx<'_, D> {
    fn new<'a>(f: &'a D, cond: &'a Grid, seed: u64) -> Ctx<'a, D> {
        let names = if cond.channels() == f.channels() {
            cond.channel_names().to_vec()
        } else {
            default_names(f.channels())
        };
        Ctx {
            f,
            cond,
            names,
            seed,
            calls: Vec::new(),
        }
    }

    fn grid(&self, shape: Shape, data: Vec<f64>) -> Grid {
        Grid::from_parts_unchecked(shape, self.names.clone(), self.cond.extent(), data)
    }

    fn init(&self, shape: Shape, scale: f64) -> Grid {
        let mut data = vec![0.0; self.f.channels() * shape.h * shape.w];
        Stream::new(self.seed, "init", &[]).fill_normal(&mut data);
        for v in &mut data {
            *v *= scale;
        }
        self.grid(shape, data)
    }

    fn noise(&self, label: &str, i: usize, n: usize) -> Vec<f64> {
        let mut z = vec![0.0; n];
        Stream::new(self.seed, label, &[i as u64]).fill_normal(&mut z);
        z
    }

    fn call(&mut self, x: &Grid, sigma: f64, t: usize, shape: Shape) -> Result<Vec<f64>> {
        self.calls.push(NetworkCall { t, shape, sigma });
        let eps = match self.f.predict(x, sigma, shape, self.cond) {
            Ok(g) => g,
            Err(Error::NonFiniteOutput(_)) => return Err(Error::SamplingFailed { step: t }),
            Err(e) => return Err(e),
        };
        if eps.shape() != x.shape() || eps.channels() != x.channels() {
            return Err(invalid(format!(
                "denoiser returned {}x{} channels for a {}x{} channel input",
                eps.shape(),
                eps.channels(),
                x.shape(),
                x.channels()
            )));
        }
        let data = eps.into_data();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingFailed { step: t });
        }
        Ok(data)
    }

    // One churned Euler step at full resolution; returns x_next.
    fn edm_step(
        &mut self,
        x: Grid,
        i: usize,
        t: usize,
        shape: Shape,
        sigmas: (f64, f64),
        churn: &ChurnParams,
        steps: usize,
    ) -> Result<Grid> {
        let (sigma, sigma_next) = sigmas;
        let gamma = churn.gamma(sigma, steps);
        let sigma_hat = sigma * (1.0 + gamma);
        let full = x.shape();
        let mut xh = x.into_data();
        if gamma > 0.0 {
            let amp = (sigma_hat * sigma_hat - sigma * sigma).sqrt() * churn.s_noise;
            let z = self.noise("churn", i, xh.len());
            for (v, n) in xh.iter_mut().zip(&z) {
                *v += amp * n;
            }
        }
        let xh = self.grid(full, xh);
        let eps = self.call(&xh, sigma_hat, t, shape)?;
        let dt = sigma_next - sigma_hat;
        let next = xh.into_data().iter().zip(&eps).map(|(v, e)| v + dt * e).collect();
        Ok(self.grid(full, next))
    }

    // One ancestral step in abar notation; the denoiser sees the
    // variance-exploding rescaling of its input.
    fn literal_step(&mut self, x: Grid, i: usize, t: usize, shape: Shape, noise: &NoiseSchedule) -> Result<Grid> {
        let sigma = noise.sigma_at(t)?;
        let ab = alpha_bar(sigma);
        let ab_prev = if t > 1 { alpha_bar(noise.sigma_at(t - 1)?) } else { 1.0 };
        let a = ab / ab_prev;
        let full = x.shape();
        let inv = 1.0 / ab.sqrt();
        let xin = self.grid(full, x.data().iter().map(|v| v * inv).collect());
        let eps = self.call(&xin, sigma, t, shape)?;
        let c = (1.0 - a) / (1.0 - ab).sqrt();
        let ra = a.sqrt();
        let mut next: Vec<f64> = x.data().iter().zip(&eps).map(|(v, e)| (v - c * e) / ra).collect();
        if t > 1 {
            let amp = (1.0 - a).sqrt();
            let z = self.noise("ancestral", i, next.len());
            for (v, n) in next.iter_mut().zip(&z) {
                *v += amp * n;
            }
        }
        Ok(self.grid(full, next))
    }
}

fn check_cond<D: Denoiser + ?Sized>(f: &D, cond: &Grid, full: Shape) -> Result<()> {
    if cond.shape() != full {
        return Err(invalid(format!(
            "conditioning shape {} must equal the full target shape {full}",
            cond.shape()
        )));
    }
    if f.channels() == 0 {
        return Err(invalid("denoiser reports zero channels"));
    }
    Ok(())
}

/// Hierarchical sampling with the call log.
pub fn sample_run<D: Denoiser + ?Sized>(
    f: &D,
    cond: &Grid,
    noise: &NoiseSchedule,
    shapes: &ShapeSchedule,
    churn: &ChurnParams,
    mode: SamplerMode,
    seed: u64,
) -> Result<SampleRun> {
    if noise.len() != shapes.len() {
        return Err(invalid(format!(
            "noise schedule has {} steps but shape schedule has {}",
            noise.len(),
            shapes.len()
        )));
    }
    churn.validate()?;
    let full = shapes.full();
    check_cond(f, cond, full)?;
    let steps = shapes.len();
    let mut ctx = Ctx::new(f, cond, seed);
    let init_scale = match mode {
        SamplerMode::EdmChurn => noise.sigma_max(),
        SamplerMode::Literal => 1.0,
    };
    let mut x = ctx.init(shapes.shape_at(steps)?, init_scale);
    for i in 0..steps {
        let t = steps - i;
        let shape = shapes.shape_at(t)?;
        let xt = upsample(&x, full)?;
        let next = match mode {
            SamplerMode::EdmChurn => {
                let sigma_next = noise.sigmas().get(i + 1).copied().unwrap_or(0.0);
                ctx.edm_step(xt, i, t, shape, (noise.sigmas()[i], sigma_next), churn, steps)?
            }
            SamplerMode::Literal => ctx.literal_step(xt, i, t, shape, noise)?,
        };
        x = if t > 1 {
            downsample(&next, shapes.shape_at(t - 1)?)?
        } else {
            next
        };
    }
    Ok(SampleRun {
        output: x,
        full,
        calls: ctx.calls,
    })
}

pub fn sample<D: Denoiser + ?Sized>(
    f: &D,
    cond: &Grid,
    noise: &NoiseSchedule,
    shapes: &ShapeSchedule,
    churn: &ChurnParams,
    seed: u64,
) -> Result<Grid> {
    Ok(sample_run(f, cond, noise, shapes, churn, SamplerMode::EdmChurn, seed)?.output)
}

/// Full-resolution reference sampler: no resampling anywhere.
pub fn vanilla_sample_run<D: Denoiser + ?Sized>(
    f: &D,
    cond: &Grid,
    noise: &NoiseSchedule,
    churn: &ChurnParams,
    mode: SamplerMode,
    seed: u64,
) -> Result<SampleRun> {
    churn.validate()?;
    let full = cond.shape();
    check_cond(f, cond, full)?;
    let steps = noise.len();
    let mut ctx = Ctx::new(f, cond, seed);
    let mut x = match mode {
        SamplerMode::EdmChurn => ctx.init(full, noise.sigma_max()),
        SamplerMode::Literal => ctx.init(full, 1.0),
    };
    for i in 0..steps {
        let t = steps - i;
        x = match mode {
            SamplerMode::EdmChurn => {
                let sigma_next = noise.sigmas().get(i + 1).copied().unwrap_or(0.0);
                ctx.edm_step(x, i, t, full, (noise.sigmas()[i], sigma_next), churn, steps)?
            }
            SamplerMode::Literal => ctx.literal_step(x, i, t, full, noise)?,
        };
    }
    Ok(SampleRun {
        output: x,
        full,
        calls: ctx.calls,
    })
}

pub fn vanilla_sample<D: Denoiser + ?Sized>(
    f: &D,
    cond: &Grid,
    noise: &NoiseSchedule,
    churn: &ChurnParams,
    seed: u64,
) -> Result<Grid> {
    Ok(vanilla_sample_run(f, cond, noise, churn, SamplerMode::EdmChurn, seed)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::GaussianOracleDenoiser;
    use crate::schedules::{
        equally_spaced_shapes, identity_shapes, karras_sigmas, normalized_mean_area, unit_shrink_shapes,
    };

    fn oracle(shape: Shape) -> GaussianOracleDenoiser {
        let mu = Grid::from_fn(shape, |r, c| 0.1 * r as f64 - 0.05 * c as f64).unwrap();
        GaussianOracleDenoiser::new(mu, 0.5).unwrap()
    }

    struct Nan;

    impl Denoiser for Nan {
        fn channels(&self) -> usize {
            1
        }
        fn predict(&self, _: &Grid, _: f64, _: Shape, _: &Grid) -> Result<Grid> {
            Err(Error::NonFiniteOutput("test".into()))
        }
    }

    #[test]
    fn identity_schedule_reduces_to_vanilla() {
        let shape = Shape { h: 6, w: 5 };
        let f = oracle(shape);
        let cond = f.mu().clone();
        let noise = karras_sigmas(0.002, 80.0, 7.0, 20).unwrap();
        let shapes = identity_shapes(6, 5, 20).unwrap();
        for mode in [SamplerMode::EdmChurn, SamplerMode::Literal] {
            let h = sample_run(&f, &cond, &noise, &shapes, &ChurnParams::default(), mode, 7).unwrap();
            let v = vanilla_sample_run(&f, &cond, &noise, &ChurnParams::default(), mode, 7).unwrap();
            assert_eq!(h.output, v.output, "{mode}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let shape = Shape { h: 5, w: 5 };
        let f = oracle(shape);
        let noise = karras_sigmas(0.002, 80.0, 7.0, 10).unwrap();
        let shapes = equally_spaced_shapes(5, 5, 10).unwrap();
        let c = ChurnParams::default();
        let a = sample(&f, f.mu(), &noise, &shapes, &c, 1).unwrap();
        assert_eq!(a, sample(&f, f.mu(), &noise, &shapes, &c, 1).unwrap());
        assert_ne!(a, sample(&f, f.mu(), &noise, &shapes, &c, 2).unwrap());
        assert_eq!(a.shape(), shape);
    }

    #[test]
    fn single_step_returns_posterior_mean() {
        let shape = Shape { h: 3, w: 4 };
        let f = oracle(shape);
        let noise = NoiseSchedule::from_sigmas(vec![2.0]).unwrap();
        let out = vanilla_sample(&f, f.mu(), &noise, &ChurnParams::NONE, 5).unwrap();
        let mut x0 = vec![0.0; 12];
        Stream::new(5, "init", &[]).fill_normal(&mut x0);
        let x = f.mu().with_data(x0.iter().map(|v| 2.0 * v).collect()).unwrap();
        let d = f.posterior_mean(&x, 2.0).unwrap();
        for (a, b) in out.data().iter().zip(d.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_budget_matches_schedule() {
        let f = oracle(Shape { h: 5, w: 5 });
        let noise = karras_sigmas(0.002, 80.0, 7.0, 3).unwrap();
        let shapes = equally_spaced_shapes(5, 5, 3).unwrap();
        let run = sample_run(
            &f,
            f.mu(),
            &noise,
            &shapes,
            &ChurnParams::default(),
            SamplerMode::EdmChurn,
            0,
        )
        .unwrap();
        let (total, alpha) = count_pixels(&run);
        assert_eq!(total, 35);
        assert_eq!(alpha, normalized_mean_area(&shapes));
        let ts: Vec<usize> = run.calls.iter().map(|c| c.t).collect();
        assert_eq!(ts, vec![3, 2, 1]);

        let id = identity_shapes(5, 5, 3).unwrap();
        let run = sample_run(
            &f,
            f.mu(),
            &noise,
            &id,
            &ChurnParams::default(),
            SamplerMode::EdmChurn,
            0,
        )
        .unwrap();
        assert_eq!(count_pixels(&run), (75, 1.0));
    }

    #[test]
    fn unit_shrink_budget_example() {
        let noise = karras_sigmas(0.002, 80.0, 7.0, 50).unwrap();
        let shapes = unit_shrink_shapes(144, 272, 50).unwrap();
        let f = oracle(Shape { h: 144, w: 272 });
        let run = sample_run(
            &f,
            f.mu(),
            &noise,
            &shapes,
            &ChurnParams::NONE,
            SamplerMode::EdmChurn,
            0,
        )
        .unwrap();
        let (_, alpha) = count_pixels(&run);
        assert!((alpha - 0.760).abs() < 1e-3);
    }

    #[test]
    fn non_finite_denoiser_reports_step() {
        let cond = Grid::constant(Shape { h: 2, w: 2 }, 1, 0.0).unwrap();
        let noise = karras_sigmas(0.1, 1.0, 7.0, 4).unwrap();
        let shapes = identity_shapes(2, 2, 4).unwrap();
        let err = sample(&Nan, &cond, &noise, &shapes, &ChurnParams::default(), 0).unwrap_err();
        assert!(matches!(err, Error::SamplingFailed { step: 4 }));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let f = oracle(Shape { h: 4, w: 4 });
        let noise = karras_sigmas(0.1, 1.0, 7.0, 4).unwrap();
        let shapes = identity_shapes(4, 4, 3).unwrap();
        assert!(sample(&f, f.mu(), &noise, &shapes, &ChurnParams::default(), 0).is_err());
        let shapes = identity_shapes(5, 4, 4).unwrap();
        assert!(sample(&f, f.mu(), &noise, &shapes, &ChurnParams::default(), 0).is_err());
        let bad = ChurnParams {
            s_min: 2.0,
            s_max: 1.0,
            ..ChurnParams::default()
        };
        let shapes = identity_shapes(4, 4, 4).unwrap();
        assert!(sample(&f, f.mu(), &noise, &shapes, &bad, 0).is_err());
    }
}
