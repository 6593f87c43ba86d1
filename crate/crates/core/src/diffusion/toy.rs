//! Small trainable convolutional denoiser.
//!
//! Three 3x3 conv layers with SiLU between them. The network output `F` is
//! wrapped in EDM preconditioning,
//! `D = c_skip * x + c_out * F((c_in * x, cond, ln(sigma)/4, h/H, w/W))`,
//! and the noise estimate is `(x - D) / sigma`.

use serde::{Deserialize, Serialize};

use super::{conv, Denoiser};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Shape};
use crate::rng::Stream;

/// Number of scalar channels broadcast into the input (log sigma, h/H, w/W).
pub const SCALAR_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArch {
    pub channels: usize,
    pub cond_channels: usize,
    pub width: usize,
}

impl ToyArch {
    pub fn new(channels: usize, cond_channels: usize, width: usize) -> Result<Self> {
        if channels == 0 || width == 0 {
            return Err(invalid("toy denoiser needs at least one channel and width >= 1"));
        }
        Ok(Self {
            channels,
            cond_channels,
            width,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.channels + self.cond_channels + SCALAR_CHANNELS
    }

    /// `(cin, cout)` for each layer.
    pub fn layers(&self) -> [(usize, usize); 3] {
        [
            (self.in_channels(), self.width),
            (self.width, self.width),
            (self.width, self.channels),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o * 9 + o).sum()
    }

    // (weight range, bias range) of each layer within the flat vector
    fn offsets(&self) -> [(std::ops::Range<usize>, std::ops::Range<usize>); 3] {
        let mut at = 0;
        self.layers().map(|(i, o)| {
            let w = at..at + i * o * 9;
            let b = w.end..w.end + o;
            at = b.end;
            (w, b)
        })
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// EDM preconditioning coefficients `(c_in, c_skip, c_out)`.
pub fn precond(sigma: f64, sigma_data: f64) -> (f64, f64, f64) {
    let s2 = sigma * sigma + sigma_data * sigma_data;
    (
        1.0 / s2.sqrt(),
        sigma_data * sigma_data / s2,
        sigma * sigma_data / s2.sqrt(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    arch: ToyArch,
    sigma_data: f64,
    params: Vec<f64>,
}

struct Trace {
    cols: [Vec<f64>; 3],
    pre: [Vec<f64>; 2],
    out: Vec<f64>,
}

impl ToyDenoiser {
    /// Fan-in scaled uniform initialization; the output layer starts small so
    /// the initial denoiser is close to the skip path.
    pub fn init(arch: ToyArch, sigma_data: f64, seed: u64) -> Result<Self> {
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(invalid(format!("sigma_data must be positive, got {sigma_data}")));
        }
        let mut params = vec![0.0; arch.param_count()];
        let mut s = Stream::new(seed, "toy-init", &[]);
        for (l, ((cin, _), (w, _))) in arch.layers().iter().zip(arch.offsets()).enumerate() {
            let mut bound = (6.0 / (cin * 9) as f64).sqrt();
            if l == 2 {
                bound *= 0.1;
            }
            for p in &mut params[w] {
                *p = (2.0 * s.uniform() - 1.0) * bound;
            }
        }
        Ok(Self {
            arch,
            sigma_data,
            params,
        })
    }

    pub fn from_params(arch: ToyArch, sigma_data: f64, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(invalid(format!("sigma_data must be positive, got {sigma_data}")));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self {
            arch,
            sigma_data,
            params,
        })
    }

    pub fn arch(&self) -> ToyArch {
        self.arch
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Result<()> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        if x.channels() != self.arch.channels || cond.channels() != self.arch.cond_channels {
            return Err(invalid(format!(
                "toy denoiser expects {} + {} channels, got {} + {}",
                self.arch.channels,
                self.arch.cond_channels,
                x.channels(),
                cond.channels()
            )));
        }
        if cond.shape() != x.shape() {
            return Err(invalid(format!(
                "conditioning shape {} differs from input shape {}",
                cond.shape(),
                x.shape()
            )));
        }
        if !shape.fits_within(x.shape()) {
            return Err(invalid(format!("step shape {shape} exceeds grid {}", x.shape())));
        }
        Ok(())
    }

    fn features(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Vec<f64> {
        let (c_in, _, _) = precond(sigma, self.sigma_data);
        let hw = x.height() * x.width();
        let mut f = Vec::with_capacity(self.arch.in_channels() * hw);
        f.extend(x.data().iter().map(|v| c_in * v));
        f.extend_from_slice(cond.data());
        for s in [
            sigma.ln() / 4.0,
            shape.h as f64 / x.height() as f64,
            shape.w as f64 / x.width() as f64,
        ] {
            f.extend(std::iter::repeat_n(s, hw));
        }
        f
    }

    fn run(&self, params: &[f64], input: Vec<f64>, h: usize, w: usize) -> Trace {
        let hw = h * w;
        let off = self.arch.offsets();
        let layers = self.arch.layers();
        let mut act = input;
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(3);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(2);
        let mut out = Vec::new();
        for l in 0..3 {
            let (cin, cout) = layers[l];
            let col = conv::im2col(&act, cin, h, w);
            let z = conv::forward(&col, &params[off[l].0.clone()], &params[off[l].1.clone()], cout, hw);
            cols.push(col);
            if l < 2 {
                act = z.iter().map(|v| silu(*v)).collect();
                pre.push(z);
            } else {
                out = z;
            }
        }
        let [c0, c1, c2]: [Vec<f64>; 3] = cols.try_into().unwrap();
        let [p0, p1]: [Vec<f64>; 2] = pre.try_into().unwrap();
        Trace {
            cols: [c0, c1, c2],
            pre: [p0, p1],
            out,
        }
    }

    // eps_hat = x * sigma / (sigma^2 + sd^2) - F * sd / sqrt(sigma^2 + sd^2)
    fn eps_coeffs(&self, sigma: f64) -> (f64, f64) {
        let sd = self.sigma_data;
        let s2 = sigma * sigma + sd * sd;
        (sigma / s2, sd / s2.sqrt())
    }

    fn predict_raw(&self, params: &[f64], x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Vec<f64> {
        let input = self.features(x, sigma, shape, cond);
        let trace = self.run(params, input, x.height(), x.width());
        let (a, b) = self.eps_coeffs(sigma);
        x.data().iter().zip(&trace.out).map(|(xv, f)| a * xv - b * f).collect()
    }

    /// Weighted mean squared noise-prediction error for one example, and its
    /// gradient with respect to every parameter (added into `grad`).
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        x: &Grid,
        sigma: f64,
        shape: Shape,
        cond: &Grid,
        target: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_inputs(x, sigma, shape, cond)?;
        if target.len() != x.data().len() || grad.len() != self.params.len() {
            return Err(invalid("target or gradient buffer has the wrong length"));
        }
        let (h, w) = (x.height(), x.width());
        let hw = h * w;
        let input = self.features(x, sigma, shape, cond);
        let trace = self.run(&self.params, input, h, w);
        let (a, b) = self.eps_coeffs(sigma);
        let n = target.len() as f64;
        let mut loss = 0.0;
        let mut dout = Vec::with_capacity(target.len());
        for ((xv, f), e) in x.data().iter().zip(&trace.out).zip(target) {
            let r = a * xv - b * f - e;
            loss += r * r;
            dout.push(-2.0 * weight * b * r / n);
        }
        let off = self.arch.offsets();
        let layers = self.arch.layers();
        let mut delta = dout;
        for l in (0..3).rev() {
            let (cin, cout) = layers[l];
            let (wr, br) = off[l].clone();
            let (gw, gb) = {
                let (head, tail) = grad.split_at_mut(br.start);
                (&mut head[wr.clone()], &mut tail[..br.len()])
            };
            let dcol = conv::backward(&trace.cols[l], &self.params[wr], &delta, cout, hw, gw, gb, l > 0);
            if let Some(dcol) = dcol {
                let dact = conv::col2im(&dcol, cin, h, w);
                delta = dact
                    .iter()
                    .zip(&trace.pre[l - 1])
                    .map(|(d, z)| d * silu_grad(*z))
                    .collect();
            }
        }
        Ok(weight * loss / n)
    }

    /// Loss only, evaluated at an arbitrary parameter vector.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_at(
        &self,
        params: &[f64],
        x: &Grid,
        sigma: f64,
        shape: Shape,
        cond: &Grid,
        target: &[f64],
        weight: f64,
    ) -> Result<f64> {
        self.check_inputs(x, sigma, shape, cond)?;
        if params.len() != self.params.len() || target.len() != x.data().len() {
            return Err(invalid("parameter or target vector has the wrong length"));
        }
        let eps = self.predict_raw(params, x, sigma, shape, cond);
        let n = target.len() as f64;
        Ok(weight * eps.iter().zip(target).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / n)
    }
}

impl Denoiser for ToyDenoiser {
    fn channels(&self) -> usize {
        self.arch.channels
    }

    fn predict(&self, x: &Grid, sigma: f64, shape: Shape, cond: &Grid) -> Result<Grid> {
        self.check_inputs(x, sigma, shape, cond)?;
        let eps = self.predict_raw(&self.params, x, sigma, shape, cond);
        if eps.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutput("toy denoiser".into()));
        }
        x.with_data(eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: Shape, channels: usize, salt: u64) -> Grid {
        let mut s = Stream::new(salt, "toy-test", &[]);
        let data = (0..channels * shape.h * shape.w).map(|_| s.normal()).collect();
        Grid::new(
            shape.h,
            shape.w,
            crate::grid::default_names(channels),
            crate::grid::GeoExtent::SENTINEL,
            data,
        )
        .unwrap()
    }

    #[test]
    fn param_count_depends_on_arch_only() {
        let a = ToyArch::new(1, 1, 32).unwrap();
        assert_eq!(a.param_count(), 5 * 32 * 9 + 32 + 32 * 32 * 9 + 32 + 32 * 9 + 1);
        let n1 = ToyDenoiser::init(a, 0.5, 1).unwrap().params().len();
        let n2 = ToyDenoiser::init(a, 0.5, 2).unwrap().params().len();
        assert_eq!(n1, n2);
    }

    #[test]
    fn precond_small_sigma_is_identity() {
        let (_, skip, out) = precond(1e-8, 0.5);
        assert!((skip - 1.0).abs() < 1e-12 && out < 1e-7);
    }

    #[test]
    fn output_shape_and_determinism() {
        let net = ToyDenoiser::init(ToyArch::new(2, 1, 4).unwrap(), 0.5, 3).unwrap();
        let shape = Shape { h: 5, w: 6 };
        let x = grid(shape, 2, 1);
        let c = grid(shape, 1, 2);
        let a = net.predict(&x, 0.7, Shape { h: 2, w: 3 }, &c).unwrap();
        let b = net.predict(&x, 0.7, Shape { h: 2, w: 3 }, &c).unwrap();
        assert_eq!(a.shape(), shape);
        assert_eq!(a.channels(), 2);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = ToyDenoiser::init(ToyArch::new(1, 1, 4).unwrap(), 0.5, 3).unwrap();
        let shape = Shape { h: 4, w: 4 };
        let x = grid(shape, 1, 1);
        assert!(net.predict(&x, 0.0, shape, &grid(shape, 1, 2)).is_err());
        assert!(net.predict(&x, 1.0, shape, &grid(shape, 2, 2)).is_err());
        assert!(net.predict(&x, 1.0, shape, &grid(Shape { h: 3, w: 4 }, 1, 2)).is_err());
        assert!(net.predict(&x, 1.0, Shape { h: 5, w: 4 }, &grid(shape, 1, 2)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = ToyArch::new(1, 1, 5).unwrap();
        let mut net = ToyDenoiser::init(arch, 0.5, 11).unwrap();
        // make the output layer non-trivial so every block gets signal
        for p in net.params_mut().iter_mut() {
            *p *= 3.0;
        }
        let shape = Shape { h: 5, w: 4 };
        let x = grid(shape, 1, 21);
        let c = grid(shape, 1, 22);
        let target: Vec<f64> = grid(shape, 1, 23).into_data();
        let (sigma, small, wgt) = (0.8, Shape { h: 3, w: 2 }, 1.7);
        let mut g = vec![0.0; net.params().len()];
        net.loss_and_grad(&x, sigma, small, &c, &target, wgt, &mut g).unwrap();
        let mut p = net.params().to_vec();
        for off in arch
            .offsets()
            .iter()
            .flat_map(|(w, b)| [w.start, w.end - 1, b.start, b.end - 1])
        {
            let h = 1e-5;
            let orig = p[off];
            p[off] = orig + h;
            let up = net.loss_at(&p, &x, sigma, small, &c, &target, wgt).unwrap();
            p[off] = orig - h;
            let dn = net.loss_at(&p, &x, sigma, small, &c, &target, wgt).unwrap();
            p[off] = orig;
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[off]).abs() / fd.abs().max(g[off].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {off}: analytic {} vs fd {fd}", g[off]);
        }
    }
}
