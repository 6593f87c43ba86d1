//! Radially averaged power spectral density and its noise/resolution
//! predictions.
//!
//! The forward DFT is unnormalized, so `P(k) = |X(k)|^2` and a white field
//! of per-pixel variance `s^2` has expected power `s^2 * Ny * Nx`.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::grid::Grid;

/// In-place 2-D DFT of a row-major `h x w` array.
pub fn fft2(data: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    assert_eq!(data.len(), h * w);
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut buf = vec![Complex64::default(); h];
    for c in 0..w {
        for r in 0..h {
            buf[r] = data[r * w + c];
        }
        col.process(&mut buf);
        for r in 0..h {
            data[r * w + c] = buf[r];
        }
    }
}

/// `|X(k)|^2` over the full `[ky][kx]` plane.
pub fn power_spectrum_2d(g: &Grid, channel: usize) -> Result<Vec<f64>> {
    if channel >= g.channels() {
        return Err(invalid(format!(
            "channel {channel} out of range (grid has {})",
            g.channels()
        )));
    }
    let mut buf: Vec<Complex64> = g.plane(channel).iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft2(&mut buf, g.height(), g.width(), false);
    Ok(buf.iter().map(|z| z.norm_sqr()).collect())
}

/// Signed frequency in cycles per pixel of DFT index `k` on an `n`-point axis.
fn signed_freq(k: usize, n: usize) -> f64 {
    let s = if 2 * k >= n { k as f64 - n as f64 } else { k as f64 };
    s / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin centers, the geometric mean of each bin's edges.
    pub f: Vec<f64>,
    /// `f.len() + 1` increasing edges.
    pub edges: Vec<f64>,
    /// Mean `|X|^2` over each annulus.
    pub power: Vec<f64>,
    pub counts: Vec<u64>,
    pub dc_power: f64,
    pub ny: usize,
    pub nx: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    fn with_power(&self, power: Vec<f64>) -> Self {
        Self { power, ..self.clone() }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("f,power,count\n");
        for ((f, p), c) in self.f.iter().zip(&self.power).zip(&self.counts) {
            writeln!(out, "{f},{p},{c}").unwrap();
        }
        out
    }

    /// Element-wise mean of spectra that share a binning.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra.first().ok_or_else(|| invalid("no spectra to average"))?;
        if spectra.iter().any(|s| s.edges != first.edges) {
            return Err(invalid("spectra have different binnings"));
        }
        let n = spectra.len() as f64;
        let mut power = vec![0.0; first.len()];
        let mut dc = 0.0;
        for s in spectra {
            for (a, p) in power.iter_mut().zip(&s.power) {
                *a += p / n;
            }
            dc += s.dc_power / n;
        }
        Ok(Spectrum {
            dc_power: dc,
            ..first.with_power(power)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RapsdOptions {
    pub bins_per_decade: usize,
    /// Neighbouring low-frequency bins are merged until each holds at least
    /// this many coefficients.
    pub min_count: u64,
}

impl Default for RapsdOptions {
    fn default() -> Self {
        Self {
            bins_per_decade: 12,
            min_count: 1,
        }
    }
}

pub fn rapsd(g: &Grid, channel: usize, bins_per_decade: usize) -> Result<Spectrum> {
    rapsd_with(
        g,
        channel,
        RapsdOptions {
            bins_per_decade,
            ..RapsdOptions::default()
        },
    )
}

pub fn rapsd_with(g: &Grid, channel: usize, opts: RapsdOptions) -> Result<Spectrum> {
    let (ny, nx) = (g.height(), g.width());
    if ny < 4 || nx < 4 {
        return Err(invalid(format!("RAPSD needs at least 4x4 pixels, got {ny}x{nx}")));
    }
    if opts.bins_per_decade == 0 || opts.min_count == 0 {
        return Err(invalid("bins per decade and minimum count must be positive"));
    }
    let p = power_spectrum_2d(g, channel)?;
    let f_lo = 1.0 / ny.max(nx) as f64;
    let r_max = signed_freq(ny / 2, ny).hypot(signed_freq(nx / 2, nx)).abs();
    let bpd = opts.bins_per_decade as f64;
    let mut edges = vec![f_lo];
    while *edges.last().unwrap() <= r_max {
        let j = edges.len() as f64;
        edges.push(f_lo * 10f64.powf(j / bpd));
    }
    // the outermost annulus ends at the largest radius present
    *edges.last_mut().unwrap() = r_max;
    let nb = edges.len() - 1;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0u64; nb];
    for ky in 0..ny {
        let fy = signed_freq(ky, ny);
        for kx in 0..nx {
            if ky == 0 && kx == 0 {
                continue;
            }
            let r = fy.hypot(signed_freq(kx, nx));
            // r >= f_lo for every non-DC index; guard rounding at the bottom edge
            let b = edges.partition_point(|e| *e <= r).saturating_sub(1).min(nb - 1);
            sums[b] += p[ky * nx + kx];
            counts[b] += 1;
        }
    }

    // merge runs of bins until each reaches min_count; a short tail joins its
    // predecessor
    let mut out_edges = vec![edges[0]];
    let mut out_sum: Vec<f64> = Vec::new();
    let mut out_cnt: Vec<u64> = Vec::new();
    let (mut acc_s, mut acc_c) = (0.0, 0u64);
    for b in 0..nb {
        acc_s += sums[b];
        acc_c += counts[b];
        if acc_c >= opts.min_count {
            out_edges.push(edges[b + 1]);
            out_sum.push(acc_s);
            out_cnt.push(acc_c);
            acc_s = 0.0;
            acc_c = 0;
        }
    }
    if acc_c > 0 || out_cnt.is_empty() {
        if let (Some(s), Some(c)) = (out_sum.last_mut(), out_cnt.last_mut()) {
            *s += acc_s;
            *c += acc_c;
            *out_edges.last_mut().unwrap() = edges[nb];
        } else {
            out_edges.push(edges[nb]);
            out_sum.push(acc_s);
            out_cnt.push(acc_c);
        }
    }
    let f = out_edges.windows(2).map(|e| (e[0] * e[1]).sqrt()).collect();
    let power = out_sum
        .iter()
        .zip(&out_cnt)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { 0.0 })
        .collect();
    Ok(Spectrum {
        f,
        edges: out_edges,
        power,
        counts: out_cnt,
        dc_power: p[0],
        ny,
        nx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    /// Spectral exponent: `power ~ C f^-alpha`.
    pub alpha: f64,
    /// `ln C`.
    pub log_c: f64,
}

/// Least-squares line through `(ln f, ln power)` for bins with
/// `f_lo <= f <= f_hi` and positive power.
pub fn fit_power_law(s: &Spectrum, f_lo: f64, f_hi: f64) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> =
        s.f.iter()
            .zip(&s.power)
            .filter(|(f, p)| **f >= f_lo && **f <= f_hi && **p > 0.0)
            .map(|(f, p)| (f.ln(), p.ln()))
            .collect();
    if pts.len() < 3 {
        return Err(invalid(format!(
            "power-law fit needs at least 3 positive bins in [{f_lo}, {f_hi}], found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(PowerLawFit {
        alpha: -slope,
        log_c: my - slope * mx,
    })
}

/// Ideal low-pass prediction for down-sampling by an integer factor:
/// `s^2 P(f)` below the new Nyquist `1 / (2 s)`, zero above.
pub fn predict_downsampled(s: &Spectrum, factor: usize) -> Result<Spectrum> {
    if factor == 0 {
        return Err(invalid("down-sampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(s.clone());
    }
    let k = factor as f64;
    let cut = 1.0 / (2.0 * k);
    let power =
        s.f.iter()
            .zip(&s.power)
            .map(|(f, p)| if *f < cut { k * k * p } else { 0.0 })
            .collect();
    Ok(s.with_power(power))
}

/// Expected spectrum after adding white noise of per-pixel std `sigma_n`.
pub fn predict_noised(s: &Spectrum, sigma_n: f64) -> Result<Spectrum> {
    if !(sigma_n >= 0.0 && sigma_n.is_finite()) {
        return Err(invalid(format!(
            "noise std must be finite and non-negative, got {sigma_n}"
        )));
    }
    let floor = noise_floor(s, sigma_n);
    Ok(s.with_power(s.power.iter().map(|p| p + floor).collect()))
}

/// `sigma_n^2 * Ny * Nx`, the noise power per coefficient.
pub fn noise_floor(s: &Spectrum, sigma_n: f64) -> f64 {
    sigma_n * sigma_n * (s.ny * s.nx) as f64
}

/// Smallest bin center whose power is at or below the noise floor;
/// `+inf` when there is none or `sigma_n` is zero.
pub fn hinge_frequency(s: &Spectrum, sigma_n: f64) -> f64 {
    if sigma_n <= 0.0 {
        return f64::INFINITY;
    }
    if s.power.windows(2).any(|w| w[1] > w[0]) {
        log::warn!("hinge frequency requested for a spectrum that is not non-increasing");
    }
    let floor = noise_floor(s, sigma_n);
    s.f.iter()
        .zip(&s.power)
        .find(|(_, p)| **p <= floor)
        .map_or(f64::INFINITY, |(f, _)| *f)
}
