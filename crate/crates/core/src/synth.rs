//! Synthetic multiscale fields and fixtures.

use rustfft::num_complex::Complex64;

use crate::error::{invalid, ParseError, Result};
use crate::grid::{default_names, downsample, GeoExtent, Grid, Shape};
use crate::metrics::MonthlyClimatology;
use crate::rng::{derive_seed, Stream};
use crate::spectral::fft2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawSpec {
    /// Spectral exponent: power falls off as `f^-beta`.
    pub beta: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
}

impl PowerLawSpec {
    pub fn new(beta: f64, height: usize, width: usize, seed: u64) -> Self {
        Self {
            beta,
            height,
            width,
            channels: 1,
            seed,
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Shape::new(self.height, self.width)?;
        if self.channels == 0 {
            return Err(invalid("power-law field needs at least one channel"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(invalid("target std must be positive and moments finite"));
        }
        Ok(())
    }
}

fn freq(k: usize, n: usize) -> f64 {
    let s = if 2 * k >= n { k as f64 - n as f64 } else { k as f64 };
    s / n as f64
}

// One channel: amplitude f^(-beta/2) with uniform random phases, filled so
// that X[-k] = conj(X[k]); self-conjugate bins get a real value of random sign.
fn powerlaw_plane(beta: f64, h: usize, w: usize, rng: &mut Stream) -> Vec<f64> {
    let mut x = vec![Complex64::default(); h * w];
    let mut done = vec![false; h * w];
    for ky in 0..h {
        for kx in 0..w {
            let p = ky * w + kx;
            if done[p] {
                continue;
            }
            let q = ((h - ky) % h) * w + (w - kx) % w;
            let f = freq(ky, h).hypot(freq(kx, w));
            let amp = if p == 0 { 0.0 } else { f.powf(-beta / 2.0) };
            if p == q {
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                x[p] = Complex64::new(sign * amp, 0.0);
            } else {
                let phase = 2.0 * std::f64::consts::PI * rng.uniform();
                x[p] = Complex64::from_polar(amp, phase);
                x[q] = x[p].conj();
                done[q] = true;
            }
            done[p] = true;
        }
    }
    fft2(&mut x, h, w, true);
    x.iter().map(|z| z.re).collect()
}

/// Spectral synthesis of a random field with power-law spectrum, rescaled to
/// the requested mean and standard deviation per channel.
pub fn powerlaw_field(spec: &PowerLawSpec) -> Result<Grid> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut data = Vec::with_capacity(spec.channels * h * w);
    for c in 0..spec.channels {
        let mut rng = Stream::new(spec.seed, "powerlaw", &[c as u64]);
        let mut plane = powerlaw_plane(spec.beta, h, w, &mut rng);
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        let sd = (plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // a 1x1 grid has no non-DC power
        let scale = if sd > 0.0 { spec.std / sd } else { 0.0 };
        for v in &mut plane {
            *v = spec.mean + (*v - mean) * scale;
        }
        data.extend(plane);
    }
    Grid::new(h, w, default_names(spec.channels), GeoExtent::SENTINEL, data)
}

/// Seed used for pair `index` of a corpus generated from `seed`.
pub fn pair_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "pair", &[index as u64])
}

/// `(coarse, fine)` pairs with `coarse = downsample(fine, fine / factor)`.
pub fn make_pairs(spec: &PowerLawSpec, factor: usize, count: usize) -> Result<Vec<(Grid, Grid)>> {
    spec.validate()?;
    if factor == 0 || factor > spec.height || factor > spec.width {
        return Err(invalid(format!(
            "coarsening factor {factor} must be in 1..={}",
            spec.height.min(spec.width)
        )));
    }
    let coarse = Shape {
        h: spec.height / factor,
        w: spec.width / factor,
    };
    (0..count)
        .map(|i| {
            let fine = powerlaw_field(&PowerLawSpec {
                seed: pair_seed(spec.seed, i),
                ..*spec
            })?;
            Ok((downsample(&fine, coarse)?, fine))
        })
        .collect()
}

/// Annual cycle `base * (1 + amplitude cos(2 pi (m - wet) / 12))`, floored
/// at zero, over a seeded positive spatial texture.
pub fn monthly_toy_climatology(
    seed: u64,
    height: usize,
    width: usize,
    wet_month: usize,
    amplitude: f64,
) -> Result<MonthlyClimatology> {
    if !(1..=12).contains(&wet_month) {
        return Err(invalid(format!("wet month must be in 1..=12, got {wet_month}")));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(invalid(format!("amplitude must be finite and >= 0, got {amplitude}")));
    }
    let texture = powerlaw_field(&PowerLawSpec {
        beta: 2.0,
        height,
        width,
        channels: 1,
        seed,
        mean: 3.0,
        std: 0.5,
    })?;
    let mut values = Vec::with_capacity(12 * height * width);
    for m in 0..12 {
        let phase = 2.0 * std::f64::consts::PI * (m as f64 - (wet_month - 1) as f64) / 12.0;
        let cycle = (1.0 + amplitude * phase.cos()).max(0.0);
        values.extend(texture.data().iter().map(|b| b.max(0.1) * cycle));
    }
    MonthlyClimatology::new(height, width, values, GeoExtent::SENTINEL)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub filename: String,
    pub role: String,
    pub seed: u64,
}

pub const MANIFEST_HEADER: &str = "filename,role,seed";

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.filename, e.role, e.seed));
    }
    out
}

/// Parses `manifest.csv`. File names must be plain relative names.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ParseError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
        Some((i, _)) => {
            return Err(ParseError::Text {
                line: i + 1,
                message: format!("expected header {MANIFEST_HEADER:?}"),
            })
        }
        None => {
            return Err(ParseError::Text {
                line: 1,
                message: "empty manifest".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let err = |message: String| ParseError::Text { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [filename, role, seed] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        if filename.is_empty() || filename.contains(['/', '\\']) || filename == "." || filename == ".." {
            return Err(err(format!("invalid file name {filename:?}")));
        }
        if role.is_empty() {
            return Err(err("empty role".into()));
        }
        let seed = seed.parse().map_err(|_| err(format!("invalid seed {seed:?}")))?;
        out.push(ManifestEntry {
            filename: filename.to_string(),
            role: role.to_string(),
            seed,
        });
    }
    Ok(out)
}
