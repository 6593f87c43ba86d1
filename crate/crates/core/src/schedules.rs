//! Noise and shape schedules, and the pixel-budget calculus that ties them to
//! speed-up.
//!
//! Indexing follows the forward process: step `t = 1` is the finest shape
//! and the smallest noise level, `t = T` the coarsest shape and largest
//! noise. Samplers walk `t = T, ..., 1`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::Shape;

/// Stochasticity controls of the EDM sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnParams {
    pub s_churn: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub s_noise: f64,
}

impl Default for ChurnParams {
    fn default() -> Self {
        Self {
            s_churn: 1.0,
            s_min: 0.0,
            s_max: f64::INFINITY,
            s_noise: 1.0,
        }
    }
}

impl ChurnParams {
    /// Deterministic sampling (no churn).
    pub const NONE: ChurnParams = ChurnParams {
        s_churn: 0.0,
        s_min: 0.0,
        s_max: f64::INFINITY,
        s_noise: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.s_churn >= 0.0 && self.s_min >= 0.0 && self.s_noise >= 0.0) {
            return Err(invalid("churn parameters must be non-negative"));
        }
        if self.s_min.is_nan() || self.s_max.is_nan() || self.s_min > self.s_max {
            return Err(invalid(format!(
                "s_min {} must not exceed s_max {}",
                self.s_min, self.s_max
            )));
        }
        Ok(())
    }

    /// Churn factor gamma applied at noise level `sigma` in a `steps`-step run.
    pub fn gamma(&self, sigma: f64, steps: usize) -> f64 {
        if sigma >= self.s_min && sigma <= self.s_max {
            (self.s_churn / steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// Strictly decreasing, in sampling order: `sigmas[0]` belongs to `t = T`.
    sigmas: Vec<f64>,
    rho: f64,
}

/// Karras et al. rho-warped interpolation between `sigma_max` and
/// `sigma_min`.
pub fn karras_sigmas(sigma_min: f64, sigma_max: f64, rho: f64, steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(invalid(format!("noise schedule needs at least 2 steps, got {steps}")));
    }
    if !(sigma_min > 0.0 && sigma_max.is_finite() && sigma_min < sigma_max) {
        return Err(invalid(format!(
            "need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    let lo = sigma_min.powf(1.0 / rho);
    let hi = sigma_max.powf(1.0 / rho);
    let last = steps - 1;
    let mut sigmas: Vec<f64> = (0..steps)
        .map(|i| (hi + (i as f64 / last as f64) * (lo - hi)).powf(rho))
        .collect();
    sigmas[0] = sigma_max;
    sigmas[last] = sigma_min;
    let sched = NoiseSchedule { sigmas, rho };
    sched.check_monotone()?;
    Ok(sched)
}

impl NoiseSchedule {
    /// Arbitrary strictly decreasing positive levels, in sampling order.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(invalid("noise schedule is empty"));
        }
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("noise levels must be positive and finite"));
        }
        let s = Self { sigmas, rho: f64::NAN };
        s.check_monotone()?;
        Ok(s)
    }

    fn check_monotone(&self) -> Result<()> {
        if self.sigmas.windows(2).any(|p| p[1] >= p[0]) {
            return Err(invalid("noise levels must be strictly decreasing in sampling order"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// Levels in sampling order (largest first).
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        *self.sigmas.last().unwrap()
    }

    /// `NaN` for schedules built with [`NoiseSchedule::from_sigmas`].
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `sigma_t` for forward step `t` in `1..=T`.
    pub fn sigma_at(&self, t: usize) -> Result<f64> {
        let n = self.len();
        if t == 0 || t > n {
            return Err(invalid(format!("step {t} outside 1..={n}")));
        }
        Ok(self.sigmas[n - t])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeSchedule {
    shapes: Vec<Shape>,
    full: Shape,
}

impl ShapeSchedule {
    /// Validates the schedule invariants: first shape is `full`, every shape
    /// fits inside it, and both axes are non-increasing in `t`.
    pub fn new(shapes: Vec<Shape>, full: Shape) -> Result<Self> {
        if shapes.is_empty() {
            return Err(invalid("shape schedule is empty"));
        }
        if shapes[0] != full {
            return Err(invalid(format!(
                "first shape {} must equal the full shape {full}",
                shapes[0]
            )));
        }
        for (i, s) in shapes.iter().enumerate() {
            if s.h == 0 || s.w == 0 || !s.fits_within(full) {
                return Err(invalid(format!("shape {s} at t={} outside 1..={full}", i + 1)));
            }
        }
        if shapes.windows(2).any(|p| p[1].h > p[0].h || p[1].w > p[0].w) {
            return Err(invalid("shape schedule must be non-increasing in t"));
        }
        Ok(Self { shapes, full })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Shapes ordered `t = 1..=T`.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn full(&self) -> Shape {
        self.full
    }

    pub fn shape_at(&self, t: usize) -> Result<Shape> {
        let n = self.len();
        if t == 0 || t > n {
            return Err(invalid(format!("step {t} outside 1..={n}")));
        }
        Ok(self.shapes[t - 1])
    }

    /// `sum_t A_t`.
    pub fn total_area(&self) -> u64 {
        self.shapes.iter().map(Shape::area).sum()
    }

    /// Pixels a full-resolution run of the same length would process: `T * A`.
    pub fn baseline_area(&self) -> u64 {
        self.len() as u64 * self.full.area()
    }

    pub fn is_identity(&self) -> bool {
        self.shapes.iter().all(|s| *s == self.full)
    }
}

fn check_full(h: usize, w: usize) -> Result<Shape> {
    Shape::new(h, w)
}

// round-half-up of num/den for non-negative num, positive den
fn round_half_up(num: u64, den: u64) -> u64 {
    (2 * num + den) / (2 * den)
}

// Linear ramp from n at t=1 to 1 at t=T, rounded half up, exact in integers.
fn ramp(n: usize, t: usize, steps: usize) -> usize {
    let den = (steps - 1) as u64;
    let num = n as u64 * den - (t - 1) as u64 * (n as u64 - 1);
    (round_half_up(num, den) as usize).max(1)
}

/// Linear ramp from `(H, W)` at `t = 1` to `(1, 1)` at `t = T`, rounded half up.
pub fn equally_spaced_shapes(h: usize, w: usize, steps: usize) -> Result<ShapeSchedule> {
    let full = check_full(h, w)?;
    if steps < 2 {
        return Err(invalid(format!("equally spaced schedule needs T >= 2, got {steps}")));
    }
    let shapes = (1..=steps)
        .map(|t| Shape {
            h: ramp(h, t, steps),
            w: ramp(w, t, steps),
        })
        .collect();
    ShapeSchedule::new(shapes, full)
}

/// Both axes shrink by one pixel per step, clamped at 1.
pub fn unit_shrink_shapes(h: usize, w: usize, steps: usize) -> Result<ShapeSchedule> {
    let full = check_full(h, w)?;
    if steps < 1 {
        return Err(invalid("unit-shrink schedule needs T >= 1"));
    }
    let shapes = (0..steps)
        .map(|k| Shape {
            h: h.saturating_sub(k).max(1),
            w: w.saturating_sub(k).max(1),
        })
        .collect();
    ShapeSchedule::new(shapes, full)
}

/// `k` denoising steps per resolution level; the `ceil(T / k)` levels follow
/// the equally spaced ramp.
pub fn tandem_shapes(h: usize, w: usize, steps: usize, k: usize) -> Result<ShapeSchedule> {
    let full = check_full(h, w)?;
    if steps < 2 {
        return Err(invalid(format!("tandem schedule needs T >= 2, got {steps}")));
    }
    if k == 0 || k > steps {
        return Err(invalid(format!("steps per level k={k} must be in 1..={steps}")));
    }
    let levels = steps.div_ceil(k);
    let level_shapes: Vec<Shape> = if levels == 1 {
        vec![full]
    } else {
        equally_spaced_shapes(h, w, levels)?.shapes
    };
    let shapes = (0..steps).map(|i| level_shapes[i / k]).collect();
    ShapeSchedule::new(shapes, full)
}

/// Full resolution at every step: the hierarchical process reduces to plain EDM.
pub fn identity_shapes(h: usize, w: usize, steps: usize) -> Result<ShapeSchedule> {
    let full = check_full(h, w)?;
    if steps < 1 {
        return Err(invalid("identity schedule needs T >= 1"));
    }
    ShapeSchedule::new(vec![full; steps], full)
}

/// Shape-schedule family, as named in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Equal,
    Unit,
    Tandem,
    Identity,
}

impl std::str::FromStr for ShapeKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(Self::Equal),
            "unit" => Ok(Self::Unit),
            "tandem" => Ok(Self::Tandem),
            "identity" => Ok(Self::Identity),
            _ => Err(invalid(format!(
                "unknown shape schedule {s:?} (expected equal, unit, tandem or identity)"
            ))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Equal => "equal",
            Self::Unit => "unit",
            Self::Tandem => "tandem",
            Self::Identity => "identity",
        })
    }
}

/// Builds a schedule of the given family; `k` is only read by `Tandem`.
pub fn build_shapes(kind: ShapeKind, h: usize, w: usize, steps: usize, k: usize) -> Result<ShapeSchedule> {
    match kind {
        ShapeKind::Equal => equally_spaced_shapes(h, w, steps),
        ShapeKind::Unit => unit_shrink_shapes(h, w, steps),
        ShapeKind::Tandem => tandem_shapes(h, w, steps, k),
        ShapeKind::Identity => identity_shapes(h, w, steps),
    }
}

/// Mean fraction of full-resolution pixels per network call.
pub fn normalized_mean_area(sched: &ShapeSchedule) -> f64 {
    sched.total_area() as f64 / sched.baseline_area() as f64
}

/// Ideal pixel/FLOP speed-up, the reciprocal of the mean area.
pub fn speedup(sched: &ShapeSchedule) -> f64 {
    1.0 / normalized_mean_area(sched)
}

/// Closed-form speed-up of the unclamped unit-shrink schedule.
pub fn unit_shrink_speedup_closed_form(h: usize, w: usize, steps: usize) -> Result<f64> {
    check_full(h, w)?;
    if steps == 0 || steps > h.min(w) {
        return Err(invalid(format!(
            "closed form needs 1 <= T <= min(H, W) = {}, got T = {steps}",
            h.min(w)
        )));
    }
    let a = (h * w) as f64;
    let t = steps as f64;
    let inv = 1.0 - (t - 1.0) / (2.0 * a) * (h + w) as f64 + (t - 1.0) * (2.0 * t - 1.0) / (6.0 * a);
    Ok(1.0 / inv)
}

/// Audit lines `t h w sigma`, one per step, `t = 1..=T`.
pub fn schedule_lines(noise: &NoiseSchedule, shapes: &ShapeSchedule) -> Result<String> {
    if noise.len() != shapes.len() {
        return Err(invalid(format!(
            "noise schedule has {} steps but shape schedule has {}",
            noise.len(),
            shapes.len()
        )));
    }
    let mut out = String::from("t h w sigma\n");
    for t in 1..=shapes.len() {
        let s = shapes.shape_at(t)?;
        writeln!(out, "{t} {} {} {:e}", s.h, s.w, noise.sigma_at(t)?).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hw(s: &ShapeSchedule) -> Vec<(usize, usize)> {
        s.shapes().iter().map(|s| (s.h, s.w)).collect()
    }

    #[test]
    fn karras_endpoints_and_monotone() {
        let s = karras_sigmas(0.002, 80.0, 7.0, 50).unwrap();
        assert_eq!(s.sigmas()[0], 80.0);
        assert_eq!(s.sigmas()[49], 0.002);
        assert_eq!(s.sigma_at(50).unwrap(), 80.0);
        assert_eq!(s.sigma_at(1).unwrap(), 0.002);
        assert!(s.sigmas().windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn karras_two_point() {
        let eps = 1e-6;
        let s = karras_sigmas(1.0, 1.0 + eps, 7.0, 2).unwrap();
        assert_eq!(s.sigmas(), &[1.0 + eps, 1.0]);
    }

    // Reference values from a 50-digit evaluation of
    // (80^(1/7) + i/49 (0.002^(1/7) - 80^(1/7)))^7.
    #[test]
    fn karras_interior_matches_reference() {
        let s = karras_sigmas(0.002, 80.0, 7.0, 50).unwrap();
        let expect = [
            (1, 71.501038004659652),
            (10, 23.771158263566829),
            (25, 2.2943227222432082),
            (40, 0.066856339016925429),
            (48, 0.003260758523694392),
        ];
        for (i, v) in expect {
            let got = s.sigmas()[i];
            assert!(((got - v) / v).abs() < 1e-12, "i={i}: {got} vs {v}");
        }
    }

    #[test]
    fn karras_errors() {
        assert!(karras_sigmas(0.002, 80.0, 7.0, 1).is_err());
        assert!(karras_sigmas(0.0, 80.0, 7.0, 10).is_err());
        assert!(karras_sigmas(-1.0, 80.0, 7.0, 10).is_err());
        assert!(karras_sigmas(5.0, 4.0, 7.0, 10).is_err());
    }

    #[test]
    fn equally_spaced_small() {
        let s = equally_spaced_shapes(5, 5, 3).unwrap();
        assert_eq!(hw(&s), vec![(5, 5), (3, 3), (1, 1)]);
        assert_eq!(hw(&equally_spaced_shapes(9, 4, 2).unwrap()), vec![(9, 4), (1, 1)]);
        assert!(equally_spaced_shapes(5, 5, 1).is_err());
    }

    #[test]
    fn equally_spaced_matches_float_formula() {
        let s = equally_spaced_shapes(144, 272, 50).unwrap();
        for (t, sh) in (1..=50).zip(s.shapes()) {
            let u = (t - 1) as f64 / 49.0;
            let h = (144.0 - u * 143.0 + 0.5).floor() as usize;
            let w = (272.0 - u * 271.0 + 0.5).floor() as usize;
            assert_eq!((sh.h, sh.w), (h, w), "t={t}");
        }
        assert_eq!(s.shapes()[49], Shape { h: 1, w: 1 });
    }

    #[test]
    fn unit_shrink_cases() {
        let s = unit_shrink_shapes(144, 272, 50).unwrap();
        assert_eq!(s.shapes()[0], Shape { h: 144, w: 272 });
        assert_eq!(s.shapes()[49], Shape { h: 95, w: 223 });
        for p in s.shapes().windows(2) {
            assert_eq!(p[0].h - p[1].h, 1);
            assert_eq!(p[0].w - p[1].w, 1);
        }
        assert_eq!(
            hw(&unit_shrink_shapes(3, 3, 5).unwrap()),
            vec![(3, 3), (2, 2), (1, 1), (1, 1), (1, 1)]
        );
        assert_eq!(hw(&unit_shrink_shapes(7, 2, 1).unwrap()), vec![(7, 2)]);
    }

    #[test]
    fn tandem_cases() {
        assert_eq!(
            tandem_shapes(13, 7, 9, 1).unwrap(),
            equally_spaced_shapes(13, 7, 9).unwrap()
        );
        let all = tandem_shapes(6, 4, 10, 10).unwrap();
        assert!(all.is_identity());
        assert_eq!(all.len(), 10);
        // level ramp over 3 levels: 8, 8 - 3.5 = 4.5 -> 5 (half up), 1
        assert_eq!(
            hw(&tandem_shapes(8, 8, 6, 2).unwrap()),
            vec![(8, 8), (8, 8), (5, 5), (5, 5), (1, 1), (1, 1)]
        );
        // ragged last group
        assert_eq!(
            hw(&tandem_shapes(5, 5, 5, 2).unwrap()),
            vec![(5, 5), (5, 5), (3, 3), (3, 3), (1, 1)]
        );
        assert!(tandem_shapes(8, 8, 6, 7).is_err());
        assert!(tandem_shapes(8, 8, 6, 0).is_err());
    }

    #[test]
    fn identity_cases() {
        let s = identity_shapes(4, 4, 3).unwrap();
        assert_eq!(hw(&s), vec![(4, 4); 3]);
        assert_eq!(normalized_mean_area(&s), 1.0);
        assert_eq!(speedup(&s), 1.0);
    }

    #[test]
    fn alpha_examples() {
        let s = equally_spaced_shapes(5, 5, 3).unwrap();
        assert_eq!(s.total_area(), 35);
        assert!((normalized_mean_area(&s) - 7.0 / 15.0).abs() < 1e-15);
        let u = unit_shrink_shapes(144, 272, 50).unwrap();
        let a = normalized_mean_area(&u);
        assert!((a - 0.760).abs() < 1e-3, "{a}");
        assert!((speedup(&u) - 1.32).abs() < 0.01);
    }

    #[test]
    fn closed_form_cases() {
        assert_eq!(unit_shrink_speedup_closed_form(12, 9, 1).unwrap(), 1.0);
        let brute = speedup(&unit_shrink_shapes(10, 10, 5).unwrap());
        let cf = unit_shrink_speedup_closed_form(10, 10, 5).unwrap();
        // sum A_t = 100 + 81 + 64 + 49 + 36 = 330 of 500
        assert!((brute - 500.0 / 330.0).abs() < 1e-12);
        assert!(((cf - brute) / brute).abs() < 1e-9);
        let s = unit_shrink_speedup_closed_form(144, 272, 50).unwrap();
        assert!((s - 1.32).abs() < 0.01);
        assert!(unit_shrink_speedup_closed_form(4, 10, 5).is_err());
    }

    #[test]
    fn schedule_validation() {
        let full = Shape { h: 4, w: 4 };
        assert!(ShapeSchedule::new(vec![Shape { h: 3, w: 4 }], full).is_err());
        assert!(ShapeSchedule::new(vec![full, Shape { h: 2, w: 2 }, Shape { h: 3, w: 2 }], full).is_err());
        assert!(ShapeSchedule::new(vec![full, Shape { h: 5, w: 1 }], full).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![1.0, 1.0]).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![1.0, 2.0]).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![0.5]).is_ok());
    }

    #[test]
    fn audit_lines() {
        let n = karras_sigmas(0.5, 2.0, 7.0, 3).unwrap();
        let s = equally_spaced_shapes(5, 5, 3).unwrap();
        let text = schedule_lines(&n, &s).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t h w sigma");
        assert!(lines[1].starts_with("1 5 5 5e-1"));
        assert!(lines[3].starts_with("3 1 1 2e0"));
    }
}
