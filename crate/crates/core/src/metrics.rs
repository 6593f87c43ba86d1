//! Pixelwise, ensemble and seasonal-climate verification metrics.
//!
//! Weighted metrics take a `[height * width]` weight vector (see
//! [`crate::grid::area_weights`]) that is broadcast across channels, and
//! normalize by the total weight.

use crate::error::{invalid, Error, Result};
use crate::grid::{area_weights, GeoExtent, Grid, Shape};

pub const MAPE_MAX: f64 = 0.75;
pub const SCOR_MIN: f64 = 0.7;
pub const NRMSE_MAX: f64 = 0.6;
pub const MAD_MAX: f64 = 2.0;
pub const PSNR_CAP: f64 = 200.0;

fn check_pair(a: &Grid, b: &Grid) -> Result<()> {
    if a.shape() != b.shape() || a.channels() != b.channels() {
        return Err(invalid(format!(
            "grids differ: {}x{} channels vs {}x{} channels",
            a.shape(),
            a.channels(),
            b.shape(),
            b.channels()
        )));
    }
    Ok(())
}

fn check_weights(w: &[f64], shape: Shape) -> Result<()> {
    if w.len() != shape.h * shape.w {
        return Err(invalid(format!("{} weights for a {shape} grid", w.len())));
    }
    if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
        return Err(invalid("weights must be finite, non-negative and not all zero"));
    }
    Ok(())
}

pub fn rmse(pred: &Grid, obs: &Grid) -> Result<f64> {
    check_pair(pred, obs)?;
    let n = pred.data().len() as f64;
    let ss: f64 = pred.data().iter().zip(obs.data()).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((ss / n).sqrt())
}

/// `20 log10(range / rmse)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &Grid, obs: &Grid, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(invalid(format!("data range must be positive, got {data_range}")));
    }
    let e = rmse(pred, obs)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (data_range / e).log10()).min(PSNR_CAP))
}

/// `max - min` of a grid, the default PSNR range.
pub fn data_range(g: &Grid) -> f64 {
    let (lo, hi) = g.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    hi - lo
}

/// Energy-form ensemble CRPS of one scalar observation, with the pair sum
/// over all ordered member pairs (identical pairs included).
pub fn crps_scalar(members: &mut [f64], obs: f64) -> f64 {
    let m = members.len() as f64;
    let abs_err = members.iter().map(|x| (x - obs).abs()).sum::<f64>() / m;
    members.sort_by(f64::total_cmp);
    // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - m + 1) x_(i)
    let spread: f64 = members
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - m + 1.0) * x)
        .sum();
    abs_err - spread / (m * m)
}

/// Pixelwise CRPS, area-weighted with the observation grid's weights.
pub fn crps(ensemble: &[Grid], obs: &Grid) -> Result<f64> {
    if ensemble.len() < 2 {
        return Err(invalid(format!(
            "CRPS needs at least 2 members, got {}",
            ensemble.len()
        )));
    }
    for g in ensemble {
        check_pair(g, obs)?;
    }
    let w = area_weights(obs)?;
    let hw = obs.height() * obs.width();
    let mut buf = vec![0.0; ensemble.len()];
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in obs.data().iter().enumerate() {
        for (b, g) in buf.iter_mut().zip(ensemble) {
            *b = g.data()[i];
        }
        let wi = w[i % hw];
        num += wi * crps_scalar(&mut buf, *y);
        den += wi;
    }
    Ok((num / den).max(0.0))
}

/// Weighted mean absolute relative error.
pub fn mape(pred: &Grid, obs: &Grid, weights: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    check_weights(weights, obs.shape())?;
    let hw = obs.height() * obs.width();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (p, o)) in pred.data().iter().zip(obs.data()).enumerate() {
        if *o == 0.0 {
            let cell = i % hw;
            return Err(Error::DivisionByZero {
                row: cell / obs.width(),
                col: cell % obs.width(),
            });
        }
        let w = weights[i % hw];
        num += w * ((p - o) / o).abs();
        den += w;
    }
    Ok(num / den)
}

/// Weighted Pearson correlation.
pub fn scor(pred: &Grid, obs: &Grid, weights: &[f64]) -> Result<f64> {
    check_pair(pred, obs)?;
    check_weights(weights, obs.shape())?;
    let hw = obs.height() * obs.width();
    let w = |i: usize| weights[i % hw];
    let sw: f64 = (0..obs.data().len()).map(w).sum();
    let mean = |d: &[f64]| d.iter().enumerate().map(|(i, v)| w(i) * v).sum::<f64>() / sw;
    let (mp, mo) = (mean(pred.data()), mean(obs.data()));
    let (mut cov, mut vp, mut vo) = (0.0, 0.0, 0.0);
    for (i, (p, o)) in pred.data().iter().zip(obs.data()).enumerate() {
        let (dp, dobs) = (p - mp, o - mo);
        cov += w(i) * dp * dobs;
        vp += w(i) * dp * dp;
        vo += w(i) * dobs * dobs;
    }
    if vp <= 0.0 || vo <= 0.0 {
        return Err(Error::Degenerate("spatial correlation of a constant field".into()));
    }
    Ok((cov / (vp * vo).sqrt()).clamp(-1.0, 1.0))
}

/// Mean rainfall per calendar month, `values[month][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyClimatology {
    height: usize,
    width: usize,
    values: Vec<f64>,
    extent: GeoExtent,
}

pub const MONTH_NAMES: [&str; 12] = [
    "m01", "m02", "m03", "m04", "m05", "m06", "m07", "m08", "m09", "m10", "m11", "m12",
];

impl MonthlyClimatology {
    pub fn new(height: usize, width: usize, values: Vec<f64>, extent: GeoExtent) -> Result<Self> {
        Shape::new(height, width)?;
        extent.validate()?;
        if values.len() != 12 * height * width {
            return Err(invalid(format!(
                "climatology needs 12 x {height} x {width} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("climatology values must be finite and non-negative"));
        }
        Ok(Self {
            height,
            width,
            values,
            extent,
        })
    }

    /// From a 12-channel grid whose channels are named `m01`..`m12`.
    pub fn from_grid(g: &Grid) -> Result<Self> {
        if g.channel_names() != MONTH_NAMES {
            return Err(invalid("a climatology grid needs exactly the channels m01..m12"));
        }
        Self::new(g.height(), g.width(), g.data().to_vec(), g.extent())
    }

    /// From twelve single-channel grids, January first.
    pub fn from_months(months: &[Grid]) -> Result<Self> {
        if months.len() != 12 {
            return Err(invalid(format!("need 12 monthly grids, got {}", months.len())));
        }
        let first = &months[0];
        let mut values = Vec::with_capacity(12 * first.height() * first.width());
        for (m, g) in months.iter().enumerate() {
            if g.channels() != 1 || g.shape() != first.shape() {
                return Err(invalid(format!("monthly grid {} has a different layout", m + 1)));
            }
            values.extend_from_slice(g.data());
        }
        Self::new(first.height(), first.width(), values, first.extent())
    }

    pub fn to_grid(&self) -> Result<Grid> {
        Grid::new(
            self.height,
            self.width,
            MONTH_NAMES.iter().map(|s| s.to_string()).collect(),
            self.extent,
            self.values.clone(),
        )
    }

    pub fn shape(&self) -> Shape {
        Shape {
            h: self.height,
            w: self.width,
        }
    }

    pub fn extent(&self) -> GeoExtent {
        self.extent
    }

    pub fn value(&self, month: usize, row: usize, col: usize) -> f64 {
        self.values[(month * self.height + row) * self.width + col]
    }

    fn cell_series(&self, cell: usize) -> [f64; 12] {
        let hw = self.height * self.width;
        std::array::from_fn(|m| self.values[m * hw + cell])
    }

    /// Annual mean field.
    pub fn annual_mean(&self) -> Result<Grid> {
        let hw = self.height * self.width;
        let data = (0..hw)
            .map(|c| self.cell_series(c).iter().sum::<f64>() / 12.0)
            .collect();
        Grid::new(self.height, self.width, vec!["annual".into()], self.extent, data)
    }

    /// Seasonal amplitude `max_m P - mean_m P` per cell.
    pub fn amplitudes(&self) -> Vec<f64> {
        (0..self.height * self.width)
            .map(|c| {
                let s = self.cell_series(c);
                s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.iter().sum::<f64>() / 12.0
            })
            .collect()
    }

    /// Month of maximum (1..=12) per cell; ties go to the earliest month.
    pub fn phases(&self) -> Vec<usize> {
        (0..self.height * self.width)
            .map(|c| {
                let s = self.cell_series(c);
                let mut best = 0;
                for m in 1..12 {
                    if s[m] > s[best] {
                        best = m;
                    }
                }
                best + 1
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NrmseMode {
    /// Denominator `sum w A_obs^2 / W`, without a square root.
    #[default]
    AsPrinted,
    /// Denominator `sqrt(sum w A_obs^2 / W)`, dimensionless ratio.
    RmsDenominator,
}

impl std::str::FromStr for NrmseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(Self::AsPrinted),
            "rms" => Ok(Self::RmsDenominator),
            _ => Err(invalid(format!(
                "unknown NRMSE mode {s:?} (expected as-printed or rms)"
            ))),
        }
    }
}

impl std::fmt::Display for NrmseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AsPrinted => "as-printed",
            Self::RmsDenominator => "rms",
        })
    }
}

fn check_clims(a: &MonthlyClimatology, b: &MonthlyClimatology, weights: &[f64]) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(format!(
            "climatologies differ in shape: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    check_weights(weights, a.shape())
}

pub fn amplitude_nrmse(
    pred: &MonthlyClimatology,
    obs: &MonthlyClimatology,
    weights: &[f64],
    mode: NrmseMode,
) -> Result<f64> {
    check_clims(pred, obs, weights)?;
    let (ap, ao) = (pred.amplitudes(), obs.amplitudes());
    let sw: f64 = weights.iter().sum();
    let num = (weights
        .iter()
        .zip(ap.iter().zip(&ao))
        .map(|(w, (p, o))| w * (p - o) * (p - o))
        .sum::<f64>()
        / sw)
        .sqrt();
    let den_sq = weights.iter().zip(&ao).map(|(w, o)| w * o * o).sum::<f64>() / sw;
    if den_sq <= 0.0 {
        return Err(Error::Degenerate("observed seasonal amplitudes are all zero".into()));
    }
    Ok(match mode {
        NrmseMode::AsPrinted => num / den_sq,
        NrmseMode::RmsDenominator => num / den_sq.sqrt(),
    })
}

/// Shortest distance between two months on the 12-month circle.
pub fn circular_month_distance(a: usize, b: usize) -> usize {
    let d = a.abs_diff(b) % 12;
    d.min(12 - d)
}

/// Weighted mean circular distance between the months of maximum.
pub fn phase_mad(pred: &MonthlyClimatology, obs: &MonthlyClimatology, weights: &[f64]) -> Result<f64> {
    check_clims(pred, obs, weights)?;
    let sw: f64 = weights.iter().sum();
    let num: f64 = weights
        .iter()
        .zip(pred.phases().iter().zip(obs.phases()))
        .map(|(w, (p, o))| w * circular_month_distance(*p, o) as f64)
        .sum();
    Ok(num / sw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scorecard {
    pub mape: f64,
    pub scor: f64,
    pub nrmse: f64,
    pub mad: f64,
    pub mape_pass: bool,
    pub scor_pass: bool,
    pub nrmse_pass: bool,
    pub mad_pass: bool,
    pub overall: bool,
}

impl Scorecard {
    /// Applies the inclusive benchmark thresholds.
    pub fn from_metrics(mape: f64, scor: f64, nrmse: f64, mad: f64) -> Self {
        let mape_pass = mape <= MAPE_MAX;
        let scor_pass = scor >= SCOR_MIN;
        let nrmse_pass = nrmse <= NRMSE_MAX;
        let mad_pass = mad <= MAD_MAX;
        Self {
            mape,
            scor,
            nrmse,
            mad,
            mape_pass,
            scor_pass,
            nrmse_pass,
            mad_pass,
            overall: mape_pass && scor_pass && nrmse_pass && mad_pass,
        }
    }

    pub fn passed(&self) -> usize {
        [self.mape_pass, self.scor_pass, self.nrmse_pass, self.mad_pass]
            .iter()
            .filter(|p| **p)
            .count()
    }
}

/// All four seasonal-climate metrics; MAPE and SCor use the annual means.
pub fn scorecard(
    pred: &MonthlyClimatology,
    obs: &MonthlyClimatology,
    weights: &[f64],
    mode: NrmseMode,
) -> Result<Scorecard> {
    check_clims(pred, obs, weights)?;
    let (pa, oa) = (pred.annual_mean()?, obs.annual_mean()?);
    Ok(Scorecard::from_metrics(
        mape(&pa, &oa, weights)?,
        scor(&pa, &oa, weights)?,
        amplitude_nrmse(pred, obs, weights, mode)?,
        phase_mad(pred, obs, weights)?,
    ))
}
