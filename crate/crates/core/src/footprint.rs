//! Energy and CO2 accounting for GPU-hours and CPU service units.
//!
//! Device energy is `power * PUE * hours`; emissions multiply energy by a
//! grid factor `gamma` (kg CO2 per kWh). CPU allocations are charged in
//! service units, each worth a fixed amount of energy.

use std::collections::BTreeMap;

use crate::error::{invalid, ParseError, Result};

pub const DEFAULT_PUE: f64 = 1.3;
pub const DEFAULT_GAMMA: f64 = 0.73;
pub const DEFAULT_KWH_PER_SU: f64 = 9.25e-3;

/// Per-device draw in kW used by [`EmissionFactors::default`].
pub const DEFAULT_DEVICES: [(&str, f64); 3] = [("a100", 0.8125), ("v100", 0.40), ("cpu_core", 0.0142)];

#[derive(Clone, Debug, PartialEq)]
pub struct EmissionFactors {
    pub pue: f64,
    /// kg CO2 per kWh.
    pub gamma: f64,
    /// Energy charged per CPU service unit, kWh.
    pub kwh_per_su: f64,
    /// Device name (lower case) to kW per device.
    pub devices: BTreeMap<String, f64>,
}

impl Default for EmissionFactors {
    fn default() -> Self {
        Self {
            pue: DEFAULT_PUE,
            gamma: DEFAULT_GAMMA,
            kwh_per_su: DEFAULT_KWH_PER_SU,
            devices: DEFAULT_DEVICES.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl EmissionFactors {
    pub fn validate(&self) -> Result<()> {
        if !(self.pue >= 1.0 && self.pue.is_finite()) {
            return Err(invalid(format!("pue must be at least 1, got {}", self.pue)));
        }
        positive("gamma", self.gamma)?;
        positive("kwh_per_su", self.kwh_per_su)?;
        for (name, kw) in &self.devices {
            positive(&format!("power of {name}"), *kw)?;
        }
        Ok(())
    }

    pub fn device_kw(&self, device: &str) -> Result<f64> {
        self.devices.get(&device.to_ascii_lowercase()).copied().ok_or_else(|| {
            let known: Vec<&str> = self.devices.keys().map(String::as_str).collect();
            invalid(format!("unknown device {device:?} (known: {})", known.join(", ")))
        })
    }
}

/// Reads `key = value` lines over the defaults. Keys are `pue`, `gamma`,
/// `kwh_per_su` and `device.<name>` (kW); `#` starts a comment.
pub fn parse_factors(text: &str) -> Result<EmissionFactors, ParseError> {
    apply_factors(EmissionFactors::default(), text)
}

/// Like [`parse_factors`] but on top of `base`.
pub fn apply_factors(base: EmissionFactors, text: &str) -> Result<EmissionFactors, ParseError> {
    let mut f = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ParseError::Text { line: i + 1, message };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
        let key = key.trim();
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(format!("{key}: not a number: {:?}", value.trim())))?;
        match key {
            "pue" => f.pue = value,
            "gamma" => f.gamma = value,
            "kwh_per_su" => f.kwh_per_su = value,
            _ => match key.strip_prefix("device.") {
                Some(name) if !name.is_empty() => {
                    f.devices.insert(name.to_ascii_lowercase(), value);
                }
                _ => return Err(err(format!("unknown key {key:?}"))),
            },
        }
        f.validate().map_err(|e| err(e.to_string()))?;
    }
    Ok(f)
}

/// `(kWh, kg CO2)` for `hours` on one device.
pub fn gpu_hours_emissions(device: &str, hours: f64, factors: &EmissionFactors) -> Result<(f64, f64)> {
    if !(hours >= 0.0 && hours.is_finite()) {
        return Err(invalid(format!("hours must be non-negative, got {hours}")));
    }
    let kwh = factors.device_kw(device)? * factors.pue * hours;
    Ok((kwh, kwh * factors.gamma))
}

/// `(kWh, kg CO2)` for `ksu` thousand CPU service units.
pub fn cpu_ksu_emissions(ksu: f64, factors: &EmissionFactors) -> Result<(f64, f64)> {
    if !(ksu >= 0.0 && ksu.is_finite()) {
        return Err(invalid(format!("kSU must be non-negative, got {ksu}")));
    }
    let kwh = 1000.0 * ksu * factors.kwh_per_su;
    Ok((kwh, kwh * factors.gamma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunEntry {
    pub device: String,
    pub hours: f64,
}

/// Parses `device,hours` rows. A leading `device,hours` header is optional.
pub fn parse_run_log(text: &str) -> Result<Vec<RunEntry>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if out.is_empty() && line.replace(' ', "").eq_ignore_ascii_case("device,hours") {
            continue;
        }
        let err = |message: String| ParseError::Text { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [device, hours] = fields[..] else {
            return Err(err(format!("expected 2 fields, found {}", fields.len())));
        };
        if device.is_empty() {
            return Err(err("empty device name".into()));
        }
        let hours: f64 = hours.parse().map_err(|_| err(format!("invalid hours {hours:?}")))?;
        if !(hours >= 0.0 && hours.is_finite()) {
            return Err(err(format!("hours must be non-negative, got {hours}")));
        }
        out.push(RunEntry {
            device: device.to_ascii_lowercase(),
            hours,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// `(device, hours, kWh, kg)` per device, sorted by name, before overhead.
    pub rows: Vec<(String, f64, f64, f64)>,
    pub overhead_fraction: f64,
    /// Totals including overhead.
    pub total_kwh: f64,
    pub total_kg: f64,
}

impl RunSummary {
    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>10} {:>10} {:>10}\n", "device", "hours", "kWh", "kgCO2e");
        for (d, h, e, m) in &self.rows {
            s += &format!("{d:<10} {h:>10.2} {e:>10.2} {m:>10.2}\n");
        }
        s += &format!(
            "{:<10} {:>10} {:>10.2} {:>10.2}\n",
            format!("total+{:.0}%", self.overhead_fraction * 100.0),
            "",
            self.total_kwh,
            self.total_kg
        );
        s
    }
}

pub fn summarize_run(log: &[RunEntry], factors: &EmissionFactors, overhead_fraction: f64) -> Result<RunSummary> {
    factors.validate()?;
    if !(overhead_fraction >= 0.0 && overhead_fraction.is_finite()) {
        return Err(invalid(format!(
            "overhead fraction must be non-negative, got {overhead_fraction}"
        )));
    }
    let mut hours: BTreeMap<&str, f64> = BTreeMap::new();
    for e in log {
        *hours.entry(e.device.as_str()).or_default() += e.hours;
    }
    let mut rows = Vec::with_capacity(hours.len());
    let (mut kwh, mut kg) = (0.0, 0.0);
    for (d, h) in hours {
        let (e, m) = gpu_hours_emissions(d, h, factors)?;
        kwh += e;
        kg += m;
        rows.push((d.to_string(), h, e, m));
    }
    let scale = 1.0 + overhead_fraction;
    Ok(RunSummary {
        rows,
        overhead_fraction,
        total_kwh: kwh * scale,
        total_kg: kg * scale,
    })
}

/// Total kg CO2 of a run log, scaled by `1 + overhead_fraction`.
pub fn run_emissions(log: &[RunEntry], factors: &EmissionFactors, overhead_fraction: f64) -> Result<f64> {
    Ok(summarize_run(log, factors, overhead_fraction)?.total_kg)
}
