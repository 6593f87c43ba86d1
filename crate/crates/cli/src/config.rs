//! Flat `namespace.key = value` configuration.
//!
//! Every tunable has one dotted key, a default, and a command-line flag with
//! the same name in kebab case (`noise.sigma_max` is `--noise.sigma-max`).
//! Sources are applied in order: defaults, the file named by `HDD_CONFIG`,
//! `--config FILE`, then individual flags.

use std::fmt;

use hdd_core::diffusion::{LossWeighting, SamplerMode};
use hdd_core::metrics::NrmseMode;
use hdd_core::schedules::ShapeKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// File name or `--flag`.
    pub source: String,
    /// 1-based line for file sources.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub struct KeyInfo {
    pub key: &'static str,
    pub help: &'static str,
}

macro_rules! config {
    ($($field:ident : $ty:ty = $default:expr, $key:literal, $help:literal;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $(pub $field: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        pub const KEYS: &[KeyInfo] = &[$(KeyInfo { key: $key, help: $help },)*];

        impl Config {
            /// Parses `raw` into the field named by `key`.
            pub fn set(&mut self, key: &str, raw: &str) -> Result<(), String> {
                match key {
                    $($key => {
                        self.$field = raw
                            .parse::<$ty>()
                            .map_err(|e| format!("{key}: invalid value {raw:?}: {e}"))?;
                    })*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$field.to_string()),)*
                    _ => None,
                }
            }
        }
    };
}

config! {
    seed: u64 = 0, "run.seed", "master seed; every random stream is derived from it";

    sigma_min: f64 = 0.002, "noise.sigma_min", "smallest noise level";
    sigma_max: f64 = 80.0, "noise.sigma_max", "largest noise level";
    rho: f64 = 7.0, "noise.rho", "Karras schedule exponent";
    steps: usize = 50, "noise.steps", "number of noise levels T";

    shape_kind: ShapeKind = ShapeKind::Equal, "shapes.kind", "equal, unit, tandem or identity";
    tandem_k: usize = 1, "shapes.k", "denoising steps per resolution level (tandem)";

    s_churn: f64 = 1.0, "sampler.s_churn", "churn amount";
    s_min: f64 = 0.0, "sampler.s_min", "lowest noise level that receives churn";
    s_max: f64 = f64::INFINITY, "sampler.s_max", "highest noise level that receives churn";
    s_noise: f64 = 1.0, "sampler.s_noise", "churn noise inflation";
    sampler_mode: SamplerMode = SamplerMode::EdmChurn, "sampler.mode", "edm-churn or literal";
    ensemble: usize = 1, "sampler.ensemble", "members drawn per conditioning field";

    beta: f64 = 2.4, "synth.beta", "spectral slope of the synthetic fields";
    height: usize = 64, "synth.height", "fine-grid height";
    width: usize = 64, "synth.width", "fine-grid width";
    factor: usize = 4, "synth.factor", "coarsening factor between fine and coarse";
    train_pairs: usize = 256, "synth.train_pairs", "training pairs written by synth";
    test_pairs: usize = 64, "synth.test_pairs", "held-out pairs written by synth";
    field_std: f64 = 0.5, "synth.std", "standard deviation of every synthetic field";

    epochs: usize = 40, "train.epochs", "passes over the training pairs";
    batch_size: usize = 8, "train.batch_size", "examples per gradient step";
    learning_rate: f64 = 0.05, "train.learning_rate", "SGD step size";
    net_width: usize = 32, "train.width", "hidden channels of the toy network";
    sigma_data: f64 = 0.5, "train.sigma_data", "data standard deviation used for preconditioning";
    weighting: LossWeighting = LossWeighting::EdmEpsilon, "train.weighting", "edm-epsilon, edm-lambda or uniform";

    bins_per_decade: usize = 12, "spectral.bins_per_decade", "logarithmic RAPSD bins per decade";
    min_count: u64 = 1, "spectral.min_count", "merge low-frequency bins until each holds this many coefficients";

    data_range: f64 = 0.0, "eval.data_range", "PSNR data range; 0 uses the observed max - min";
    nrmse_mode: NrmseMode = NrmseMode::AsPrinted, "eval.nrmse_mode", "as-printed or rms";

    kl_instances: usize = 1000, "klcheck.instances", "random instances to check";
    kl_max_support: usize = 64, "klcheck.max_support", "largest fine support size";

    pue: f64 = 1.3, "footprint.pue", "power usage effectiveness";
    gamma: f64 = 0.73, "footprint.gamma", "kg CO2e per kWh";
    kwh_per_su: f64 = 9.25e-3, "footprint.kwh_per_su", "energy per CPU service unit";
    overhead: f64 = 0.0, "footprint.overhead", "fractional overhead added to run totals";
}

/// `noise.sigma_max` to `noise.sigma-max`.
pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    /// Applies `key = value` lines; `#` starts a comment. Keys may use `-`
    /// or `_`.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                source: source.to_string(),
                line: Some(i + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            self.set(&normalize_key(key), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text, "<config>")?;
        Ok(c)
    }

    /// Every key with its resolved value, in declaration order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.key, self.get(k.key).expect("declared key")))
            .collect()
    }
}
