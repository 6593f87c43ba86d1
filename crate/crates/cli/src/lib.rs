//! The `hdd` command line: argument handling and exit codes. The
//! subcommands themselves live in [`commands`].

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{flag_name, Config, ConfigError, KEYS};

pub const ENV_CONFIG: &str = "HDD_CONFIG";

/// Failure of one invocation, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files: exit 1.
    Invalid(String),
    /// A check ran and did not pass (scorecard, klcheck): exit 1.
    Failed(String),
    /// The computation itself failed: exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Invalid(_) | Self::Failed(_) => 1,
            Self::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Invalid(m) | Self::Failed(m) | Self::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Invalid(e.to_string())
    }
}

impl From<hdd_core::Error> for CliError {
    fn from(e: hdd_core::Error) -> Self {
        use hdd_core::Error as E;
        match e {
            E::TrainingDiverged { .. } | E::NonFiniteOutput(_) | E::SamplingFailed { .. } => {
                Self::Runtime(e.to_string())
            }
            _ => Self::Invalid(e.to_string()),
        }
    }
}

// short spellings kept for the documented invocations
fn key_alias(key: &str) -> Option<&'static str> {
    match key {
        "run.seed" => Some("seed"),
        "shapes.kind" => Some("shapes"),
        "klcheck.instances" => Some("instances"),
        "klcheck.max_support" => Some("max-support"),
        _ => None,
    }
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

pub fn command() -> Command {
    let mut cmd = Command::new("hdd")
        .about("Hierarchical diffusion downscaling toolkit")
        .version(env!("CARGO_PKG_VERSION"))
        .arg(path_arg("config", "key = value file applied after $HDD_CONFIG").global(true))
        .arg(
            Arg::new("print-effective-config")
                .long("print-effective-config")
                .action(ArgAction::SetTrue)
                .global(true)
                .help("print every resolved key and exit"),
        );
    for k in KEYS {
        let mut a = Arg::new(k.key)
            .long(flag_name(k.key))
            .value_name("VALUE")
            .help(k.help)
            .global(true)
            .help_heading("Configuration");
        if let Some(alias) = key_alias(k.key) {
            a = a.visible_alias(alias);
        }
        cmd = cmd.arg(a);
    }
    cmd.subcommand(
        Command::new("synth")
            .about("write synthetic (coarse, fine) training and test pairs")
            .arg(path_arg("out", "output directory").required(true)),
    )
    .subcommand(
        Command::new("train")
            .about("train the toy denoiser on a synth directory")
            .arg(path_arg("data", "directory written by synth").required(true))
            .arg(path_arg("out", "checkpoint to write").required(true))
            .arg(path_arg("loss-csv", "per-epoch loss curve")),
    )
    .subcommand(
        Command::new("sample")
            .about("downscale coarse fields with a trained model")
            .arg(path_arg("model", "checkpoint").required(true))
            .arg(path_arg("coarse", "single coarse grid").conflicts_with("data"))
            .arg(path_arg("data", "synth directory; samples every test pair"))
            .arg(path_arg("out", "output grid (with --coarse) or directory (with --data)").required(true))
            .arg(
                Arg::new("vanilla")
                    .long("vanilla")
                    .action(ArgAction::SetTrue)
                    .help("plain full-resolution sampler, ignoring the shape schedule"),
            ),
    )
    .subcommand(
        Command::new("speedup")
            .about("normalized mean area and ideal speed-up of a shape schedule")
            .arg(
                Arg::new("kind")
                    .long("kind")
                    .value_name("KIND")
                    .help("defaults to shapes.kind"),
            )
            .arg(
                Arg::new("H")
                    .long("H")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize)),
            )
            .arg(
                Arg::new("W")
                    .long("W")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize)),
            )
            .arg(
                Arg::new("T")
                    .long("T")
                    .value_name("N")
                    .value_parser(clap::value_parser!(usize)),
            )
            .arg(
                Arg::new("print-schedule")
                    .long("print-schedule")
                    .action(ArgAction::SetTrue)
                    .help("also print the t h w sigma table"),
            ),
    )
    .subcommand(
        Command::new("rapsd")
            .about("radially averaged power spectrum of one grid channel")
            .arg(path_arg("input", "grid").required(true))
            .arg(
                Arg::new("channel")
                    .long("channel")
                    .value_name("N")
                    .default_value("0")
                    .value_parser(clap::value_parser!(usize)),
            )
            .arg(path_arg("out", "CSV file (default: stdout)")),
    )
    .subcommand(
        Command::new("eval")
            .about("score predictions against observations")
            .arg(path_arg("obs", "observed grid").requires("pred").conflicts_with("data"))
            .arg(path_arg("pred", "predicted grid; repeat for an ensemble").action(ArgAction::Append))
            .arg(path_arg("data", "synth directory with test pairs").requires("pred-dir"))
            .arg(path_arg("pred-dir", "directory written by sample --data"))
            .arg(
                Arg::new("no-fail")
                    .long("no-fail")
                    .action(ArgAction::SetTrue)
                    .help("exit 0 even when the scorecard does not pass"),
            ),
    )
    .subcommand(Command::new("klcheck").about("random-instance check of the KL chain rule and telescoping"))
    .subcommand(
        Command::new("footprint")
            .about("energy and CO2 of a device,hours run log")
            .arg(path_arg("log", "CSV with device,hours rows").required(true))
            .arg(path_arg("factors", "key = value emission factors"))
            .arg(
                Arg::new("ksu")
                    .long("ksu")
                    .value_name("KSU")
                    .value_parser(clap::value_parser!(f64))
                    .help("CPU allocation in thousands of service units"),
            ),
    )
}

fn read_text(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Resolves defaults, `$HDD_CONFIG`, `--config` and flags.
pub fn resolve_config(m: &ArgMatches, env_config: Option<PathBuf>) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(p) = env_config {
        cfg.apply_text(&read_text(&p)?, &p.display().to_string())?;
    }
    if let Some(p) = m.get_one::<PathBuf>("config") {
        cfg.apply_text(&read_text(p)?, &p.display().to_string())?;
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k.key) {
            cfg.set(k.key, v).map_err(|message| ConfigError {
                source: format!("--{}", flag_name(k.key)),
                line: None,
                message,
            })?;
        }
    }
    Ok(cfg)
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("hdd: {}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    let env_config = std::env::var_os(ENV_CONFIG)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    match dispatch(&matches, env_config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hdd: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(m: &ArgMatches, env_config: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = resolve_config(m, env_config)?;
    if m.get_flag("print-effective-config") {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let Some((name, sub)) = m.subcommand() else {
        return Err(CliError::Invalid("no subcommand given (see hdd --help)".into()));
    };
    let path = |k: &str| sub.get_one::<PathBuf>(k).cloned();
    let need = |k: &str| path(k).ok_or_else(|| CliError::Invalid(format!("--{k} is required")));
    match name {
        "synth" => commands::synth(&cfg, &need("out")?),
        "train" => commands::train(&cfg, &need("data")?, &need("out")?, path("loss-csv").as_deref()),
        "sample" => {
            let model = need("model")?;
            let out = need("out")?;
            let vanilla = sub.get_flag("vanilla");
            match (path("coarse"), path("data")) {
                (Some(c), None) => commands::sample_one(&cfg, &model, &c, &out, vanilla),
                (None, Some(d)) => commands::sample_dir(&cfg, &model, &d, &out, vanilla),
                _ => Err(CliError::Invalid(
                    "sample needs exactly one of --coarse or --data".into(),
                )),
            }
        }
        "speedup" => {
            let kind = match sub.get_one::<String>("kind") {
                Some(k) => k
                    .parse()
                    .map_err(|e: hdd_core::Error| CliError::Invalid(format!("--kind: {e}")))?,
                None => cfg.shape_kind,
            };
            let h = sub.get_one::<usize>("H").copied().unwrap_or(cfg.height);
            let w = sub.get_one::<usize>("W").copied().unwrap_or(cfg.width);
            let t = sub.get_one::<usize>("T").copied().unwrap_or(cfg.steps);
            commands::speedup(&cfg, kind, h, w, t, sub.get_flag("print-schedule"))
        }
        "rapsd" => commands::rapsd(
            &cfg,
            &need("input")?,
            *sub.get_one::<usize>("channel").expect("has default"),
            path("out").as_deref(),
        ),
        "eval" => match (path("obs"), path("data")) {
            (Some(obs), None) => {
                let preds: Vec<PathBuf> = sub.get_many::<PathBuf>("pred").into_iter().flatten().cloned().collect();
                commands::eval_files(&cfg, &obs, &preds, !sub.get_flag("no-fail"))
            }
            (None, Some(d)) => commands::eval_dir(&d, &need("pred-dir")?),
            _ => Err(CliError::Invalid(
                "eval needs --obs with --pred, or --data with --pred-dir".into(),
            )),
        },
        "klcheck" => commands::klcheck(&cfg),
        "footprint" => commands::footprint(
            &cfg,
            &need("log")?,
            path("factors").as_deref(),
            sub.get_one::<f64>("ksu").copied(),
        ),
        other => Err(CliError::Invalid(format!("unknown subcommand {other}"))),
    }
}
