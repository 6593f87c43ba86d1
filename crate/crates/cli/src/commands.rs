//! One function per subcommand. Results go to stdout, files to the given
//! paths; progress goes through `log`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hdd_core::diffusion::train::loss_curve_csv;
use hdd_core::diffusion::{
    sample_run, train as fit, vanilla_sample_run, Checkpoint, CheckpointMeta, ToyArch, ToyDenoiser, TrainConfig,
};
use hdd_core::footprint::{apply_factors, cpu_ksu_emissions, parse_run_log, summarize_run, EmissionFactors};
use hdd_core::grid::{area_weights, upsample};
use hdd_core::klcheck::campaign;
use hdd_core::metrics::{crps, data_range, psnr, rmse, scorecard, MonthlyClimatology, MONTH_NAMES};
use hdd_core::rng::derive_seed;
use hdd_core::schedules::{
    build_shapes, karras_sigmas, normalized_mean_area, schedule_lines, speedup as ideal_speedup, ChurnParams,
    NoiseSchedule, ShapeKind,
};
use hdd_core::spectral::{rapsd_with, RapsdOptions};
use hdd_core::synth::{make_pairs, manifest_csv, pair_seed, parse_manifest, ManifestEntry, PowerLawSpec};
use hdd_core::{Grid, Shape};
use log::info;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const MANIFEST: &str = "manifest.csv";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

fn read_grid(path: &Path) -> Result<Grid> {
    Grid::read_from(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn write_grid(g: &Grid, path: &Path) -> Result<()> {
    g.write_to(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// First 16 hex digits of the SHA-256 of the resolved configuration.
pub fn config_hash(cfg: &Config) -> String {
    hex::encode(&Sha256::digest(cfg.to_text().as_bytes())[..8])
}

fn pair_name(split: &str, i: usize, part: &str) -> String {
    format!("{split}_{i:04}_{part}.hddg")
}

pub fn synth(cfg: &Config, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut manifest = Vec::new();
    for (index, split, count) in [(0u64, "train", cfg.train_pairs), (1, "test", cfg.test_pairs)] {
        let spec = PowerLawSpec {
            std: cfg.field_std,
            ..PowerLawSpec::new(
                cfg.beta,
                cfg.height,
                cfg.width,
                derive_seed(cfg.seed, "synth", &[index]),
            )
        };
        for (i, (coarse, fine)) in make_pairs(&spec, cfg.factor, count)?.iter().enumerate() {
            for (part, g) in [("coarse", coarse), ("fine", fine)] {
                let name = pair_name(split, i, part);
                write_grid(g, &out.join(&name))?;
                manifest.push(ManifestEntry {
                    filename: name,
                    role: format!("{split}-{part}"),
                    seed: pair_seed(spec.seed, i),
                });
            }
        }
    }
    write_text(&out.join(MANIFEST), &manifest_csv(&manifest))?;
    println!(
        "wrote {} train and {} test pairs to {}",
        cfg.train_pairs,
        cfg.test_pairs,
        out.display()
    );
    Ok(())
}

/// `(coarse, fine)` pairs of one split, in manifest order.
fn load_pairs(dir: &Path, split: &str) -> Result<Vec<(String, Grid, Grid)>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let entries = parse_manifest(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.role == format!("{split}-coarse")) {
        let fine_name = e.filename.replacen("_coarse", "_fine", 1);
        if !entries
            .iter()
            .any(|f| f.filename == fine_name && f.role == format!("{split}-fine"))
        {
            return Err(CliError::Invalid(format!(
                "{}: {} has no matching {split}-fine entry",
                path.display(),
                e.filename
            )));
        }
        let stem = e.filename.trim_end_matches("_coarse.hddg").to_string();
        out.push((
            stem,
            read_grid(&dir.join(&e.filename))?,
            read_grid(&dir.join(&fine_name))?,
        ));
    }
    if out.is_empty() {
        return Err(CliError::Invalid(format!("{}: no {split} pairs", path.display())));
    }
    Ok(out)
}

fn noise_schedule(cfg: &Config) -> Result<NoiseSchedule> {
    Ok(karras_sigmas(cfg.sigma_min, cfg.sigma_max, cfg.rho, cfg.steps)?)
}

pub fn train(cfg: &Config, data: &Path, out: &Path, loss_csv: Option<&Path>) -> Result<()> {
    let pairs: Vec<(Grid, Grid)> = load_pairs(data, "train")?.into_iter().map(|(_, c, f)| (c, f)).collect();
    let channels = pairs[0].1.channels();
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: derive_seed(cfg.seed, "train", &[1]),
        steps: cfg.steps,
        sigma_min: cfg.sigma_min,
        sigma_max: cfg.sigma_max,
        rho: cfg.rho,
        shapes: cfg.shape_kind,
        tandem_k: cfg.tandem_k,
        weighting: cfg.weighting,
    };
    let arch = ToyArch::new(channels, pairs[0].0.channels(), cfg.net_width)?;
    let model = ToyDenoiser::init(arch, cfg.sigma_data, derive_seed(cfg.seed, "train", &[0]))?;
    info!("training on {} pairs for {} epochs", pairs.len(), cfg.epochs);
    let outcome = fit(model, &pairs, &tc)?;
    let meta = CheckpointMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        config_hash: config_hash(cfg),
    };
    Checkpoint::from_model(&outcome.model, meta)?
        .write_to(out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    if let Some(p) = loss_csv {
        write_text(p, &loss_curve_csv(&outcome.losses))?;
    }
    println!(
        "trained {} epochs, final loss {:.6}, wrote {}",
        cfg.epochs,
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ToyDenoiser> {
    let ck = Checkpoint::read_from(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(ck.model()?)
}

/// Draws `cfg.ensemble` samples conditioned on one coarse field.
fn draw(cfg: &Config, model: &ToyDenoiser, coarse: &Grid, index: u64, vanilla: bool) -> Result<Vec<Grid>> {
    let full = Shape {
        h: coarse.height() * cfg.factor,
        w: coarse.width() * cfg.factor,
    };
    let cond = upsample(coarse, full)?;
    let noise = noise_schedule(cfg)?;
    let shapes = build_shapes(cfg.shape_kind, full.h, full.w, cfg.steps, cfg.tandem_k)?;
    let churn = ChurnParams {
        s_churn: cfg.s_churn,
        s_min: cfg.s_min,
        s_max: cfg.s_max,
        s_noise: cfg.s_noise,
    };
    (0..cfg.ensemble.max(1) as u64)
        .map(|j| {
            let seed = derive_seed(cfg.seed, "sample", &[index, j]);
            let run = if vanilla {
                vanilla_sample_run(model, &cond, &noise, &churn, cfg.sampler_mode, seed)?
            } else {
                sample_run(model, &cond, &noise, &shapes, &churn, cfg.sampler_mode, seed)?
            };
            Ok(run.output)
        })
        .collect()
}

fn member_path(base: &Path, j: usize) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    base.with_file_name(format!("{stem}_e{j:02}.hddg"))
}

pub fn sample_one(cfg: &Config, model: &Path, coarse: &Path, out: &Path, vanilla: bool) -> Result<()> {
    let model = load_model(model)?;
    let coarse = read_grid(coarse)?;
    let members = draw(cfg, &model, &coarse, 0, vanilla)?;
    if members.len() == 1 {
        write_grid(&members[0], out)?;
        println!("wrote {}", out.display());
    } else {
        for (j, g) in members.iter().enumerate() {
            write_grid(g, &member_path(out, j))?;
        }
        println!("wrote {} members next to {}", members.len(), out.display());
    }
    Ok(())
}

pub fn sample_dir(cfg: &Config, model: &Path, data: &Path, out: &Path, vanilla: bool) -> Result<()> {
    let model = load_model(model)?;
    let pairs = load_pairs(data, "test")?;
    create_dir(out)?;
    for (i, (stem, coarse, _)) in pairs.iter().enumerate() {
        info!("sampling {stem}");
        for (j, g) in draw(cfg, &model, coarse, i as u64, vanilla)?.iter().enumerate() {
            write_grid(g, &out.join(format!("{stem}_pred_e{j:02}.hddg")))?;
        }
    }
    println!("sampled {} test pairs into {}", pairs.len(), out.display());
    Ok(())
}

pub fn speedup(cfg: &Config, kind: ShapeKind, h: usize, w: usize, t: usize, print_schedule: bool) -> Result<()> {
    let shapes = build_shapes(kind, h, w, t, cfg.tandem_k)?;
    println!("alpha = {:.6}", normalized_mean_area(&shapes));
    println!("speedup = {:.6}", ideal_speedup(&shapes));
    if print_schedule {
        let noise = karras_sigmas(cfg.sigma_min, cfg.sigma_max, cfg.rho, t)?;
        print!("{}", schedule_lines(&noise, &shapes)?);
    }
    Ok(())
}

pub fn rapsd(cfg: &Config, input: &Path, channel: usize, out: Option<&Path>) -> Result<()> {
    let g = read_grid(input)?;
    let opts = RapsdOptions {
        bins_per_decade: cfg.bins_per_decade,
        min_count: cfg.min_count,
    };
    let csv = rapsd_with(&g, channel, opts)?.to_csv();
    match out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn is_climatology(g: &Grid) -> bool {
    g.channel_names() == MONTH_NAMES
}

fn range_for(cfg: &Config, obs: &Grid) -> f64 {
    if cfg.data_range > 0.0 {
        cfg.data_range
    } else {
        data_range(obs)
    }
}

fn ensemble_mean(members: &[Grid]) -> Result<Grid> {
    let n = members.len() as f64;
    let mut acc = vec![0.0; members[0].data().len()];
    for m in members {
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += v / n;
        }
    }
    Ok(members[0].with_data(acc)?)
}

pub fn eval_files(cfg: &Config, obs: &Path, preds: &[PathBuf], fail_on_scorecard: bool) -> Result<()> {
    let obs = read_grid(obs)?;
    let preds = preds.iter().map(|p| read_grid(p)).collect::<Result<Vec<_>>>()?;
    let mean = ensemble_mean(&preds)?;
    let mut out = String::from("metric,value\n");
    writeln!(out, "rmse,{}", rmse(&mean, &obs)?).unwrap();
    writeln!(out, "psnr,{}", psnr(&mean, &obs, range_for(cfg, &obs))?).unwrap();
    if preds.len() > 1 {
        writeln!(out, "crps,{}", crps(&preds, &obs)?).unwrap();
    }
    if !(is_climatology(&obs) && is_climatology(&mean)) {
        print!("{out}");
        println!("scorecard n/a: needs 12-channel m01..m12 grids");
        return Ok(());
    }
    let (p, o) = (
        MonthlyClimatology::from_grid(&mean)?,
        MonthlyClimatology::from_grid(&obs)?,
    );
    let weights = area_weights(&obs)?;
    let card = scorecard(&p, &o, &weights, cfg.nrmse_mode)?;
    writeln!(out, "mape,{}", card.mape).unwrap();
    writeln!(out, "scor,{}", card.scor).unwrap();
    writeln!(out, "nrmse,{}", card.nrmse).unwrap();
    writeln!(out, "mad,{}", card.mad).unwrap();
    print!("{out}");
    let verdict = if card.overall { "PASS" } else { "FAIL" };
    println!("{verdict} {}/4", card.passed());
    if fail_on_scorecard && !card.overall {
        return Err(CliError::Failed(format!(
            "scorecard passed {}/4 criteria",
            card.passed()
        )));
    }
    Ok(())
}

pub fn eval_dir(data: &Path, pred_dir: &Path) -> Result<()> {
    let pairs = load_pairs(data, "test")?;
    let (mut r, mut r_mean, mut r_bilinear, mut c) = (0.0, 0.0, 0.0, 0.0);
    let mut members_seen = 0;
    for (stem, coarse, fine) in &pairs {
        let mut members = Vec::new();
        loop {
            let p = pred_dir.join(format!("{stem}_pred_e{:02}.hddg", members.len()));
            if !p.exists() {
                break;
            }
            members.push(read_grid(&p)?);
        }
        if members.is_empty() {
            return Err(CliError::Invalid(format!(
                "{}: no predictions for {stem}",
                pred_dir.display()
            )));
        }
        members_seen = members.len();
        r += rmse(&members[0], fine)?;
        r_mean += rmse(&ensemble_mean(&members)?, fine)?;
        r_bilinear += rmse(&upsample(coarse, fine.shape())?, fine)?;
        if members.len() > 1 {
            c += crps(&members, fine)?;
        }
    }
    let n = pairs.len() as f64;
    println!("metric,value");
    println!("rmse,{}", r / n);
    println!("rmse_bilinear,{}", r_bilinear / n);
    if members_seen > 1 {
        println!("rmse_ensemble_mean,{}", r_mean / n);
        println!("crps,{}", c / n);
    }
    Ok(())
}

pub fn klcheck(cfg: &Config) -> Result<()> {
    let s = campaign(
        cfg.kl_instances,
        cfg.kl_max_support,
        derive_seed(cfg.seed, "klcheck", &[0]),
    )?;
    let ok = s.passed(1e-10, 1e-12);
    println!(
        "klcheck: {} instances, max |chain residual| {:.3e}, max |telescoping residual| {:.3e}, min summand {:.3e}, max coarse-minus-fine KL {:.3e}: {}",
        s.instances,
        s.max_abs_residual,
        s.max_abs_telescoping_residual,
        s.min_summand,
        s.max_dpi_excess,
        if ok { "PASS" } else { "FAIL" }
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed("KL decomposition check failed".into()))
    }
}

pub fn footprint(cfg: &Config, log: &Path, factors: Option<&Path>, ksu: Option<f64>) -> Result<()> {
    let mut f = EmissionFactors {
        pue: cfg.pue,
        gamma: cfg.gamma,
        kwh_per_su: cfg.kwh_per_su,
        ..EmissionFactors::default()
    };
    if let Some(p) = factors {
        let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        f = apply_factors(f, &text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
    }
    let text = fs::read_to_string(log).map_err(|e| io_err(log, e))?;
    let entries = parse_run_log(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", log.display())))?;
    let summary = summarize_run(&entries, &f, cfg.overhead)?;
    print!("{}", summary.table());
    if let Some(k) = ksu {
        let (kwh, kg) = cpu_ksu_emissions(k, &f)?;
        println!("{:<10} {:>10} {kwh:>10.2} {kg:>10.2}", "cpu_ksu", format!("{k}k"));
    }
    Ok(())
}
