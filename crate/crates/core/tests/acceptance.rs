//! The ten acceptance criteria. Runs without the libtest harness so the
//! `criterion N: PASS|FAIL` lines are always printed; exits non-zero when any
//! criterion fails. Positional arguments filter by name, `--skip NAME`
//! excludes.

use std::panic;
use std::time::{Duration, Instant};

use hdd_core::diffusion::{
    count_pixels, sample, sample_run, vanilla_sample_run, GaussianOracleDenoiser, SamplerMode, ToyArch, ToyDenoiser,
    TrainConfig,
};
use hdd_core::footprint::{cpu_ksu_emissions, gpu_hours_emissions, EmissionFactors};
use hdd_core::grid::{area_weights, upsample};
use hdd_core::klcheck;
use hdd_core::metrics::{
    amplitude_nrmse, crps, mape, phase_mad, psnr, rmse, scor, MonthlyClimatology, NrmseMode, Scorecard,
};
use hdd_core::rng::Stream;
use hdd_core::schedules::{
    build_shapes, equally_spaced_shapes, identity_shapes, karras_sigmas, normalized_mean_area, speedup,
    unit_shrink_shapes, ChurnParams, ShapeKind,
};
use hdd_core::spectral::{hinge_frequency, predict_noised, rapsd_with, RapsdOptions, Spectrum};
use hdd_core::synth::{make_pairs, powerlaw_field, PowerLawSpec};
use hdd_core::{GeoExtent, Grid, Shape};

fn report(n: usize, pass: bool, elapsed: Duration, limit: Duration, detail: &str) -> bool {
    let ok = pass && elapsed < limit;
    println!(
        "criterion {n}: {} ({:.1}s of {:.0}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    ok
}

fn white(shape: Shape, std: f64, seed: u64) -> Grid {
    let mut s = Stream::new(seed, "acceptance-white", &[]);
    let data = (0..shape.h * shape.w).map(|_| std * s.normal()).collect();
    Grid::constant(shape, 1, 0.0).unwrap().with_data(data).unwrap()
}

fn add(a: &Grid, b: &Grid) -> Grid {
    a.with_data(a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
        .unwrap()
}

fn criterion_01_speedup_calculus() -> bool {
    let t0 = Instant::now();
    let mut detail = String::new();
    let mut pass = true;
    for steps in [500, 1000, 2000] {
        let a = normalized_mean_area(&equally_spaced_shapes(144, 272, steps).unwrap());
        detail += &format!("equal T={steps} alpha={a:.5}; ");
        pass &= (a - 1.0 / 3.0).abs() <= 0.01;
    }
    let unit = unit_shrink_shapes(144, 272, 50).unwrap();
    let (a, s) = (normalized_mean_area(&unit), speedup(&unit));
    detail += &format!("unit alpha={a:.5} S={s:.4}");
    pass &= (a - 0.760).abs() <= 0.001 && (s - 1.32).abs() <= 0.01;
    report(1, pass, t0.elapsed(), Duration::from_secs(1), &detail)
}

fn criterion_02_budget_identity() -> bool {
    let t0 = Instant::now();
    let mut pass = true;
    let mut rng = Stream::new(2, "acceptance-schedules", &[]);
    let mut done = 0;
    while done < 50 {
        let h = rng.int_inclusive(2, 24);
        let w = rng.int_inclusive(2, 24);
        let steps = rng.int_inclusive(1, 40);
        let kind = [
            ShapeKind::Equal,
            ShapeKind::Unit,
            ShapeKind::Tandem,
            ShapeKind::Identity,
        ][rng.int_inclusive(0, 3)];
        let Ok(shapes) = build_shapes(kind, h, w, steps, rng.int_inclusive(1, 5)) else {
            continue;
        };
        let full = Shape { h, w };
        let mu = white(full, 1.0, done as u64);
        let f = GaussianOracleDenoiser::new(mu.clone(), 0.5).unwrap();
        let noise = karras_sigmas(0.002, 80.0, 7.0, steps).unwrap();
        let run = sample_run(
            &f,
            &mu,
            &noise,
            &shapes,
            &ChurnParams::default(),
            SamplerMode::EdmChurn,
            done as u64,
        )
        .unwrap();
        let (pixels, alpha) = count_pixels(&run);
        pass &= pixels == shapes.total_area() && alpha == normalized_mean_area(&shapes);
        done += 1;
    }
    report(2, pass, t0.elapsed(), Duration::from_secs(60), "50 random schedules")
}

fn criterion_03_reduction_property() -> bool {
    let t0 = Instant::now();
    let shape = Shape { h: 12, w: 10 };
    let mu = powerlaw_field(&PowerLawSpec::new(2.0, 12, 10, 3)).unwrap();
    let oracle = GaussianOracleDenoiser::new(mu.clone(), 0.5).unwrap();
    let toy = ToyDenoiser::init(ToyArch::new(1, 1, 8).unwrap(), 0.5, 4).unwrap();
    let mut worst: f64 = 0.0;
    for steps in [50, 500] {
        let noise = karras_sigmas(0.002, 80.0, 7.0, steps).unwrap();
        let shapes = identity_shapes(shape.h, shape.w, steps).unwrap();
        for mode in [SamplerMode::EdmChurn, SamplerMode::Literal] {
            for seed in [0, 1] {
                let pairs: [(Grid, Grid); 2] = [
                    (
                        sample_run(&oracle, &mu, &noise, &shapes, &ChurnParams::default(), mode, seed)
                            .unwrap()
                            .output,
                        vanilla_sample_run(&oracle, &mu, &noise, &ChurnParams::default(), mode, seed)
                            .unwrap()
                            .output,
                    ),
                    (
                        sample_run(&toy, &mu, &noise, &shapes, &ChurnParams::default(), mode, seed)
                            .unwrap()
                            .output,
                        vanilla_sample_run(&toy, &mu, &noise, &ChurnParams::default(), mode, seed)
                            .unwrap()
                            .output,
                    ),
                ];
                for (a, b) in &pairs {
                    for (x, y) in a.data().iter().zip(b.data()) {
                        worst = worst.max((x - y).abs());
                    }
                }
            }
        }
    }
    report(
        3,
        worst <= 1e-12,
        t0.elapsed(),
        Duration::from_secs(120),
        &format!("max abs difference {worst:e}"),
    )
}

fn criterion_04_kl_theorem_suite() -> bool {
    let t0 = Instant::now();
    let s = klcheck::campaign(1000, 64, 4).unwrap();
    // campaign() only tracks the two-level chains; check the single-map
    // data-processing direction separately as well
    let mut dpi = true;
    for i in 0..1000u64 {
        let mut rng = Stream::new(40, "acceptance-dpi", &[i]);
        let n = rng.int_inclusive(1, 64);
        let q = klcheck::random_dist(n, true, &mut rng).unwrap();
        let p = klcheck::random_dist(n, false, &mut rng).unwrap();
        let m = klcheck::CoarseningMap::random(n, rng.int_inclusive(1, n), &mut rng).unwrap();
        let fine = klcheck::kl(&q, &p).unwrap();
        let coarse = klcheck::kl(
            &klcheck::pushforward(&q, &m).unwrap(),
            &klcheck::pushforward(&p, &m).unwrap(),
        )
        .unwrap();
        // equal up to rounding when every cell's conditionals already agree
        dpi &= coarse <= fine + 1e-12;
    }
    let pass = s.max_abs_residual < 1e-10
        && s.max_abs_telescoping_residual < 1e-10
        && s.min_summand >= -1e-12
        && s.max_dpi_excess <= 1e-12
        && dpi;
    report(
        4,
        pass,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!(
            "max residual {:e}, min summand {:e}, max coarse-fine excess {:e}",
            s.max_abs_residual.max(s.max_abs_telescoping_residual),
            s.min_summand,
            s.max_dpi_excess
        ),
    )
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

fn criterion_05_spectral_suite() -> bool {
    let t0 = Instant::now();
    let mut detail = String::new();
    let shape = Shape { h: 256, w: 256 };
    let n = (shape.h * shape.w) as f64;
    // low-frequency annuli hold only a handful of coefficients; merge them
    let opts = RapsdOptions {
        bins_per_decade: 12,
        min_count: 512,
    };

    // white noise: flat at sigma^2 N
    let spectra: Vec<Spectrum> = (0..20)
        .map(|s| rapsd_with(&white(shape, 1.0, 100 + s), 0, opts).unwrap())
        .collect();
    let single = spectra[0].power.iter().map(|p| rel_dev(*p, n)).fold(0.0, f64::max);
    let avg = Spectrum::average(&spectra).unwrap();
    let averaged = avg.power.iter().map(|p| rel_dev(*p, n)).fold(0.0, f64::max);
    let ratio = avg.power.iter().copied().fold(0.0, f64::max) / avg.power.iter().copied().fold(f64::INFINITY, f64::min);
    let white_ok = single <= 0.25 && averaged <= 0.10 && ratio < 1.25;
    detail += &format!("white max dev {single:.3} (avg {averaged:.3}, ratio {ratio:.3}); ");

    // additive noise raises every bin by the same floor
    let small = Shape { h: 128, w: 128 };
    let field = powerlaw_field(&PowerLawSpec::new(2.0, 128, 128, 7)).unwrap();
    let opts_small = RapsdOptions {
        bins_per_decade: 12,
        min_count: 64,
    };
    let clean = rapsd_with(&field, 0, opts_small).unwrap();
    let sigma_n = 0.1;
    let predicted = predict_noised(&clean, sigma_n).unwrap();
    let noisy: Vec<Spectrum> = (0..20)
        .map(|s| rapsd_with(&add(&field, &white(small, sigma_n, 200 + s)), 0, opts_small).unwrap())
        .collect();
    let measured = Spectrum::average(&noisy).unwrap();
    let noised = measured
        .power
        .iter()
        .zip(&predicted.power)
        .map(|(m, p)| rel_dev(*m, *p))
        .fold(0.0, f64::max);
    detail += &format!("noised max dev {noised:.3}; ");

    // plateau height ~ lambda^2, read off the top bins of a steep field
    // where the noise dominates
    let steep = powerlaw_field(&PowerLawSpec::new(4.0, 128, 128, 8)).unwrap();
    let plateau = |lambda: f64| {
        let s = rapsd_with(&add(&steep, &white(small, lambda, 300)), 0, opts_small).unwrap();
        let top: Vec<f64> =
            s.f.iter()
                .zip(&s.power)
                .filter(|(f, _)| **f > 0.35)
                .map(|(_, p)| *p)
                .collect();
        top.iter().sum::<f64>() / top.len() as f64
    };
    let base = plateau(1.0);
    let scaling = [0.25, 0.5]
        .iter()
        .map(|l| rel_dev(plateau(*l) / base, l * l))
        .fold(0.0, f64::max);
    detail += &format!("plateau scaling dev {scaling:.3}; ");

    // hinge frequency never moves right as the noise grows
    let mut monotone = true;
    for i in 0..100u64 {
        let mut rng = Stream::new(9, "acceptance-hinge", &[i]);
        let spec = PowerLawSpec::new(1.0 + 3.0 * rng.uniform(), 64, 64, i);
        let s = rapsd_with(&powerlaw_field(&spec).unwrap(), 0, opts_small).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let sn = 1e-4 * 1.4f64.powi(k);
            let f = hinge_frequency(&s, sn);
            monotone &= f <= last;
            last = f;
        }
    }
    detail += &format!("hinge monotone {monotone}");
    let pass = white_ok && noised <= 0.15 && scaling <= 0.20 && monotone;
    report(5, pass, t0.elapsed(), Duration::from_secs(120), &detail)
}

fn criterion_06_gaussian_oracle_sampling() -> bool {
    let t0 = Instant::now();
    let shape = Shape { h: 8, w: 8 };
    let sd = 0.5;
    let mu = Grid::from_fn(shape, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.5).unwrap();
    let f = GaussianOracleDenoiser::new(mu.clone(), sd).unwrap();
    let noise = karras_sigmas(0.002, 80.0, 7.0, 50).unwrap();
    let shapes = identity_shapes(8, 8, 50).unwrap();
    let count = 512;
    let mut sum = vec![0.0; 64];
    let mut sq = vec![0.0; 64];
    for seed in 0..count {
        let x = sample(&f, &mu, &noise, &shapes, &ChurnParams::default(), seed as u64).unwrap();
        for (i, v) in x.data().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let n = count as f64;
    let mut worst_z: f64 = 0.0;
    let mut worst_pixel_std: f64 = 0.0;
    let mut pooled_var = 0.0;
    for i in 0..64 {
        let mean = sum[i] / n;
        let var = (sq[i] - n * mean * mean) / (n - 1.0);
        pooled_var += var / 64.0;
        worst_z = worst_z.max((mean - mu.data()[i]).abs() / (var.sqrt() / n.sqrt()));
        worst_pixel_std = worst_pixel_std.max(rel_dev(var.sqrt(), sd));
    }
    let std_dev = rel_dev(pooled_var.sqrt(), sd);
    report(
        6,
        worst_z <= 3.0 && std_dev <= 0.10,
        t0.elapsed(),
        Duration::from_secs(300),
        &format!(
            "worst mean error {worst_z:.2} SE, std {:.4} ({:.1}% off; worst single pixel {:.1}%)",
            pooled_var.sqrt(),
            100.0 * std_dev,
            100.0 * worst_pixel_std
        ),
    )
}

fn criterion_07_toy_downscaling() -> bool {
    let t0 = Instant::now();
    let spec = PowerLawSpec {
        std: 0.5,
        ..PowerLawSpec::new(2.4, 64, 64, 1)
    };
    let train_pairs = make_pairs(&spec, 4, 256).unwrap();
    let test_pairs = make_pairs(&PowerLawSpec { seed: 2, ..spec }, 4, 64).unwrap();
    let cfg = TrainConfig::default();
    let net = ToyDenoiser::init(ToyArch::new(1, 1, 32).unwrap(), spec.std, cfg.seed).unwrap();
    let model = hdd_core::diffusion::train(net, &train_pairs, &cfg).unwrap().model;

    let mut bilinear = 0.0;
    let mut by_steps = Vec::new();
    for steps in [50, 500] {
        let noise = karras_sigmas(cfg.sigma_min, cfg.sigma_max, cfg.rho, steps).unwrap();
        let shapes = equally_spaced_shapes(64, 64, steps).unwrap();
        let (mut se, mut bse) = (0.0, 0.0);
        for (i, (coarse, fine)) in test_pairs.iter().enumerate() {
            let cond = upsample(coarse, fine.shape()).unwrap();
            bse += rmse(&cond, fine).unwrap().powi(2);
            let x = sample(&model, &cond, &noise, &shapes, &ChurnParams::default(), i as u64).unwrap();
            se += rmse(&x, fine).unwrap().powi(2);
        }
        let m = test_pairs.len() as f64;
        bilinear = (bse / m).sqrt();
        by_steps.push((se / m).sqrt());
    }
    let (r50, r500) = (by_steps[0], by_steps[1]);
    let pass = r50 <= bilinear && r500 <= bilinear && r500 <= 1.05 * r50;
    report(
        7,
        pass,
        t0.elapsed(),
        Duration::from_secs(1800),
        &format!("RMSE bilinear {bilinear:.4}, 50 steps {r50:.4}, 500 steps {r500:.4}"),
    )
}

fn criterion_08_gradient_check() -> bool {
    let t0 = Instant::now();
    let arch = ToyArch::new(1, 1, 6).unwrap();
    let mut net = ToyDenoiser::init(arch, 0.5, 8).unwrap();
    for p in net.params_mut() {
        *p *= 3.0;
    }
    let shape = Shape { h: 6, w: 5 };
    let x = white(shape, 1.0, 80);
    let cond = white(shape, 1.0, 81);
    let target = white(shape, 1.0, 82).into_data();
    let (sigma, small, weight) = (0.7, Shape { h: 3, w: 3 }, 1.3);
    let mut grad = vec![0.0; net.params().len()];
    net.loss_and_grad(&x, sigma, small, &cond, &target, weight, &mut grad)
        .unwrap();
    let mut params = net.params().to_vec();
    let mut rng = Stream::new(8, "acceptance-probes", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.int_inclusive(0, params.len() - 1);
        let h = 1e-5;
        let orig = params[k];
        params[k] = orig + h;
        let up = net.loss_at(&params, &x, sigma, small, &cond, &target, weight).unwrap();
        params[k] = orig - h;
        let dn = net.loss_at(&params, &x, sigma, small, &cond, &target, weight).unwrap();
        params[k] = orig;
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8));
    }
    report(
        8,
        worst < 1e-4,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!("worst relative error {worst:e} over 20 probes"),
    )
}

// Brute-force references, written independently of the library.

fn ref_weights(h: usize, lat_min: f64, lat_max: f64) -> Vec<f64> {
    let d = (lat_max - lat_min) / h as f64;
    (0..h)
        .map(|r| (lat_max - (r as f64 + 0.5) * d).to_radians().cos())
        .collect()
}

fn ref_crps(ens: &[Vec<f64>], obs: &[f64], row_w: &[f64], width: usize) -> f64 {
    let m = ens.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in obs.iter().enumerate() {
        let mut a = 0.0;
        let mut b = 0.0;
        for x in ens {
            a += (x[i] - y).abs();
            for z in ens {
                b += (x[i] - z[i]).abs();
            }
        }
        let w = row_w[i / width];
        num += w * (a / m - 0.5 * b / (m * m));
        den += w;
    }
    num / den
}

fn ref_month_series(clim: &[f64], hw: usize, cell: usize) -> Vec<f64> {
    (0..12).map(|m| clim[m * hw + cell]).collect()
}

fn criterion_09_metric_oracles() -> bool {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut track = |a: f64, b: f64| worst = worst.max((a - b).abs() / b.abs().max(1.0));
    for i in 0..100u64 {
        let mut rng = Stream::new(9, "acceptance-metrics", &[i]);
        let (h, w) = (rng.int_inclusive(2, 6), rng.int_inclusive(2, 6));
        let lat_min = -60.0 + 50.0 * rng.uniform();
        let lat_max = lat_min + 5.0 + 50.0 * rng.uniform();
        let extent = GeoExtent::new(lat_min, lat_max, 0.0, 10.0).unwrap();
        let row_w = ref_weights(h, lat_min, lat_max);
        let hw = h * w;
        let mut field = |lo: f64, hi: f64| -> Vec<f64> { (0..hw).map(|_| lo + (hi - lo) * rng.uniform()).collect() };
        let obs_d = field(0.5, 3.0);
        let pred_d = field(0.5, 3.0);
        let grid = |d: Vec<f64>| Grid::new(h, w, vec!["pr".into()], extent, d).unwrap();
        let (obs, pred) = (grid(obs_d.clone()), grid(pred_d.clone()));
        let weights = area_weights(&obs).unwrap();
        let cell_w: Vec<f64> = (0..hw).map(|c| row_w[c / w]).collect();
        let sw: f64 = cell_w.iter().sum();

        // RMSE and PSNR
        let mse = pred_d.iter().zip(&obs_d).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / hw as f64;
        track(rmse(&pred, &obs).unwrap(), mse.sqrt());
        track(psnr(&pred, &obs, 2.5).unwrap(), 10.0 * (2.5f64 * 2.5 / mse).log10());

        // MAPE
        let m_ref = (0..hw)
            .map(|c| cell_w[c] * ((pred_d[c] - obs_d[c]) / obs_d[c]).abs())
            .sum::<f64>()
            / sw;
        track(mape(&pred, &obs, &weights).unwrap(), m_ref);

        // SCor, two-pass weighted Pearson
        let mp = (0..hw).map(|c| cell_w[c] * pred_d[c]).sum::<f64>() / sw;
        let mo = (0..hw).map(|c| cell_w[c] * obs_d[c]).sum::<f64>() / sw;
        let cov: f64 = (0..hw).map(|c| cell_w[c] * (pred_d[c] - mp) * (obs_d[c] - mo)).sum();
        let vp: f64 = (0..hw).map(|c| cell_w[c] * (pred_d[c] - mp).powi(2)).sum();
        let vo: f64 = (0..hw).map(|c| cell_w[c] * (obs_d[c] - mo).powi(2)).sum();
        track(scor(&pred, &obs, &weights).unwrap(), cov / (vp * vo).sqrt());

        // CRPS with an O(m^2) pair sum
        let members = rng.int_inclusive(2, 6);
        let ens_d: Vec<Vec<f64>> = (0..members)
            .map(|_| (0..hw).map(|_| 3.0 * rng.uniform()).collect())
            .collect();
        let ens: Vec<Grid> = ens_d.iter().map(|d| grid(d.clone())).collect();
        track(crps(&ens, &obs).unwrap(), ref_crps(&ens_d, &obs_d, &row_w, w));

        // amplitude NRMSE and phase MAD on monthly climatologies; months are
        // quantized so ties in the maximum actually occur
        let clim =
            |rng: &mut Stream| -> Vec<f64> { (0..12 * hw).map(|_| (rng.uniform() * 6.0).floor() + 0.5).collect() };
        let (cp, co) = (clim(&mut rng), clim(&mut rng));
        let mp_ = MonthlyClimatology::new(h, w, cp.clone(), extent).unwrap();
        let mo_ = MonthlyClimatology::new(h, w, co.clone(), extent).unwrap();
        let amp = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().sum::<f64>() / 12.0;
        let (mut num, mut den, mut mad) = (0.0, 0.0, 0.0);
        for c in 0..hw {
            let (sp, so) = (ref_month_series(&cp, hw, c), ref_month_series(&co, hw, c));
            num += cell_w[c] * (amp(&sp) - amp(&so)).powi(2);
            den += cell_w[c] * amp(&so).powi(2);
            let argmax = |v: &[f64]| {
                let top = v.iter().copied().fold(f64::MIN, f64::max);
                v.iter().position(|x| *x == top).unwrap() as i64
            };
            let d = (argmax(&sp) - argmax(&so)).rem_euclid(12);
            mad += cell_w[c] * d.min(12 - d) as f64;
        }
        let rms_num = (num / sw).sqrt();
        track(
            amplitude_nrmse(&mp_, &mo_, &weights, NrmseMode::AsPrinted).unwrap(),
            rms_num / (den / sw),
        );
        track(
            amplitude_nrmse(&mp_, &mo_, &weights, NrmseMode::RmsDenominator).unwrap(),
            rms_num / (den / sw).sqrt(),
        );
        track(phase_mad(&mp_, &mo_, &weights).unwrap(), mad / sw);
    }

    let at = Scorecard::from_metrics(0.75, 0.7, 0.6, 2.0);
    let over = Scorecard::from_metrics(
        0.75f64.next_up(),
        0.7f64.next_down(),
        0.6f64.next_up(),
        2.0f64.next_up(),
    );
    let thresholds = at.passed() == 4 && at.overall && over.passed() == 0 && !over.overall;
    report(
        9,
        worst <= 1e-12 && thresholds,
        t0.elapsed(),
        Duration::from_secs(60),
        &format!("worst mismatch {worst:e}, inclusive thresholds {thresholds}"),
    )
}

fn criterion_10_footprint_reproduction() -> bool {
    let t0 = Instant::now();
    let f = EmissionFactors::default();
    let cpu = gpu_hours_emissions("cpu_core", 1.0, &f).unwrap().1;
    let a100 = gpu_hours_emissions("a100", 1.0, &f).unwrap().1;
    let v100 = gpu_hours_emissions("v100", 1.0, &f).unwrap().1;
    let ksu = cpu_ksu_emissions(1.0, &f).unwrap().1;
    let rows = [
        ("cpu", cpu, 0.014),
        ("a100", a100, 0.77),
        ("v100", v100, 0.38),
        ("kSU", ksu, 6.8),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (name, got, want) in rows {
        let ok = (got - want).abs() <= 0.01;
        pass &= ok;
        detail += &format!("{name} {got:.4} vs {want} {}; ", if ok { "ok" } else { "off" });
    }
    report(
        10,
        pass,
        t0.elapsed(),
        Duration::from_secs(1),
        detail.trim_end_matches("; "),
    )
}

type Criterion = (&'static str, fn() -> bool);

const CRITERIA: [Criterion; 10] = [
    ("criterion_01_speedup_calculus", criterion_01_speedup_calculus),
    ("criterion_02_budget_identity", criterion_02_budget_identity),
    ("criterion_03_reduction_property", criterion_03_reduction_property),
    ("criterion_04_kl_theorem_suite", criterion_04_kl_theorem_suite),
    ("criterion_05_spectral_suite", criterion_05_spectral_suite),
    (
        "criterion_06_gaussian_oracle_sampling",
        criterion_06_gaussian_oracle_sampling,
    ),
    ("criterion_07_toy_downscaling", criterion_07_toy_downscaling),
    ("criterion_08_gradient_check", criterion_08_gradient_check),
    ("criterion_09_metric_oracles", criterion_09_metric_oracles),
    (
        "criterion_10_footprint_reproduction",
        criterion_10_footprint_reproduction,
    ),
];

fn main() {
    let mut filters = Vec::new();
    let mut skips = Vec::new();
    let mut list = false;
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--skip" => skips.extend(args.next()),
            "--list" => list = true,
            // libtest options that take a value
            "--test-threads" | "--color" | "--format" | "--logfile" => {
                args.next();
            }
            _ if a.starts_with('-') => {}
            _ => filters.push(a),
        }
    }
    let selected: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .filter(|(name, _)| !skips.iter().any(|s| name.contains(s.as_str())))
        .collect();
    if list {
        for (name, _) in &selected {
            println!("{name}: test");
        }
        return;
    }
    let mut failed = Vec::new();
    for (name, run) in &selected {
        let ok = panic::catch_unwind(run).unwrap_or_else(|_| {
            println!("{name}: FAIL (panicked)");
            false
        });
        if !ok {
            failed.push(*name);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        selected.len() - failed.len(),
        selected.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
