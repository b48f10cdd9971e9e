//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use msdeblur_core::blur::{crf_apply, crf_invert, generate_dataset, synthesize_blur, GammaCrf};
use msdeblur_core::checks::{run_scope, Scope};
use msdeblur_core::losses::{adversarial_d_loss, adversarial_g_loss, content_loss, total_loss, GeneratorObjective};
use msdeblur_core::metrics::{ms_ssim, psnr, ssim, PSNR_CAP_DB};
use msdeblur_core::model::{DiscriminatorSpec, GeneratorSpec, LayerKind};
use msdeblur_core::synthetic::{moving_objects, translating_square};
use msdeblur_core::trainer::{discriminator_step, overfit_smoke, sample_batch, train_step, TrainConfig, TrainState};
use msdeblur_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, what: &str, failures: &mut Vec<String>) {
    if !ok {
        failures.push(what.to_string());
    }
}

fn verdict(failures: Vec<String>, detail: String) -> Verdict {
    if failures.is_empty() {
        Ok((true, detail))
    } else {
        Ok((false, format!("{detail}; failed: {}", failures.join(", "))))
    }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for scope in Scope::ALL {
        for r in run_scope(scope, 0, false).map_err(|e| e.to_string())? {
            worst = worst.max(r.report.max_rel_error);
            check(r.report.passed(), &format!("{} rel {:.2e}", r.name, r.report.max_rel_error), &mut failures);
            names.push(r.name);
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), "runtime over 2 minutes", &mut failures);
    verdict(
        failures,
        format!("{} checks [{}], worst rel error {worst:.2e} <= 1e-4, {:.1}s", names.len(), names.join(" "), elapsed.as_secs_f64()),
    )
}

fn blur_oracle() -> Verdict {
    let mut failures = Vec::new();
    let seq = translating_square(64, 64, 8, 9, 1, 240.0);
    let crf = GammaCrf::default();
    let blurry = synthesize_blur(seq.frames(), &crf).map_err(|e| e.to_string())?;
    let sharp = &seq.frames()[4];
    let s = blurry.shape();
    let mut max_err: f64 = 0.0;
    let mut static_px = 0;
    let mut static_mismatch = 0;
    for c in 0..s.c {
        for y in 0..s.h {
            for x in 0..s.w {
                let mut linear = 0.0;
                for f in seq.frames() {
                    linear += f.at(0, c, y, x).powf(2.2);
                }
                let expected = (linear / 9.0).powf(1.0 / 2.2);
                max_err = max_err.max((blurry.at(0, c, y, x) - expected).abs());
                let first = seq.frames()[0].at(0, c, y, x);
                if seq.frames().iter().all(|f| f.at(0, c, y, x) == first) {
                    static_px += 1;
                    if blurry.at(0, c, y, x).to_bits() != sharp.at(0, c, y, x).to_bits() {
                        static_mismatch += 1;
                    }
                }
            }
        }
    }
    check(max_err <= 1e-12, "accumulation oracle", &mut failures);
    check(static_mismatch == 0, "static pixels", &mut failures);
    let row = 28 + 4;
    let streak = (0..64).filter(|&x| blurry.at(0, 0, row, x) > 0.0).count();
    check(streak == 16, "streak length", &mut failures);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = Tensor::from_fn(Shape::new(2, 3, 32, 32), |_, _, _, _| rng.random::<f64>());
    let back = crf_invert(&crf_apply(&img, &crf).map_err(|e| e.to_string())?, &crf).map_err(|e| e.to_string())?;
    let rt = back.max_abs_diff(&img).map_err(|e| e.to_string())?;
    check(rt <= 1e-12, "crf round trip", &mut failures);
    verdict(
        failures,
        format!(
            "oracle max err {max_err:.1e}, {static_px} static pixels with {static_mismatch} mismatches, streak {streak} px, crf round trip {rt:.1e}"
        ),
    )
}

fn flat_content_loss(latents: &[Tensor], sharps: &[Tensor]) -> f64 {
    let mut sum_of_means = 0.0;
    for (l, s) in latents.iter().zip(sharps) {
        let sh = l.shape();
        let mut acc = 0.0;
        let mut count = 0usize;
        for n in 0..sh.n {
            for c in 0..sh.c {
                for y in 0..sh.h {
                    for x in 0..sh.w {
                        let d = l.at(n, c, y, x) - s.at(n, c, y, x);
                        acc += d * d;
                        count += 1;
                    }
                }
            }
        }
        sum_of_means += acc / count as f64;
    }
    sum_of_means / (2.0 * latents.len() as f64)
}

fn loss_oracle() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let (h, w) = (4 * rng.random_range(1..=6), 4 * rng.random_range(1..=6));
        let level = |k: usize, rng: &mut ChaCha8Rng| {
            Tensor::from_fn(Shape::new(n, 3, h >> k, w >> k), |_, _, _, _| rng.random::<f64>())
        };
        let l: Vec<Tensor> = (0..3).map(|k| level(k, &mut rng)).collect();
        let s: Vec<Tensor> = (0..3).map(|k| level(k, &mut rng)).collect();
        let got = content_loss(&l, &s).map_err(|e| e.to_string())?.0;
        worst = worst.max((got - flat_content_loss(&l, &s)).abs());
    }
    check(worst <= 1e-10, "content loss", &mut failures);
    let half = Tensor::full(Shape::new(1, 1, 1, 1), 0.5);
    let d = adversarial_d_loss(&half, &half).map_err(|e| e.to_string())?;
    let g = adversarial_g_loss(&half, GeneratorObjective::Saturating).map_err(|e| e.to_string())?;
    let d_err = (d - 2.0 * 2f64.ln()).abs();
    let g_err = (g - 0.5f64.ln()).abs();
    check(d_err <= 1e-12, "d loss at 0.5", &mut failures);
    check(g_err <= 1e-12, "g loss at 0.5", &mut failures);
    let lambda = 1e-4;
    let t = total_loss(0.125, g, lambda).map_err(|e| e.to_string())?;
    check(t.to_bits() == (0.125 + lambda * g).to_bits(), "total weighting", &mut failures);
    check((t - (0.125 - 1e-4 * 2f64.ln())).abs() <= 1e-15, "total value", &mut failures);
    check(total_loss(0.125, g, 0.0).map_err(|e| e.to_string())? == 0.125, "lambda 0", &mut failures);
    verdict(
        failures,
        format!("content max diff {worst:.1e} over 100 pyramids, D(0.5) err {d_err:.1e}, G(0.5) err {g_err:.1e}, total = content + 1e-4 adv_g"),
    )
}

fn architecture() -> Verdict {
    let mut failures = Vec::new();
    let g = GeneratorSpec::full();
    let inventory = g.layer_inventory();
    let convs = inventory.iter().filter(|l| l.kind == LayerKind::Conv).count();
    let upconvs = inventory.iter().filter(|l| l.kind == LayerKind::UpConv).count();
    check(g.convs_per_scale() == 40, "40 per scale", &mut failures);
    check(g.total_convs() == 120 && convs == 120, "120 total", &mut failures);
    check(upconvs == 2, "2 upconvolutions", &mut failures);
    check(g.resblocks_per_scale == 19, "19 ResBlocks", &mut failures);
    check(g.filter_size == 5 && inventory.iter().filter(|l| l.kind == LayerKind::Conv).all(|l| l.kernel == 5), "5x5", &mut failures);
    check(g.feature_channels == 64, "64 channels", &mut failures);
    let d = DiscriminatorSpec::full();
    let trace = d.trace().map_err(|e| e.to_string())?;
    let spatial: Vec<usize> = trace.iter().map(|t| t.1).collect();
    check(spatial == [128, 128, 64, 64, 32, 32, 8, 8, 2, 1], "discriminator trace", &mut failures);
    check(trace.last() == Some(&(1024, 1, 1)), "final 1x1x1024", &mut failures);
    let strides: Vec<usize> = d.convs.iter().map(|c| c.stride).collect();
    check(strides == [2, 1, 2, 1, 2, 1, 4, 1, 4, 2], "strides", &mut failures);
    verdict(
        failures,
        format!(
            "{} convs/scale, {convs} convs + {upconvs} upconvs, {} ResBlocks, {}x{} filters, {} channels, D trace {spatial:?} -> {:?}",
            g.convs_per_scale(),
            g.resblocks_per_scale,
            g.filter_size,
            g.filter_size,
            g.feature_channels,
            trace.last().unwrap()
        ),
    )
}

/// The fixed training set of the convergence test.
fn convergence_pairs() -> Vec<msdeblur_core::blur::BlurPair> {
    let seq = moving_objects(64, 64, 60, 4, 11, 240.0);
    let mut d = generate_dataset(&seq, &[7, 9, 11], 6, &GammaCrf::default(), 3).unwrap();
    d.pairs.truncate(8);
    d.pairs
}

fn convergence() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let cfg = TrainConfig {
        lambda: 0.0,
        iterations: 500,
        batch_size: 4,
        learning_rate: 5e-5,
        ..TrainConfig::desk()
    };
    let pairs = convergence_pairs();
    if pairs.len() != 8 {
        return Err(format!("expected 8 pairs, got {}", pairs.len()));
    }
    let r = overfit_smoke(&cfg, &pairs).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(r.content_ratio() <= 0.1, "content ratio", &mut failures);
    check(r.psnr_gain() >= 3.0, "PSNR gain", &mut failures);
    check(elapsed <= Duration::from_secs(600), "runtime over 10 minutes", &mut failures);
    verdict(
        failures,
        format!(
            "content {:.3e} -> {:.3e} (ratio {:.3}, need <= 0.1), PSNR {:.2} dB vs blurry {:.2} dB (gain {:.2}, need >= 3), {:.0}s",
            r.initial_content,
            r.final_content,
            r.content_ratio(),
            r.final_psnr,
            r.blurry_psnr,
            r.psnr_gain(),
            elapsed.as_secs_f64()
        ),
    )
}

fn adversarial() -> Verdict {
    let mut failures = Vec::new();
    let cfg = TrainConfig {
        patch_size: 32,
        discriminator: DiscriminatorSpec::desk(32),
        iterations: 200,
        lambda: 1e-4,
        ..TrainConfig::desk()
    };
    let seq = moving_objects(64, 64, 40, 4, 5, 240.0);
    let pairs = generate_dataset(&seq, &[7, 9, 11, 13], 3, &GammaCrf::default(), 5).map_err(|e| e.to_string())?.pairs;
    let mut state = TrainState::new(&cfg).map_err(|e| e.to_string())?;
    let mut nonfinite = 0;
    let mut last = None;
    while state.iteration < cfg.iterations {
        let batch = sample_batch(&pairs, &cfg, &mut state.rng).map_err(|e| e.to_string())?;
        match train_step(&mut state, &batch, &cfg) {
            Ok(l) => {
                if !l.is_finite() {
                    nonfinite += 1;
                }
                last = Some(l);
            }
            Err(e) => return Ok((false, format!("joint loop stopped at iteration {}: {e}", state.iteration))),
        }
    }
    check(nonfinite == 0 && state.iteration == 200, "joint loop", &mut failures);

    let mut frozen = TrainState::new(&TrainConfig { seed: 9, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let generator_before = frozen.generator.clone();
    let mut d_losses = Vec::new();
    for _ in 0..100 {
        let batch = sample_batch(&pairs, &cfg, &mut frozen.rng).map_err(|e| e.to_string())?;
        d_losses.push(discriminator_step(&mut frozen, &batch, &cfg).map_err(|e| e.to_string())?);
    }
    let first: f64 = d_losses[..10].iter().sum::<f64>() / 10.0;
    let final_: f64 = d_losses[90..].iter().sum::<f64>() / 10.0;
    check(final_ < first, "discriminator loss did not decrease", &mut failures);
    check(frozen.generator == generator_before, "generator changed", &mut failures);
    let l = last.unwrap();
    verdict(
        failures,
        format!(
            "200 joint iterations finite (last content {:.3e}, adv_g {:.4}, adv_d {:.4}); frozen-G D loss {first:.4} -> {final_:.4} (mean of first/last 10 of 100 steps)",
            l.content, l.adversarial_g, l.adversarial_d
        ),
    )
}

fn metrics() -> Verdict {
    let mut failures = Vec::new();
    let e = |r: msdeblur_core::Result<f64>| r.map_err(|e| e.to_string());
    let a = Tensor::full(Shape::new(1, 3, 32, 32), 0.4);
    check(e(psnr(&a, &a))? == PSNR_CAP_DB, "psnr identical", &mut failures);
    check((e(psnr(&a, &a.map(|v| v + 0.1)))? - 20.0).abs() < 1e-9, "psnr 20 dB", &mut failures);
    let zeros = Tensor::zeros(a.shape());
    let ones = Tensor::full(a.shape(), 1.0);
    check(e(psnr(&zeros, &ones))? == 0.0, "psnr 0 dB", &mut failures);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(11..48), rng.random_range(11..48));
        let x = Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random::<f64>());
        if e(ssim(&x, &x))? == 1.0 {
            exact += 1;
        }
    }
    check(exact == 50, "ssim(x,x) = 1", &mut failures);
    let checker = Tensor::from_fn(Shape::new(1, 3, 64, 64), |_, _, y, x| if (y / 4 + x / 4) % 2 == 0 { 0.2 } else { 0.9 });
    let inv = e(ssim(&checker, &checker.map(|v| 1.0 - v)))?;
    check(inv < 0.0, "inverted checker", &mut failures);
    let big = Tensor::from_fn(Shape::new(1, 3, 176, 176), |_, _, _, _| rng.random::<f64>());
    check(e(ms_ssim(&big, &big))? == 1.0, "ms_ssim(x,x) = 1", &mut failures);
    check(ms_ssim(&a, &a).is_err(), "ms_ssim small input", &mut failures);
    verdict(
        failures,
        format!("PSNR cap/20 dB/0 dB exact, ssim(x,x) = 1 exactly for {exact}/50 images, inverted checker ssim {inv:.4}, ms_ssim(x,x) = 1"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_msdeblur"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn pipeline(dir: &Path) -> Result<(), String> {
    fs::write(
        dir.join("train.toml"),
        "seed = 4\niterations = 50\npatch_size = 32\ncheckpoint_every = 25\n",
    )
    .map_err(|e| e.to_string())?;
    run_cli(dir, &["sequence", "--out", "frames", "--frames", "24", "--seed", "4"])?;
    run_cli(dir, &["synth", "--input", "frames", "--output", "data", "--windows", "7,9", "--stride", "4", "--seed", "4"])?;
    run_cli(dir, &["train", "--dataset", "data", "--config", "train.toml", "--out", "run"])?;
    run_cli(dir, &["eval", "--checkpoint", "run/final.ckpt", "--dataset", "data", "--scales", "3", "--out", "run/report.txt"])
}

fn determinism() -> Verdict {
    let mut failures = Vec::new();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let files = [
        "data/manifest.txt",
        "data/blur/00000.png",
        "run/config.toml",
        "run/loss.log",
        "run/ckpt_00000025.ckpt",
        "run/final.ckpt",
        "run/report.txt",
        "run/report.tsv",
    ];
    let mut bytes = 0;
    for f in files {
        let x = fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        bytes += x.len();
        check(x == y, f, &mut failures);
    }
    let log = fs::read_to_string(a.path().join("run/loss.log")).map_err(|e| e.to_string())?;
    check(log.lines().filter(|l| !l.starts_with('#')).count() == 50, "50 log lines", &mut failures);
    verdict(failures, format!("{} files ({bytes} bytes) byte-identical across two seeded runs", files.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradients),
        ("blur-synthesis oracle", blur_oracle),
        ("loss-formula oracle", loss_oracle),
        ("architecture audit", architecture),
        ("convergence smoke test", convergence),
        ("adversarial smoke test", adversarial),
        ("metric correctness", metrics),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("criterion {} {name}: {} ({detail})", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
