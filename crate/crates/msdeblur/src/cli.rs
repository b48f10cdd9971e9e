//! Subcommands.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use msdeblur_core::augment::{augment, AugmentConfig};
use msdeblur_core::blur::{generate_dataset, BlurPair, DatasetWarning, GammaCrf};
use msdeblur_core::checks::{run_scope, Scope};
use msdeblur_core::losses::LossBreakdown;
use msdeblur_core::metrics::{EvalFailure, ImageMetrics, MetricReport};
use msdeblur_core::model::deblur;
use msdeblur_core::synthetic::moving_objects;
use msdeblur_core::trainer::{sample_batch, train_step, TrainState};
use msdeblur_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FileConfig, Preset, RunSettings};
use crate::imageio::{list_images, read_frames, read_image, write_frames, write_png};
use crate::{checkpoint, dataset, NumericalFailure};

#[derive(Debug, Parser)]
#[command(name = "msdeblur", version, about = "Multi-scale deblurring: data synthesis, training, inference, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural sharp frame sequence with moving objects.
    Sequence(SequenceArgs),
    /// Average frame windows into blurry/sharp pairs.
    Synth(SynthArgs),
    /// Write augmented training pairs for inspection.
    AugmentPreview(AugmentPreviewArgs),
    Train(TrainArgs),
    /// Deblur an image or every image in a directory.
    Infer(InferArgs),
    /// PSNR / SSIM / MS-SSIM of a model over a dataset.
    Eval(EvalArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub objects: usize,
    #[arg(long, default_value_t = 240.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory of sharp frames with a meta.toml.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Odd window lengths to draw from.
    #[arg(long, value_delimiter = ',', default_values_t = [7, 9, 11, 13])]
    pub windows: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long, default_value_t = 2.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AugmentPreviewArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest index of the pair to augment.
    #[arg(long, default_value_t = 0)]
    pub pair: usize,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Random square crop before augmenting.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the coarser latent levels.
    #[arg(long)]
    pub levels: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "identity")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scale count; must match the checkpoint.
    #[arg(long)]
    pub scales: Option<usize>,
    /// Plain-text report; a `.tsv` companion is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Round images to 8-bit levels before PSNR.
    #[arg(long)]
    pub quantized: bool,
    /// Score the blurry inputs themselves instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    Layer,
    Resblock,
    Generator,
    Discriminator,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Double every analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sequence(a) => sequence(a),
        Command::Synth(a) => synth(a),
        Command::AugmentPreview(a) => augment_preview(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn sequence(a: SequenceArgs) -> Result<()> {
    if a.height == 0 || a.width == 0 || a.frames == 0 {
        bail!("height, width and frames must be positive");
    }
    let seq = moving_objects(a.height, a.width, a.frames, a.objects, a.seed, a.fps);
    write_frames(&a.out, &seq)?;
    println!("wrote {} frames to {}", seq.len(), a.out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let seq = read_frames(&a.input)?;
    let crf = GammaCrf::new(a.gamma)?;
    let data = generate_dataset(&seq, &a.windows, a.stride, &crf, a.seed)?;
    for w in &data.warnings {
        match w {
            DatasetWarning::SequenceTooShort { frames, window } => {
                eprintln!("warning: {frames} frames cannot hold a {window}-frame window");
            }
        }
    }
    dataset::write_dataset(&a.output, &data.pairs)?;
    println!("wrote {} pairs to {}", data.pairs.len(), a.output.display());
    Ok(())
}

fn augment_preview(a: AugmentPreviewArgs) -> Result<()> {
    let entries = dataset::read_manifest(&a.dataset)?;
    let entry = entries
        .get(a.pair)
        .with_context(|| format!("pair {} requested but the manifest lists {}", a.pair, entries.len()))?;
    let source = dataset::load_pair(&a.dataset, entry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cfg = AugmentConfig::full();
    fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let pair = match a.patch {
            Some(p) => {
                let s = source.blurry.shape();
                if s.h < p || s.w < p {
                    bail!("patch {p} is larger than the {}x{} images", s.h, s.w);
                }
                let (top, left) = (rng.random_range(0..=s.h - p), rng.random_range(0..=s.w - p));
                BlurPair {
                    blurry: source.blurry.crop(top, left, p, p)?,
                    sharp: source.sharp.crop(top, left, p, p)?,
                    provenance: source.provenance,
                }
            }
            None => source.clone(),
        };
        let out = augment(&pair, &cfg, &mut rng)?;
        write_png(&a.out.join(format!("{i:03}_blur.png")), &out.blurry)?;
        write_png(&a.out.join(format!("{i:03}_sharp.png")), &out.sharp)?;
    }
    println!("wrote {} augmented pairs to {}", a.count, a.out.display());
    Ok(())
}

pub const LOSS_LOG: &str = "loss.log";
pub const CONFIG_ECHO: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// `iteration content adv_g adv_d total lr`.
pub fn loss_line(iteration: u64, l: &LossBreakdown, lr: f64) -> String {
    format!(
        "{iteration} {:.17e} {:.17e} {:.17e} {:.17e} {:e}",
        l.content, l.adversarial_g, l.adversarial_d, l.total, lr
    )
}

fn train(a: TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let (settings, mut state) = match &a.resume {
        Some(ckpt) => {
            let (found, state) = checkpoint::load(ckpt)?;
            let settings = if a.config.is_some() || a.preset.is_some() {
                let s = file.resolve(a.preset)?;
                checkpoint::ensure_same_networks(&found, &s.train)?;
                s
            } else {
                RunSettings {
                    preset: Preset::Desk,
                    train: found,
                    checkpoint_every: 0,
                }
            };
            state.check(&settings.train)?;
            (settings, state)
        }
        None => {
            let s = file.resolve(a.preset)?;
            let state = TrainState::new(&s.train)?;
            (s, state)
        }
    };
    let cfg = &settings.train;
    let pairs = dataset::load_dataset(&a.dataset)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(CONFIG_ECHO), settings.echo()?)?;
    let log_file = if a.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(a.out.join(LOSS_LOG))?
    } else {
        let mut f = File::create(a.out.join(LOSS_LOG))?;
        writeln!(f, "# iteration content adv_g adv_d total lr")?;
        f
    };
    let mut log = BufWriter::new(log_file);
    while state.iteration < cfg.iterations {
        let lr = cfg.lr_at(state.iteration);
        let mut rng = state.rng.clone();
        let step = sample_batch(&pairs, cfg, &mut rng).and_then(|batch| {
            let mut next = state.clone();
            next.rng = rng;
            train_step(&mut next, &batch, cfg).map(|l| (next, l))
        });
        match step {
            Ok((next, losses)) => {
                state = next;
                writeln!(log, "{}", loss_line(state.iteration, &losses, lr))?;
                if settings.checkpoint_every > 0 && state.iteration % settings.checkpoint_every == 0 {
                    log.flush()?;
                    checkpoint::save(&a.out.join(format!("ckpt_{:08}.ckpt", state.iteration)), &state, cfg)?;
                }
            }
            Err(msdeblur_core::Error::NonFinite(what)) => {
                log.flush()?;
                let keep = a.out.join(LAST_GOOD_CHECKPOINT);
                checkpoint::save(&keep, &state, cfg)?;
                return Err(NumericalFailure(format!(
                    "{what} is not finite at iteration {}; last good state saved to {}",
                    state.iteration + 1,
                    keep.display()
                ))
                .into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    log.flush()?;
    checkpoint::save(&a.out.join(FINAL_CHECKPOINT), &state, cfg)?;
    println!("trained to iteration {}; outputs in {}", state.iteration, a.out.display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let (cfg, state) = checkpoint::load(&a.checkpoint)?;
    let inputs = if a.input.is_dir() { list_images(&a.input)? } else { vec![a.input.clone()] };
    fs::create_dir_all(&a.out)?;
    let mut failed = 0;
    for path in &inputs {
        let result = (|| -> Result<()> {
            let img = read_image(path)?;
            let levels = deblur(&img, &state.generator, &cfg.generator)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).context("file name")?;
            write_png(&a.out.join(format!("{stem}.png")), &levels[0])?;
            if a.levels {
                for (k, l) in levels.iter().enumerate().skip(1) {
                    write_png(&a.out.join(format!("{stem}_level{}.png", k + 1)), l)?;
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            eprintln!("error: {}: {e:#}", path.display());
            failed += 1;
        }
    }
    println!("deblurred {} of {} images into {}", inputs.len() - failed, inputs.len(), a.out.display());
    if failed > 0 {
        bail!("{failed} images failed");
    }
    Ok(())
}

/// Plain-text table: one row per image, a mean row, then failures.
pub fn format_report(r: &MetricReport) -> String {
    let ms = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    let mut s = format!("# checkpoint: {}\n# scales: {}\n", r.checkpoint, r.scales);
    s.push_str(&format!("{:<32} {:>9} {:>7} {:>7}\n", "image", "psnr", "ssim", "msssim"));
    for m in &r.images {
        s.push_str(&format!("{:<32} {:>9.4} {:>7.4} {:>7}\n", m.name, m.psnr, m.ssim, ms(m.ms_ssim)));
    }
    s.push_str(&format!(
        "{:<32} {:>9} {:>7} {:>7}\n",
        "mean",
        r.mean_psnr().map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
        ms(r.mean_ssim()),
        ms(r.mean_ms_ssim())
    ));
    for f in &r.failures {
        s.push_str(&format!("# error {}: {}\n", f.name, f.message));
    }
    s
}

/// One `path psnr ssim msssim` record per line, tab separated.
pub fn format_records(r: &MetricReport) -> String {
    let mut s = String::from("path\tpsnr\tssim\tmsssim\n");
    for m in &r.images {
        let ms = m.ms_ssim.map(|v| format!("{v:.17e}")).unwrap_or_else(|| "n/a".into());
        s.push_str(&format!("{}\t{:.17e}\t{:.17e}\t{ms}\n", m.name, m.psnr, m.ssim));
    }
    s
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => {
            let (cfg, state) = checkpoint::load(p)?;
            if let Some(k) = a.scales {
                if k != cfg.generator.scales {
                    bail!(
                        "--scales {k} but the checkpoint was trained with {} scales; each scale count needs its own model",
                        cfg.generator.scales
                    );
                }
            }
            Some((cfg, state))
        }
        None => None,
    };
    let scales = model.as_ref().map(|(c, _)| c.generator.scales).or(a.scales).unwrap_or(1);
    let name = a.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "identity".into());
    let mut report = MetricReport::new(name, scales);
    for entry in dataset::read_manifest(&a.dataset)? {
        let result = (|| -> Result<ImageMetrics> {
            let pair = dataset::load_pair(&a.dataset, &entry)?;
            let output: Tensor = match &model {
                Some((cfg, state)) => deblur(&pair.blurry, &state.generator, &cfg.generator)?.swap_remove(0),
                None => pair.blurry.clone(),
            };
            Ok(ImageMetrics::compute(entry.blur.clone(), &output, &pair.sharp, a.quantized)?)
        })();
        match result {
            Ok(m) => report.images.push(m),
            Err(e) => report.failures.push(EvalFailure {
                name: entry.blur.clone(),
                message: format!("{e:#}"),
            }),
        }
    }
    if let Some(dir) = a.out.parent() {
        fs::create_dir_all(dir)?;
    }
    let text = format_report(&report);
    fs::write(&a.out, &text)?;
    fs::write(records_path(&a.out), format_records(&report))?;
    print!("{text}");
    Ok(())
}

pub fn records_path(report: &Path) -> PathBuf {
    report.with_extension("tsv")
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let scope = match a.scope {
        ScopeArg::Layer => Scope::Layer,
        ScopeArg::Resblock => Scope::ResBlock,
        ScopeArg::Generator => Scope::Generator,
        ScopeArg::Discriminator => Scope::Discriminator,
    };
    let reports = run_scope(scope, a.seed, a.corrupt_backward)?;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.report.passed();
        println!(
            "{:<14} max_rel_error={:.3e} checked={} skipped={} tolerance={:e} {}",
            r.name,
            r.report.max_rel_error,
            r.report.checked,
            r.report.skipped,
            r.report.tolerance,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn loss_line_has_six_fields() {
        let l = LossBreakdown {
            content: 0.125,
            adversarial_g: -0.5,
            adversarial_d: 1.25,
            total: 0.12,
            per_level_content: vec![],
        };
        let line = loss_line(3, &l, 5e-5);
        let fields: Vec<&str> = line.split(' ').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[0], "3");
        assert_eq!(fields[1].parse::<f64>().unwrap(), 0.125);
        assert_eq!(fields[5].parse::<f64>().unwrap(), 5e-5);
    }
}
