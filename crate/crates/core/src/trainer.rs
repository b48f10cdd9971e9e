//! Joint generator/discriminator optimisation.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::augment::{augment, AugmentConfig};
use crate::blur::BlurPair;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_d_loss, adversarial_d_loss_grad, adversarial_g_loss, adversarial_g_loss_grad, content_loss,
    content_loss_grad, total_loss, GeneratorObjective, LossBreakdown, DEFAULT_LAMBDA,
};
use crate::math::powf;
use crate::metrics::psnr;
use crate::model::discriminator::{discriminator_backward, discriminator_forward_recorded, DiscriminatorParams};
use crate::model::generator::{generator_backward, generator_forward, generator_forward_recorded, GeneratorParams};
use crate::model::{DiscriminatorSpec, GeneratorSpec, Init};
use crate::params::{adam_update, new_adam, ParamSet};
use crate::pyramid::{check_pyramid_size, PyramidPair};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub batch_size: usize,
    /// Side of the square training crops; the discriminator input size.
    pub patch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_step: u64,
    pub lr_decay_factor: f64,
    pub iterations: u64,
    pub lambda: f64,
    pub seed: u64,
    pub objective: GeneratorObjective,
    pub adam: AdamConfig,
    pub init: Init,
    /// Start every stage's last convolution at zero.
    pub zero_tail: bool,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    /// Full-size networks, 256x256 crops, 4.5e5 iterations with a tenfold
    /// decay every 1.5e5.
    pub fn full() -> Self {
        TrainConfig {
            generator: GeneratorSpec::full(),
            discriminator: DiscriminatorSpec::full(),
            batch_size: 4,
            patch_size: 256,
            learning_rate: 5e-5,
            lr_decay_step: 150_000,
            lr_decay_factor: 0.1,
            iterations: 450_000,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            objective: GeneratorObjective::Saturating,
            adam: AdamConfig::default(),
            init: Init::default(),
            zero_tail: false,
            augment: AugmentConfig::full(),
        }
    }

    /// Desk-scale networks on 64x64 crops.
    pub fn desk() -> Self {
        TrainConfig {
            generator: GeneratorSpec::desk(),
            discriminator: DiscriminatorSpec::desk(64),
            patch_size: 64,
            iterations: 500,
            lr_decay_step: 150_000,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.batch_size == 0 || self.patch_size == 0 || self.lr_decay_step == 0 {
            return Err(Error::InvalidConfig("batch size, patch size and decay step must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "lr decay factor {} is outside (0, 1)",
                self.lr_decay_factor
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        if self.discriminator.input_size != self.patch_size {
            return Err(Error::InvalidConfig(alloc::format!(
                "discriminator input {} differs from patch size {}",
                self.discriminator.input_size,
                self.patch_size
            )));
        }
        check_pyramid_size(self.patch_size, self.patch_size, self.generator.scales)
    }

    /// `lr(i) = lr0 * factor^floor(i / decay_step)`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let k = iteration / self.lr_decay_step;
        self.learning_rate * powf(self.lr_decay_factor, k as f64)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub generator_adam: AdamState,
    pub discriminator_adam: AdamState,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub lr: f64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut generator = GeneratorParams::init(&cfg.generator, cfg.init, &mut rng)?;
        if cfg.zero_tail {
            generator.zero_tails();
        }
        let discriminator = DiscriminatorParams::init(&cfg.discriminator, cfg.init, &mut rng)?;
        Ok(TrainState {
            generator_adam: new_adam(&generator, cfg.adam),
            discriminator_adam: new_adam(&discriminator, cfg.adam),
            generator,
            discriminator,
            iteration: 0,
            rng,
            lr: cfg.lr_at(0),
        })
    }

    /// Checks parameter and moment shapes against `cfg`.
    pub fn check(&self, cfg: &TrainConfig) -> Result<()> {
        self.generator.check(&cfg.generator)?;
        self.discriminator.check(&cfg.discriminator)?;
        let fits = |a: &AdamState, p: &dyn Fn() -> Vec<Shape>| {
            let shapes = p();
            a.first.iter().map(|t| t.shape()).eq(shapes.iter().copied())
                && a.second.iter().map(|t| t.shape()).eq(shapes.iter().copied())
        };
        let g = || self.generator.tensors().iter().map(|t| t.shape()).collect();
        let d = || self.discriminator.tensors().iter().map(|t| t.shape()).collect();
        if !fits(&self.generator_adam, &g) || !fits(&self.discriminator_adam, &d) {
            return Err(Error::InvalidConfig("optimizer state does not match the parameters".into()));
        }
        Ok(())
    }
}

/// Draws `batch_size` pairs with replacement, crops the same random window
/// from blurry and sharp, augments and builds the batched pyramids.
pub fn sample_batch<R: Rng + ?Sized>(pairs: &[BlurPair], cfg: &TrainConfig, rng: &mut R) -> Result<PyramidPair> {
    if pairs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let p = cfg.patch_size;
    let items = (0..cfg.batch_size)
        .map(|_| {
            let pair = &pairs[rng.random_range(0..pairs.len())];
            let s = pair.blurry.shape();
            if s.h < p || s.w < p {
                return Err(Error::InvalidShape {
                    op: "sample_batch",
                    reason: alloc::format!("{}x{} image is smaller than the {p}x{p} patch", s.h, s.w),
                });
            }
            let top = rng.random_range(0..=s.h - p);
            let left = rng.random_range(0..=s.w - p);
            let cropped = BlurPair {
                blurry: pair.blurry.crop(top, left, p, p)?,
                sharp: pair.sharp.crop(top, left, p, p)?,
                provenance: pair.provenance,
            };
            let aug = augment(&cropped, &cfg.augment, rng)?;
            PyramidPair::from_pair(&aug, cfg.generator.scales)
        })
        .collect::<Result<Vec<_>>>()?;
    PyramidPair::batch(&items)
}

fn finite_or<P: ParamSet>(p: &P, what: &'static str) -> Result<()> {
    if p.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Discriminator loss and its parameter gradients for real sharps against
/// fixed fakes.
fn discriminator_grads(
    disc: &DiscriminatorParams,
    spec: &DiscriminatorSpec,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, DiscriminatorParams)> {
    let (d_real, tape_real) = discriminator_forward_recorded(real, disc, spec)?;
    let (d_fake, tape_fake) = discriminator_forward_recorded(fake, disc, spec)?;
    let loss = adversarial_d_loss(&d_real, &d_fake)?;
    let (g_real, g_fake) = adversarial_d_loss_grad(&d_real, &d_fake)?;
    let mut grads = discriminator_backward(&tape_real, disc, spec, &g_real)?.params;
    let fake_grads = discriminator_backward(&tape_fake, disc, spec, &g_fake)?.params;
    for (a, b) in grads.tensors_mut().into_iter().zip(fake_grads.tensors()) {
        a.add_assign(b)?;
    }
    Ok((loss, grads))
}

/// One discriminator update followed by one generator update, both from a
/// single generator forward pass. On error `state` is left untouched.
pub fn train_step(state: &mut TrainState, batch: &PyramidPair, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut next = state.clone();
    let lr = cfg.lr_at(next.iteration);
    let (latents, tape) = generator_forward_recorded(&batch.blurry, &next.generator, &cfg.generator)?;
    let (content, per_level) = content_loss(&latents, &batch.sharp)?;
    let mut grad_latents = content_loss_grad(&latents, &batch.sharp)?;
    let (mut adv_d, mut adv_g) = (0.0, 0.0);
    if cfg.lambda > 0.0 {
        let (loss_d, d_grads) = discriminator_grads(&next.discriminator, &cfg.discriminator, &batch.sharp[0], &latents[0])?;
        if !loss_d.is_finite() {
            return Err(Error::NonFinite("discriminator loss"));
        }
        finite_or(&d_grads, "discriminator gradient")?;
        adam_update(&mut next.discriminator, &d_grads, &mut next.discriminator_adam, lr)?;
        adv_d = loss_d;

        let (d_fake, tape_fake) = discriminator_forward_recorded(&latents[0], &next.discriminator, &cfg.discriminator)?;
        adv_g = adversarial_g_loss(&d_fake, cfg.objective)?;
        let g_prob = adversarial_g_loss_grad(&d_fake, cfg.objective)?;
        let through = discriminator_backward(&tape_fake, &next.discriminator, &cfg.discriminator, &g_prob)?;
        grad_latents[0].add_assign(&through.input.scale(cfg.lambda))?;
    }
    let total = total_loss(content, adv_g, cfg.lambda)?;
    let losses = LossBreakdown {
        content,
        adversarial_g: adv_g,
        adversarial_d: adv_d,
        total,
        per_level_content: per_level,
    };
    if !losses.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let g_grads = generator_backward(&tape, &next.generator, &cfg.generator, &grad_latents)?;
    finite_or(&g_grads.params, "generator gradient")?;
    adam_update(&mut next.generator, &g_grads.params, &mut next.generator_adam, lr)?;
    finite_or(&next.generator, "generator parameters")?;
    next.iteration += 1;
    next.lr = cfg.lr_at(next.iteration);
    *state = next;
    Ok(losses)
}

/// Updates only the discriminator, against the current generator's output.
pub fn discriminator_step(state: &mut TrainState, batch: &PyramidPair, cfg: &TrainConfig) -> Result<f64> {
    let fake = generator_forward(&batch.blurry, &state.generator, &cfg.generator)?;
    let (loss, grads) = discriminator_grads(&state.discriminator, &cfg.discriminator, &batch.sharp[0], &fake[0])?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("discriminator loss"));
    }
    finite_or(&grads, "discriminator gradient")?;
    let mut disc = state.discriminator.clone();
    let mut adam = state.discriminator_adam.clone();
    adam_update(&mut disc, &grads, &mut adam, cfg.lr_at(state.iteration))?;
    state.discriminator = disc;
    state.discriminator_adam = adam;
    Ok(loss)
}

/// Runs until `cfg.iterations`, sampling batches from the state's RNG and
/// calling `on_step` after every iteration.
pub fn train<F>(state: &mut TrainState, pairs: &[BlurPair], cfg: &TrainConfig, mut on_step: F) -> Result<()>
where
    F: FnMut(&TrainState, &LossBreakdown) -> Result<()>,
{
    cfg.validate()?;
    while state.iteration < cfg.iterations {
        let batch = sample_batch(pairs, cfg, &mut state.rng)?;
        let losses = train_step(state, &batch, cfg)?;
        on_step(state, &losses)?;
    }
    Ok(())
}

/// Outcome of an overfitting run on a tiny fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub iterations: u64,
    pub initial_content: f64,
    pub final_content: f64,
    /// Mean PSNR of the blurry inputs against their sharp targets.
    pub blurry_psnr: f64,
    pub initial_psnr: f64,
    pub final_psnr: f64,
    pub losses: Vec<f64>,
}

impl OverfitReport {
    pub fn content_ratio(&self) -> f64 {
        self.final_content / self.initial_content
    }

    pub fn psnr_gain(&self) -> f64 {
        self.final_psnr - self.blurry_psnr
    }
}

/// Content loss over the whole set and mean PSNR of the clamped finest
/// latent.
pub fn evaluate_training_set(params: &GeneratorParams, spec: &GeneratorSpec, set: &[PyramidPair]) -> Result<(f64, f64)> {
    let batch = PyramidPair::batch(set)?;
    let latents = generator_forward(&batch.blurry, params, spec)?;
    let (content, _) = content_loss(&latents, &batch.sharp)?;
    let n = set.len();
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(&latents[0].slice_batch(i, 1)?.clamp01(), &set[i].sharp[0])?;
    }
    Ok((content, total / n as f64))
}

/// Trains on `pairs` with augmentation off and reports content loss and
/// PSNR before and after.
pub fn overfit_smoke(cfg: &TrainConfig, pairs: &[BlurPair]) -> Result<OverfitReport> {
    let mut cfg = cfg.clone();
    cfg.augment = AugmentConfig::none();
    cfg.validate()?;
    let set = pairs
        .iter()
        .map(|p| PyramidPair::from_pair(p, cfg.generator.scales))
        .collect::<Result<Vec<_>>>()?;
    let mut blurry_psnr = 0.0;
    for p in pairs {
        blurry_psnr += psnr(&p.blurry, &p.sharp)?;
    }
    blurry_psnr /= pairs.len().max(1) as f64;
    let mut state = TrainState::new(&cfg)?;
    let (initial_content, initial_psnr) = evaluate_training_set(&state.generator, &cfg.generator, &set)?;
    let mut losses = Vec::with_capacity(cfg.iterations as usize);
    train(&mut state, pairs, &cfg, |_, l| {
        losses.push(l.content);
        Ok(())
    })?;
    let (final_content, final_psnr) = evaluate_training_set(&state.generator, &cfg.generator, &set)?;
    Ok(OverfitReport {
        iterations: cfg.iterations,
        initial_content,
        final_content,
        blurry_psnr,
        initial_psnr,
        final_psnr,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::{generate_dataset, GammaCrf};
    use crate::synthetic::moving_objects;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            discriminator: DiscriminatorSpec::desk(16),
            patch_size: 16,
            batch_size: 2,
            iterations: 3,
            augment: AugmentConfig::none(),
            ..TrainConfig::desk()
        }
    }

    fn tiny_pairs(n: usize) -> Vec<BlurPair> {
        let seq = moving_objects(24, 24, 2 * n + 5, 3, 7, 240.0);
        let mut d = generate_dataset(&seq, &[3, 5], 2, &GammaCrf::default(), 1).unwrap();
        d.pairs.truncate(n);
        d.pairs
    }

    #[test]
    fn schedule_decays_tenfold_per_step() {
        let cfg = TrainConfig::full();
        assert_eq!(cfg.lr_at(0), 5e-5);
        assert_eq!(cfg.lr_at(149_999), 5e-5);
        assert!((cfg.lr_at(150_000) - 5e-6).abs() < 1e-20);
        assert!((cfg.lr_at(300_000) - 5e-7).abs() < 1e-21);
    }

    #[test]
    fn presets_validate() {
        assert!(TrainConfig::full().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        let bad = TrainConfig {
            lr_decay_factor: 1.0,
            ..TrainConfig::desk()
        };
        assert!(bad.validate().is_err());
        let mismatched = TrainConfig {
            patch_size: 32,
            ..TrainConfig::desk()
        };
        assert!(mismatched.validate().is_err());
    }

    #[test]
    fn batches_have_pyramid_shapes() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&tiny_pairs(3), &cfg, &mut rng).unwrap();
        assert_eq!(b.blurry[0].shape(), Shape::new(2, 3, 16, 16));
        assert_eq!(b.sharp[2].shape(), Shape::new(2, 3, 4, 4));
    }

    #[test]
    fn step_advances_counter_and_is_deterministic() {
        let cfg = tiny_cfg();
        let pairs = tiny_pairs(3);
        let run = || {
            let mut s = TrainState::new(&cfg).unwrap();
            let mut log = Vec::new();
            train(&mut s, &pairs, &cfg, |_, l| {
                log.push(l.clone());
                Ok(())
            })
            .unwrap();
            (s, log)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a.iteration, 3);
        assert_eq!(la, lb);
        assert_eq!(a, b);
        for l in &la {
            assert_eq!(l.total, l.content + cfg.lambda * l.adversarial_g);
        }
    }

    #[test]
    fn zero_lambda_leaves_discriminator_alone() {
        let cfg = TrainConfig { lambda: 0.0, ..tiny_cfg() };
        let mut s = TrainState::new(&cfg).unwrap();
        let before = s.discriminator.clone();
        train(&mut s, &tiny_pairs(2), &cfg, |_, l| {
            assert_eq!(l.adversarial_g, 0.0);
            assert_eq!(l.total, l.content);
            Ok(())
        })
        .unwrap();
        assert_eq!(s.discriminator, before);
        assert_eq!(s.discriminator_adam.step, 0);
    }

    #[test]
    fn failed_step_preserves_state() {
        let cfg = tiny_cfg();
        let mut s = TrainState::new(&cfg).unwrap();
        let pairs = tiny_pairs(2);
        let mut batch = sample_batch(&pairs, &cfg, &mut s.rng.clone()).unwrap();
        batch.blurry[0].data_mut()[0] = f64::NAN;
        let before = s.clone();
        assert!(train_step(&mut s, &batch, &cfg).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn zero_tail_first_loss_is_passthrough_baseline() {
        let cfg = TrainConfig {
            zero_tail: true,
            lambda: 0.0,
            ..tiny_cfg()
        };
        let mut s = TrainState::new(&cfg).unwrap();
        let batch = sample_batch(&tiny_pairs(2), &cfg, &mut s.rng.clone()).unwrap();
        let baseline = content_loss(&batch.blurry, &batch.sharp).unwrap().0;
        let l = train_step(&mut s, &batch, &cfg).unwrap();
        assert_eq!(l.content, baseline);
    }

    #[test]
    fn zero_iterations_report_no_change() {
        let cfg = TrainConfig { iterations: 0, ..tiny_cfg() };
        let r = overfit_smoke(&cfg, &tiny_pairs(2)).unwrap();
        assert_eq!(r.initial_content, r.final_content);
        assert_eq!(r.initial_psnr, r.final_psnr);
        assert!(r.losses.is_empty());
    }
}
