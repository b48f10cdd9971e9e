//! Multi-scale generator: one ResBlock stage per pyramid level, coarse to
//! fine, with upconvolved features handed to the next finer stage.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::init::{init_conv, init_upconv, Init};
use super::spec::GeneratorSpec;
use crate::activation::{relu, relu_backward};
use crate::conv::{conv2d, conv2d_backward, upconv2d, upconv2d_backward, ConvParams};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pyramid::{gaussian_pyramid, padded_size, reflect_pad};
use crate::tensor::{concat_channels, split_channels, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub head: ConvParams,
    pub blocks: Vec<ResBlockParams>,
    pub tail: ConvParams,
    /// Present on every stage except the finest.
    pub up: Option<ConvParams>,
}

/// Parameters of all stages, index 0 = finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub stages: Vec<StageParams>,
}

fn visit_conv<'a>(prefix: &str, c: &'a ConvParams, f: &mut dyn FnMut(String, &'a Tensor)) {
    f(alloc::format!("{prefix}.weight"), &c.weight);
    f(alloc::format!("{prefix}.bias"), &c.bias);
}

fn visit_conv_mut<'a>(prefix: &str, c: &'a mut ConvParams, f: &mut dyn FnMut(String, &'a mut Tensor)) {
    f(alloc::format!("{prefix}.weight"), &mut c.weight);
    f(alloc::format!("{prefix}.bias"), &mut c.bias);
}

impl ParamSet for GeneratorParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (level, s) in self.stages.iter().enumerate() {
            let k = level + 1;
            visit_conv(&alloc::format!("g.s{k}.head"), &s.head, f);
            for (b, blk) in s.blocks.iter().enumerate() {
                visit_conv(&alloc::format!("g.s{k}.block{b}.conv1"), &blk.conv1, f);
                visit_conv(&alloc::format!("g.s{k}.block{b}.conv2"), &blk.conv2, f);
            }
            visit_conv(&alloc::format!("g.s{k}.tail"), &s.tail, f);
            if let Some(up) = &s.up {
                visit_conv(&alloc::format!("g.s{k}.up"), up, f);
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        for (level, s) in self.stages.iter_mut().enumerate() {
            let k = level + 1;
            visit_conv_mut(&alloc::format!("g.s{k}.head"), &mut s.head, f);
            for (b, blk) in s.blocks.iter_mut().enumerate() {
                visit_conv_mut(&alloc::format!("g.s{k}.block{b}.conv1"), &mut blk.conv1, f);
                visit_conv_mut(&alloc::format!("g.s{k}.block{b}.conv2"), &mut blk.conv2, f);
            }
            visit_conv_mut(&alloc::format!("g.s{k}.tail"), &mut s.tail, f);
            if let Some(up) = &mut s.up {
                visit_conv_mut(&alloc::format!("g.s{k}.up"), up, f);
            }
        }
    }
}

impl GeneratorParams {
    /// All-zero parameters with the right shapes.
    pub fn zeros(spec: &GeneratorSpec) -> Self {
        let (f, k, pad) = (spec.feature_channels, spec.filter_size, spec.padding());
        let stages = (0..spec.scales)
            .map(|level| StageParams {
                head: ConvParams::zeros(f, spec.stage_in_channels(level), k, 1, pad),
                blocks: (0..spec.resblocks_per_scale)
                    .map(|_| ResBlockParams {
                        conv1: ConvParams::zeros(f, f, k, 1, pad),
                        conv2: ConvParams::zeros(f, f, k, 1, pad),
                    })
                    .collect(),
                tail: ConvParams::zeros(spec.image_channels, f, k, 1, pad),
                up: (level > 0).then(|| {
                    ConvParams::zeros_transposed(f, f, spec.upconv_kernel, spec.upconv_stride, spec.upconv_padding)
                }),
            })
            .collect();
        GeneratorParams { stages }
    }

    pub fn init<R: Rng + ?Sized>(spec: &GeneratorSpec, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut p = Self::zeros(spec);
        for s in &mut p.stages {
            init_conv(&mut s.head, init, rng);
            for b in &mut s.blocks {
                init_conv(&mut b.conv1, init, rng);
                init_conv(&mut b.conv2, init, rng);
            }
            init_conv(&mut s.tail, init, rng);
            if let Some(up) = &mut s.up {
                init_upconv(up, init, rng);
            }
        }
        Ok(p)
    }

    /// Zeroes every stage's last convolution.
    pub fn zero_tails(&mut self) {
        for s in &mut self.stages {
            s.tail.weight.data_mut().fill(0.0);
            s.tail.bias.data_mut().fill(0.0);
        }
    }

    pub fn check(&self, spec: &GeneratorSpec) -> Result<()> {
        let reference = Self::zeros(spec);
        let ours: Vec<Shape> = self.tensors().iter().map(|t| t.shape()).collect();
        let theirs: Vec<Shape> = reference.tensors().iter().map(|t| t.shape()).collect();
        if ours != theirs {
            return Err(Error::InvalidConfig("generator parameters do not match the spec".into()));
        }
        Ok(())
    }
}

fn check_preserving(p: &ConvParams, channels: usize, op: &'static str) -> Result<()> {
    let s = p.weight.shape();
    if s.n != channels || s.c != channels || p.stride != 1 || s.h != s.w || s.h.is_multiple_of(2) || p.padding != (s.h - 1) / 2 {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!(
                "ResBlock convolutions must map {channels} to {channels} channels and preserve size, got weight {s}, stride {}, padding {}",
                p.stride,
                p.padding
            ),
        });
    }
    Ok(())
}

/// Intermediates of one ResBlock needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ResBlockCache {
    pub input: Tensor,
    pub pre_activation: Tensor,
    pub activation: Tensor,
}

fn resblock_impl(x: &Tensor, p1: &ConvParams, p2: &ConvParams) -> Result<(Tensor, ResBlockCache)> {
    check_preserving(p1, x.shape().c, "resblock_forward")?;
    check_preserving(p2, x.shape().c, "resblock_forward")?;
    let pre = conv2d(x, p1)?;
    let act = relu(&pre);
    let mut out = conv2d(&act, p2)?;
    // no activation after the shortcut
    out.add_assign(x)?;
    Ok((
        out,
        ResBlockCache {
            input: x.clone(),
            pre_activation: pre,
            activation: act,
        },
    ))
}

/// `x + conv2(relu(conv1(x)))`.
pub fn resblock_forward(x: &Tensor, p1: &ConvParams, p2: &ConvParams) -> Result<Tensor> {
    resblock_impl(x, p1, p2).map(|r| r.0)
}

pub struct ResBlockGrads {
    pub input: Tensor,
    pub conv1: (Tensor, Tensor),
    pub conv2: (Tensor, Tensor),
}

pub fn resblock_backward(cache: &ResBlockCache, p1: &ConvParams, p2: &ConvParams, grad_out: &Tensor) -> Result<ResBlockGrads> {
    let g2 = conv2d_backward(&cache.activation, p2, grad_out)?;
    let g_pre = relu_backward(&cache.pre_activation, &g2.input)?;
    let g1 = conv2d_backward(&cache.input, p1, &g_pre)?;
    let mut g_in = g1.input;
    g_in.add_assign(grad_out)?;
    Ok(ResBlockGrads {
        input: g_in,
        conv1: (g1.weight, g1.bias),
        conv2: (g2.weight, g2.bias),
    })
}

/// Everything one stage needs for its backward pass.
#[derive(Debug, Clone)]
pub struct StageCache {
    pub input: Tensor,
    pub blocks: Vec<ResBlockCache>,
    pub features: Tensor,
}

pub struct StageOutput {
    pub latent: Tensor,
    /// Upconvolved features for the next finer stage; `None` at the finest.
    pub up_features: Option<Tensor>,
}

fn stage_impl(
    blurry: &Tensor,
    coarser: Option<&Tensor>,
    params: &StageParams,
    spec: &GeneratorSpec,
    record: bool,
) -> Result<(StageOutput, Option<StageCache>)> {
    let bs = blurry.shape();
    if bs.c != spec.image_channels {
        return Err(Error::ShapeMismatch {
            op: "stage_forward",
            expected: Shape::new(bs.n, spec.image_channels, bs.h, bs.w),
            actual: bs,
        });
    }
    let expects_coarser = params.head.weight.shape().c != spec.image_channels;
    let input = match (coarser, expects_coarser) {
        (None, false) => blurry.clone(),
        (Some(c), true) => {
            let expected = Shape::new(bs.n, spec.feature_channels, bs.h, bs.w);
            c.expect_shape("stage_forward", expected)?;
            concat_channels(blurry, c)?
        }
        (None, true) => {
            return Err(Error::InvalidConfig("this stage needs features from a coarser stage".into()));
        }
        (Some(_), false) => {
            return Err(Error::InvalidConfig("the coarsest stage takes no coarser features".into()));
        }
    };
    let mut h = conv2d(&input, &params.head)?;
    let mut caches = Vec::new();
    for b in &params.blocks {
        let (next, cache) = resblock_impl(&h, &b.conv1, &b.conv2)?;
        if record {
            caches.push(cache);
        }
        h = next;
    }
    let mut latent = conv2d(&h, &params.tail)?;
    if spec.input_skip {
        latent.add_assign(blurry)?;
    }
    let up_features = match &params.up {
        Some(up) => Some(upconv2d(&h, up)?),
        None => None,
    };
    let cache = record.then_some(StageCache {
        input,
        blocks: caches,
        features: h,
    });
    Ok((StageOutput { latent, up_features }, cache))
}

/// Runs one scale stage.
pub fn stage_forward(
    blurry: &Tensor,
    coarser: Option<&Tensor>,
    params: &StageParams,
    spec: &GeneratorSpec,
) -> Result<StageOutput> {
    stage_impl(blurry, coarser, params, spec, false).map(|r| r.0)
}

pub struct StageGrads {
    pub params: StageParams,
    pub blurry: Tensor,
    pub coarser: Option<Tensor>,
}

fn stage_backward(
    cache: &StageCache,
    params: &StageParams,
    spec: &GeneratorSpec,
    grad_latent: &Tensor,
    grad_up: Option<&Tensor>,
) -> Result<StageGrads> {
    let tail = conv2d_backward(&cache.features, &params.tail, grad_latent)?;
    let mut g_feat = tail.input;
    let up = match (&params.up, grad_up) {
        (Some(up), Some(g)) => {
            let ug = upconv2d_backward(&cache.features, up, g)?;
            g_feat.add_assign(&ug.input)?;
            Some(ConvParams {
                weight: ug.weight,
                bias: ug.bias,
                ..up.clone()
            })
        }
        (Some(up), None) => Some(ConvParams {
            weight: Tensor::zeros(up.weight.shape()),
            bias: Tensor::zeros(up.bias.shape()),
            ..up.clone()
        }),
        (None, _) => None,
    };
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (b, c) in params.blocks.iter().zip(&cache.blocks).rev() {
        let g = resblock_backward(c, &b.conv1, &b.conv2, &g_feat)?;
        g_feat = g.input;
        blocks.push(ResBlockParams {
            conv1: ConvParams {
                weight: g.conv1.0,
                bias: g.conv1.1,
                ..b.conv1.clone()
            },
            conv2: ConvParams {
                weight: g.conv2.0,
                bias: g.conv2.1,
                ..b.conv2.clone()
            },
        });
    }
    blocks.reverse();
    let head = conv2d_backward(&cache.input, &params.head, &g_feat)?;
    let (mut g_blurry, g_coarser) = if cache.input.shape().c > spec.image_channels {
        let (a, b) = split_channels(&head.input, spec.image_channels)?;
        (a, Some(b))
    } else {
        (head.input, None)
    };
    if spec.input_skip {
        g_blurry.add_assign(grad_latent)?;
    }
    Ok(StageGrads {
        params: StageParams {
            head: ConvParams {
                weight: head.weight,
                bias: head.bias,
                ..params.head.clone()
            },
            blocks,
            tail: ConvParams {
                weight: tail.weight,
                bias: tail.bias,
                ..params.tail.clone()
            },
            up,
        },
        blurry: g_blurry,
        coarser: g_coarser,
    })
}

/// Saved activations of a full generator pass, index 0 = finest.
pub struct GeneratorTape {
    stages: Vec<StageCache>,
}

fn check_pyramid(pyramid: &[Tensor], spec: &GeneratorSpec) -> Result<()> {
    if pyramid.len() != spec.scales {
        return Err(Error::InvalidConfig(alloc::format!(
            "expected a {}-level pyramid, got {} levels",
            spec.scales,
            pyramid.len()
        )));
    }
    let base = pyramid[0].shape();
    for (k, level) in pyramid.iter().enumerate() {
        let expected = Shape::new(base.n, base.c, base.h >> k, base.w >> k);
        if (base.h >> k) << k != base.h || (base.w >> k) << k != base.w {
            return Err(Error::InvalidShape {
                op: "generator_forward",
                reason: alloc::format!("finest level {base} is not divisible by 2^{k}"),
            });
        }
        level.expect_shape("generator_forward", expected)?;
    }
    Ok(())
}

fn generator_impl(
    pyramid: &[Tensor],
    params: &GeneratorParams,
    spec: &GeneratorSpec,
    record: bool,
) -> Result<(Vec<Tensor>, Option<GeneratorTape>)> {
    check_pyramid(pyramid, spec)?;
    if params.stages.len() != spec.scales {
        return Err(Error::InvalidConfig("parameter set has the wrong number of stages".into()));
    }
    let mut latents: Vec<Option<Tensor>> = (0..spec.scales).map(|_| None).collect();
    let mut caches: Vec<Option<StageCache>> = (0..spec.scales).map(|_| None).collect();
    let mut carried: Option<Tensor> = None;
    for level in (0..spec.scales).rev() {
        let (out, cache) = stage_impl(&pyramid[level], carried.as_ref(), &params.stages[level], spec, record)?;
        latents[level] = Some(out.latent);
        caches[level] = cache;
        carried = out.up_features;
    }
    let latents = latents.into_iter().map(|l| l.unwrap()).collect();
    let tape = record.then(|| GeneratorTape {
        stages: caches.into_iter().map(|c| c.unwrap()).collect(),
    });
    Ok((latents, tape))
}

/// Latent pyramid for a blurry pyramid (both finest first).
pub fn generator_forward(pyramid: &[Tensor], params: &GeneratorParams, spec: &GeneratorSpec) -> Result<Vec<Tensor>> {
    generator_impl(pyramid, params, spec, false).map(|r| r.0)
}

/// Like [`generator_forward`] but keeps what [`generator_backward`] needs.
pub fn generator_forward_recorded(
    pyramid: &[Tensor],
    params: &GeneratorParams,
    spec: &GeneratorSpec,
) -> Result<(Vec<Tensor>, GeneratorTape)> {
    generator_impl(pyramid, params, spec, true).map(|(l, t)| (l, t.unwrap()))
}

pub struct GeneratorGrads {
    pub params: GeneratorParams,
    /// Gradient with respect to each blurry input level.
    pub inputs: Vec<Tensor>,
}

/// Backpropagates `grad_latents` (finest first) through a recorded pass.
pub fn generator_backward(
    tape: &GeneratorTape,
    params: &GeneratorParams,
    spec: &GeneratorSpec,
    grad_latents: &[Tensor],
) -> Result<GeneratorGrads> {
    if grad_latents.len() != spec.scales || tape.stages.len() != spec.scales {
        return Err(Error::InvalidConfig("gradient pyramid depth does not match the spec".into()));
    }
    let mut stage_grads: Vec<Option<StageParams>> = (0..spec.scales).map(|_| None).collect();
    let mut inputs: Vec<Option<Tensor>> = (0..spec.scales).map(|_| None).collect();
    let mut grad_up: Option<Tensor> = None;
    for level in 0..spec.scales {
        let g = stage_backward(
            &tape.stages[level],
            &params.stages[level],
            spec,
            &grad_latents[level],
            grad_up.as_ref(),
        )?;
        stage_grads[level] = Some(g.params);
        inputs[level] = Some(g.blurry);
        grad_up = g.coarser;
    }
    Ok(GeneratorGrads {
        params: GeneratorParams {
            stages: stage_grads.into_iter().map(|s| s.unwrap()).collect(),
        },
        inputs: inputs.into_iter().map(|t| t.unwrap()).collect(),
    })
}

/// Deblurs one image of any size: reflect-pads to a multiple of
/// `2^(K-1)`, runs the generator on its Gaussian pyramid and crops every
/// latent level back. Returned levels are clamped to `[0, 1]`, finest first.
pub fn deblur(image: &Tensor, params: &GeneratorParams, spec: &GeneratorSpec) -> Result<Vec<Tensor>> {
    let s = image.shape();
    let (ph, pw) = (padded_size(s.h, spec.scales), padded_size(s.w, spec.scales));
    let padded = reflect_pad(image, ph, pw)?;
    let pyramid = gaussian_pyramid(&padded, spec.scales)?;
    let latents = generator_forward(&pyramid, params, spec)?;
    latents
        .iter()
        .enumerate()
        .map(|(k, l)| Ok(l.crop(0, 0, s.h.div_ceil(1 << k), s.w.div_ceil(1 << k))?.clamp01()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradcheck, random_normal, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_conv(c: usize, rng: &mut ChaCha8Rng, scale: f64) -> ConvParams {
        ConvParams::new(
            random_normal(Shape::new(c, c, 3, 3), rng).scale(scale),
            random_normal(Shape::new(c, 1, 1, 1), rng).scale(scale),
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn zero_resblock_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_normal(Shape::new(2, 4, 6, 6), &mut rng);
        let z = ConvParams::zeros(4, 4, 5, 1, 2);
        assert_eq!(resblock_forward(&x, &z, &z).unwrap(), x);
    }

    #[test]
    fn resblock_output_can_be_negative() {
        let x = Tensor::full(Shape::new(1, 2, 4, 4), -0.5);
        let z = ConvParams::zeros(2, 2, 3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p2 = random_conv(2, &mut rng, 1.0);
        let y = resblock_forward(&x, &z, &p2).unwrap();
        // relu(conv1(x)) = 0, so only conv2's bias is added
        assert!(y.data().iter().any(|&v| v < 0.0));
        let y0 = resblock_forward(&x, &z, &ConvParams::zeros(2, 2, 3, 1, 1)).unwrap();
        assert!(y0.data().iter().all(|&v| v == -0.5));
    }

    #[test]
    fn resblock_rejects_channel_mismatch() {
        let x = Tensor::zeros(Shape::new(1, 4, 4, 4));
        let p = ConvParams::zeros(3, 3, 3, 1, 1);
        assert!(resblock_forward(&x, &p, &p).is_err());
        let strided = ConvParams::zeros(4, 4, 3, 2, 1);
        assert!(resblock_forward(&x, &strided, &strided).is_err());
    }

    #[test]
    fn resblock_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_normal(Shape::new(1, 4, 8, 8), &mut rng);
        let p1 = random_conv(4, &mut rng, 0.3);
        let p2 = random_conv(4, &mut rng, 0.3);
        let go = random_normal(x.shape(), &mut rng);
        let (_, cache) = resblock_impl(&x, &p1, &p2).unwrap();
        let g = resblock_backward(&cache, &p1, &p2, &go).unwrap();
        let f = |ts: &[Tensor]| {
            let q1 = ConvParams::new(ts[1].clone(), ts[2].clone(), 1, 1).unwrap();
            let q2 = ConvParams::new(ts[3].clone(), ts[4].clone(), 1, 1).unwrap();
            resblock_forward(&ts[0], &q1, &q2).unwrap().dot(&go).unwrap()
        };
        let r = gradcheck(
            &[x, p1.weight.clone(), p1.bias.clone(), p2.weight.clone(), p2.bias.clone()],
            &[g.input, g.conv1.0, g.conv1.1, g.conv2.0, g.conv2.1],
            f,
            &GradCheckConfig::default(),
        );
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn desk_stage_shapes() {
        let spec = GeneratorSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GeneratorParams::init(&spec, Init::default(), &mut rng).unwrap();
        let x = Tensor::full(Shape::new(1, 3, 16, 16), 0.5);
        let coarsest = stage_forward(&x, None, &p.stages[2], &spec).unwrap();
        assert_eq!(coarsest.latent.shape(), Shape::new(1, 3, 16, 16));
        assert_eq!(coarsest.up_features.as_ref().unwrap().shape(), Shape::new(1, 16, 32, 32));
        let x1 = Tensor::full(Shape::new(1, 3, 32, 32), 0.5);
        let mid = stage_forward(&x1, coarsest.up_features.as_ref(), &p.stages[1], &spec).unwrap();
        assert_eq!(mid.latent.shape(), Shape::new(1, 3, 32, 32));
        let x0 = Tensor::full(Shape::new(1, 3, 64, 64), 0.5);
        let fine = stage_forward(&x0, mid.up_features.as_ref(), &p.stages[0], &spec).unwrap();
        assert!(fine.up_features.is_none());
        assert!(stage_forward(&x0, None, &p.stages[0], &spec).is_err());
        assert!(stage_forward(&x, Some(&x), &p.stages[2], &spec).is_err());
    }

    #[test]
    fn deblur_crops_back_to_input_size() {
        let spec = GeneratorSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = GeneratorParams::init(&spec, Init::default(), &mut rng).unwrap();
        let img = Tensor::from_fn(Shape::new(1, 3, 18, 13), |_, c, y, x| ((c + y * x) % 7) as f64 / 7.0);
        let out = deblur(&img, &p, &spec).unwrap();
        let sizes: Vec<(usize, usize)> = out.iter().map(|t| (t.shape().h, t.shape().w)).collect();
        assert_eq!(sizes, [(18, 13), (9, 7), (5, 4)]);
        p.zero_tails();
        assert_eq!(deblur(&img, &p, &spec).unwrap()[0], img);
    }

    #[test]
    fn generator_rejects_wrong_depth() {
        let spec = GeneratorSpec::desk();
        let p = GeneratorParams::zeros(&spec);
        let pyr = [Tensor::zeros(Shape::new(1, 3, 16, 16)), Tensor::zeros(Shape::new(1, 3, 8, 8))];
        assert!(generator_forward(&pyr, &p, &spec).is_err());
    }

    #[test]
    fn zero_tails_with_skip_pass_input_through() {
        let spec = GeneratorSpec::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = GeneratorParams::init(&spec, Init::default(), &mut rng).unwrap();
        p.zero_tails();
        let pyr: Vec<Tensor> = (0..3)
            .map(|k| random_normal(Shape::new(2, 3, 16 >> k, 16 >> k), &mut rng))
            .collect();
        assert_eq!(generator_forward(&pyr, &p, &spec).unwrap(), pyr);
    }
}
