//! Ready-made gradient checks for every differentiable building block.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::{leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, sigmoid_backward, DEFAULT_LEAKY_SLOPE};
use crate::conv::{conv2d, conv2d_backward, upconv2d, upconv2d_backward, ConvParams};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, random_normal, GradCheckConfig, GradCheckReport};
use crate::model::discriminator::{discriminator_backward, discriminator_forward, discriminator_forward_recorded, DiscriminatorParams};
use crate::model::generator::{
    generator_backward, generator_forward, generator_forward_recorded, resblock_backward, resblock_forward, GeneratorParams,
    ResBlockCache,
};
use crate::model::{DiscriminatorSpec, GeneratorSpec, Init};
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Convolution, transposed convolution and the activations.
    Layer,
    ResBlock,
    /// Desk generator on a 32/16/8 pyramid.
    Generator,
    /// Desk discriminator on 32x32 inputs.
    Discriminator,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Layer, Scope::ResBlock, Scope::Generator, Scope::Discriminator];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Layer => "layer",
            Scope::ResBlock => "resblock",
            Scope::Generator => "generator",
            Scope::Discriminator => "discriminator",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        Scope::ALL.iter().copied().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

/// Runs every check in `scope`. With `corrupt` the analytic gradients are
/// doubled before comparison, which must make every check fail.
pub fn run_scope(scope: Scope, seed: u64, corrupt: bool) -> Result<Vec<NamedReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let mut out = Vec::new();
    let mut push = |name: &str, inputs: Vec<Tensor>, grads: Vec<Tensor>, f: &dyn Fn(&[Tensor]) -> f64| {
        let grads: Vec<Tensor> = if corrupt { grads.iter().map(|g| g.scale(2.0)).collect() } else { grads };
        out.push(NamedReport {
            name: name.into(),
            report: gradcheck(&inputs, &grads, f, &cfg),
        });
    };
    match scope {
        Scope::Layer => {
            let x = random_normal(Shape::new(1, 2, 6, 6), &mut rng);
            let p = ConvParams::new(
                random_normal(Shape::new(3, 2, 5, 5), &mut rng),
                random_normal(Shape::new(3, 1, 1, 1), &mut rng),
                1,
                2,
            )?;
            let go = random_normal(conv2d(&x, &p)?.shape(), &mut rng);
            let g = conv2d_backward(&x, &p, &go)?;
            let f = |ts: &[Tensor]| {
                let q = ConvParams::new(ts[1].clone(), ts[2].clone(), 1, 2).unwrap();
                conv2d(&ts[0], &q).unwrap().dot(&go).unwrap()
            };
            push("conv2d", alloc::vec![x, p.weight, p.bias], alloc::vec![g.input, g.weight, g.bias], &f);

            let x = random_normal(Shape::new(2, 3, 4, 4), &mut rng);
            let p = ConvParams::new(
                random_normal(Shape::new(3, 2, 4, 4), &mut rng),
                random_normal(Shape::new(2, 1, 1, 1), &mut rng),
                2,
                1,
            )?;
            let go = random_normal(upconv2d(&x, &p)?.shape(), &mut rng);
            let g = upconv2d_backward(&x, &p, &go)?;
            let f = |ts: &[Tensor]| {
                let q = ConvParams::new(ts[1].clone(), ts[2].clone(), 2, 1).unwrap();
                upconv2d(&ts[0], &q).unwrap().dot(&go).unwrap()
            };
            push("upconv2d", alloc::vec![x, p.weight, p.bias], alloc::vec![g.input, g.weight, g.bias], &f);

            let x = random_normal(Shape::new(2, 3, 4, 4), &mut rng);
            let go = random_normal(x.shape(), &mut rng);
            let g = relu_backward(&x, &go)?;
            push("relu", alloc::vec![x.clone()], alloc::vec![g], &|ts| relu(&ts[0]).dot(&go).unwrap());
            let g = leaky_relu_backward(&x, DEFAULT_LEAKY_SLOPE, &go)?;
            push("leaky_relu", alloc::vec![x.clone()], alloc::vec![g], &|ts| {
                leaky_relu(&ts[0], DEFAULT_LEAKY_SLOPE).dot(&go).unwrap()
            });
            let g = sigmoid_backward(&sigmoid(&x), &go)?;
            push("sigmoid", alloc::vec![x], alloc::vec![g], &|ts| sigmoid(&ts[0]).dot(&go).unwrap());
        }
        Scope::ResBlock => {
            let x = random_normal(Shape::new(1, 4, 8, 8), &mut rng);
            let conv = |rng: &mut ChaCha8Rng| {
                ConvParams::new(
                    random_normal(Shape::new(4, 4, 5, 5), rng).scale(0.2),
                    random_normal(Shape::new(4, 1, 1, 1), rng).scale(0.2),
                    1,
                    2,
                )
            };
            let p1 = conv(&mut rng)?;
            let p2 = conv(&mut rng)?;
            let go = random_normal(x.shape(), &mut rng);
            let pre = conv2d(&x, &p1)?;
            let cache = ResBlockCache {
                input: x.clone(),
                activation: relu(&pre),
                pre_activation: pre,
            };
            let g = resblock_backward(&cache, &p1, &p2, &go)?;
            let f = |ts: &[Tensor]| {
                let q1 = ConvParams::new(ts[1].clone(), ts[2].clone(), 1, 2).unwrap();
                let q2 = ConvParams::new(ts[3].clone(), ts[4].clone(), 1, 2).unwrap();
                resblock_forward(&ts[0], &q1, &q2).unwrap().dot(&go).unwrap()
            };
            push(
                "resblock",
                alloc::vec![x, p1.weight, p1.bias, p2.weight, p2.bias],
                alloc::vec![g.input, g.conv1.0, g.conv1.1, g.conv2.0, g.conv2.1],
                &f,
            );
        }
        Scope::Generator => {
            let spec = GeneratorSpec::desk();
            let mut params = GeneratorParams::init(&spec, Init::FanInUniform, &mut rng)?;
            // non-zero biases so their gradients are exercised too
            for t in params.tensors_mut() {
                if t.shape().c == 1 && t.shape().h == 1 {
                    *t = random_normal(t.shape(), &mut rng).scale(0.1);
                }
            }
            let pyramid: Vec<Tensor> = (0..spec.scales)
                .map(|k| random_normal(Shape::new(1, spec.image_channels, 32 >> k, 32 >> k), &mut rng))
                .collect();
            let (latents, tape) = generator_forward_recorded(&pyramid, &params, &spec)?;
            let weights: Vec<Tensor> = latents.iter().map(|l| random_normal(l.shape(), &mut rng)).collect();
            let g = generator_backward(&tape, &params, &spec, &weights)?;
            let levels = pyramid.len();
            let mut inputs = pyramid;
            inputs.extend(params.tensors().into_iter().cloned());
            let mut grads = g.inputs;
            grads.extend(g.params.tensors().into_iter().cloned());
            let f = |ts: &[Tensor]| {
                let mut q = params.clone();
                for (dst, src) in q.tensors_mut().into_iter().zip(&ts[levels..]) {
                    *dst = src.clone();
                }
                let out = generator_forward(&ts[..levels], &q, &spec).unwrap();
                out.iter().zip(&weights).map(|(l, w)| l.dot(w).unwrap()).sum()
            };
            push("generator", inputs, grads, &f);
        }
        Scope::Discriminator => {
            let spec = DiscriminatorSpec::desk(32);
            let params = DiscriminatorParams::init(&spec, Init::HeUniform, &mut rng)?;
            let x = random_normal(Shape::new(2, 3, 32, 32), &mut rng);
            let (_, tape) = discriminator_forward_recorded(&x, &params, &spec)?;
            let w = random_normal(Shape::new(2, 1, 1, 1), &mut rng);
            let g = discriminator_backward(&tape, &params, &spec, &w)?;
            let mut inputs = alloc::vec![x];
            inputs.extend(params.tensors().into_iter().cloned());
            let mut grads = alloc::vec![g.input];
            grads.extend(g.params.tensors().into_iter().cloned());
            let f = |ts: &[Tensor]| {
                let mut q = params.clone();
                for (dst, src) in q.tensors_mut().into_iter().zip(&ts[1..]) {
                    *dst = src.clone();
                }
                discriminator_forward(&ts[0], &q, &spec).unwrap().dot(&w).unwrap()
            };
            push("discriminator", inputs, grads, &f);
        }
    }
    if out.iter().any(|r| r.report.checked == 0) {
        return Err(Error::InvalidConfig("a gradient check compared no coordinates".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_scope_passes_and_corruption_fails() {
        let ok = run_scope(Scope::Layer, 1, false).unwrap();
        assert_eq!(ok.len(), 5);
        assert!(ok.iter().all(|r| r.report.passed()), "{ok:?}");
        let bad = run_scope(Scope::Layer, 1, true).unwrap();
        assert!(bad.iter().all(|r| !r.report.passed()));
    }

    #[test]
    fn scope_names_round_trip() {
        for s in Scope::ALL {
            assert_eq!(Scope::parse(s.name()), Some(s));
        }
        assert_eq!(Scope::parse("everything"), None);
    }
}
