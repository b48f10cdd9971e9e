//! Real/fake classifier over full-resolution images.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::init::{init_conv, Init};
use super::spec::DiscriminatorSpec;
use crate::activation::{leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward};
use crate::conv::{conv2d, conv2d_backward, ConvParams};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub convs: Vec<ConvParams>,
    /// The fully-connected layer, stored as a 1x1 convolution over the
    /// flattened features.
    pub fc: ConvParams,
}

impl ParamSet for DiscriminatorParams {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, c) in self.convs.iter().enumerate() {
            f(alloc::format!("d.conv{}.weight", i + 1), &c.weight);
            f(alloc::format!("d.conv{}.bias", i + 1), &c.bias);
        }
        f("d.fc.weight".into(), &self.fc.weight);
        f("d.fc.bias".into(), &self.fc.bias);
    }

    fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            f(alloc::format!("d.conv{}.weight", i + 1), &mut c.weight);
            f(alloc::format!("d.conv{}.bias", i + 1), &mut c.bias);
        }
        f("d.fc.weight".into(), &mut self.fc.weight);
        f("d.fc.bias".into(), &mut self.fc.bias);
    }
}

impl DiscriminatorParams {
    pub fn zeros(spec: &DiscriminatorSpec) -> Result<Self> {
        spec.validate()?;
        let mut cin = spec.in_channels;
        let convs = spec
            .convs
            .iter()
            .map(|c| {
                let p = ConvParams::zeros(c.out_channels, cin, c.kernel, c.stride, (c.kernel - 1) / 2);
                cin = c.out_channels;
                p
            })
            .collect();
        let fc = ConvParams::zeros(spec.fc_out, spec.flat_features()?, 1, 1, 0);
        Ok(DiscriminatorParams { convs, fc })
    }

    pub fn init<R: Rng + ?Sized>(spec: &DiscriminatorSpec, init: Init, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        for c in &mut p.convs {
            init_conv(c, init, rng);
        }
        init_conv(&mut p.fc, init, rng);
        Ok(p)
    }

    pub fn check(&self, spec: &DiscriminatorSpec) -> Result<()> {
        let reference = Self::zeros(spec)?;
        let ours: Vec<Shape> = self.tensors().iter().map(|t| t.shape()).collect();
        let theirs: Vec<Shape> = reference.tensors().iter().map(|t| t.shape()).collect();
        if ours != theirs {
            return Err(Error::InvalidConfig("discriminator parameters do not match the spec".into()));
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
pub struct DiscriminatorTape {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    flat: Tensor,
    feature_shape: Shape,
    probability: Tensor,
}

fn forward_impl(
    image: &Tensor,
    params: &DiscriminatorParams,
    spec: &DiscriminatorSpec,
    record: bool,
) -> Result<(Tensor, Option<DiscriminatorTape>)> {
    let s = image.shape();
    let expected = Shape::new(s.n, spec.in_channels, spec.input_size, spec.input_size);
    image.expect_shape("discriminator_forward", expected)?;
    if params.convs.len() != spec.convs.len() {
        return Err(Error::InvalidConfig("discriminator parameters do not match the spec".into()));
    }
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut h = image.clone();
    for c in &params.convs {
        let z = conv2d(&h, c)?;
        let a = leaky_relu(&z, spec.leaky_slope);
        if record {
            inputs.push(h);
            pre.push(z);
        }
        h = a;
    }
    let feature_shape = h.shape();
    let flat = h.reshape(Shape::new(s.n, feature_shape.c * feature_shape.h * feature_shape.w, 1, 1))?;
    let fc = conv2d(&flat, &params.fc)?;
    let logits = Tensor::from_fn(Shape::new(s.n, 1, 1, 1), |n, _, _, _| {
        let v = fc.item(n);
        v.iter().sum::<f64>() / v.len() as f64
    });
    let probability = sigmoid(&logits);
    let tape = record.then(|| DiscriminatorTape {
        inputs,
        pre,
        flat,
        feature_shape,
        probability: probability.clone(),
    });
    Ok((probability, tape))
}

/// Probability that each image in the batch is sharp, shape `(N, 1, 1, 1)`.
pub fn discriminator_forward(image: &Tensor, params: &DiscriminatorParams, spec: &DiscriminatorSpec) -> Result<Tensor> {
    forward_impl(image, params, spec, false).map(|r| r.0)
}

pub fn discriminator_forward_recorded(
    image: &Tensor,
    params: &DiscriminatorParams,
    spec: &DiscriminatorSpec,
) -> Result<(Tensor, DiscriminatorTape)> {
    forward_impl(image, params, spec, true).map(|(p, t)| (p, t.unwrap()))
}

pub struct DiscriminatorGrads {
    pub params: DiscriminatorParams,
    pub input: Tensor,
}

/// `grad_probability` is the loss gradient with respect to the output
/// probabilities.
pub fn discriminator_backward(
    tape: &DiscriminatorTape,
    params: &DiscriminatorParams,
    spec: &DiscriminatorSpec,
    grad_probability: &Tensor,
) -> Result<DiscriminatorGrads> {
    let g_logit = sigmoid_backward(&tape.probability, grad_probability)?;
    let n = g_logit.shape().n;
    let width = spec.fc_out;
    let g_fc = Tensor::from_fn(Shape::new(n, width, 1, 1), |b, _, _, _| g_logit.data()[b] / width as f64);
    let fc = conv2d_backward(&tape.flat, &params.fc, &g_fc)?;
    let mut g = fc.input.reshape(Shape::new(n, tape.feature_shape.c, tape.feature_shape.h, tape.feature_shape.w))?;
    let mut convs = Vec::with_capacity(params.convs.len());
    for ((c, input), z) in params.convs.iter().zip(&tape.inputs).zip(&tape.pre).rev() {
        let gz = leaky_relu_backward(z, spec.leaky_slope, &g)?;
        let cg = conv2d_backward(input, c, &gz)?;
        g = cg.input;
        convs.push(ConvParams {
            weight: cg.weight,
            bias: cg.bias,
            ..c.clone()
        });
    }
    convs.reverse();
    Ok(DiscriminatorGrads {
        params: DiscriminatorParams {
            convs,
            fc: ConvParams {
                weight: fc.weight,
                bias: fc.bias,
                ..params.fc.clone()
            },
        },
        input: g,
    })
}
