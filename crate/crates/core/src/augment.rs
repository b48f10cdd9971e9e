//! Training-time augmentation of blurry/sharp pairs.
//!
//! Geometric and colour transforms use one set of random draws for both
//! images so pixel correspondence is kept. Noise goes on the blurry image
//! only.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::blur::BlurPair;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentConfig {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Random multiple of 90 degrees.
    pub rotate: bool,
    pub permute_channels: bool,
    /// Saturation factor range `[lo, hi]`; `None` disables.
    pub saturation: Option<(f64, f64)>,
    /// Noise standard deviations are `|N(0, noise_sigma_std^2)|`; zero
    /// disables noise.
    pub noise_sigma_std: f64,
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_horizontal: false,
            flip_vertical: false,
            rotate: false,
            permute_channels: false,
            saturation: None,
            noise_sigma_std: 0.0,
        }
    }

    pub fn full() -> Self {
        AugmentConfig {
            flip_horizontal: true,
            flip_vertical: true,
            rotate: true,
            permute_channels: true,
            saturation: Some((0.5, 1.5)),
            noise_sigma_std: 2.0 / 255.0,
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// The concrete transform drawn for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub quarter_turns: u8,
    pub channel_order: [usize; 3],
    pub saturation: f64,
    pub noise_sigma: f64,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw {
            flip_horizontal: false,
            flip_vertical: false,
            quarter_turns: 0,
            channel_order: [0, 1, 2],
            saturation: 1.0,
            noise_sigma: 0.0,
        }
    }

    /// Draws every enabled component in a fixed order.
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut d = Self::identity();
        if cfg.flip_horizontal {
            d.flip_horizontal = rng.random_bool(0.5);
        }
        if cfg.flip_vertical {
            d.flip_vertical = rng.random_bool(0.5);
        }
        if cfg.rotate {
            d.quarter_turns = rng.random_range(0..4u8);
        }
        if cfg.permute_channels {
            d.channel_order.shuffle(rng);
        }
        if let Some((lo, hi)) = cfg.saturation {
            d.saturation = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        if cfg.noise_sigma_std > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            d.noise_sigma = math::abs(z * cfg.noise_sigma_std);
        }
        d
    }

    /// Geometric and colour part, shared by both images.
    pub fn apply_shared(&self, image: &Tensor) -> Result<Tensor> {
        let mut t = image.clone();
        if self.flip_horizontal {
            t = flip_horizontal(&t);
        }
        if self.flip_vertical {
            t = flip_vertical(&t);
        }
        t = rotate90(&t, self.quarter_turns as usize);
        if self.channel_order != [0, 1, 2] {
            t = permute_channels(&t, self.channel_order)?;
        }
        if self.saturation != 1.0 {
            t = scale_saturation(&t, self.saturation)?;
        }
        Ok(t)
    }
}

/// Applies one random augmentation to a pair; see the module docs.
pub fn augment<R: Rng + ?Sized>(pair: &BlurPair, cfg: &AugmentConfig, rng: &mut R) -> Result<BlurPair> {
    pair.sharp.expect_shape("augment", pair.blurry.shape())?;
    let draw = AugmentDraw::sample(cfg, rng);
    let mut blurry = draw.apply_shared(&pair.blurry)?;
    let sharp = draw.apply_shared(&pair.sharp)?;
    if draw.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, draw.noise_sigma).map_err(|_| Error::InvalidConfig("noise sigma".into()))?;
        for v in blurry.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(BlurPair {
        blurry: blurry.clamp01(),
        sharp: sharp.clamp01(),
        provenance: pair.provenance,
    })
}

pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| t.at(n, c, y, s.w - 1 - x))
}

pub fn flip_vertical(t: &Tensor) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(s, |n, c, y, x| t.at(n, c, s.h - 1 - y, x))
}

/// Rotates counter-clockwise by `quarter_turns * 90` degrees.
pub fn rotate90(t: &Tensor, quarter_turns: usize) -> Tensor {
    let s = t.shape();
    match quarter_turns % 4 {
        0 => t.clone(),
        1 => Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| t.at(n, c, x, s.w - 1 - y)),
        2 => Tensor::from_fn(s, |n, c, y, x| t.at(n, c, s.h - 1 - y, s.w - 1 - x)),
        _ => Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| t.at(n, c, s.h - 1 - x, y)),
    }
}

/// Output channel `i` is input channel `order[i]`.
pub fn permute_channels(t: &Tensor, order: [usize; 3]) -> Result<Tensor> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::InvalidShape {
            op: "permute_channels",
            reason: alloc::format!("expected 3 channels, got {s}"),
        });
    }
    Ok(Tensor::from_fn(s, |n, c, y, x| t.at(n, order[c], y, x)))
}

fn rgb_to_hsv_px(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let v = max;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        let h = (g - b) / chroma;
        if h < 0.0 {
            h + 6.0
        } else {
            h
        }
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    (h / 6.0, s, v)
}

fn hsv_to_rgb_px(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = (h - math::floor(h)) * 6.0;
    let x = c * (1.0 - math::abs(hp % 2.0 - 1.0));
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

fn map_pixels(t: &Tensor, op: &'static str, f: impl Fn(f64, f64, f64) -> (f64, f64, f64)) -> Result<Tensor> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("expected 3 channels, got {s}"),
        });
    }
    let mut out = Tensor::zeros(s);
    let p = s.plane();
    for n in 0..s.n {
        let src = t.item(n);
        let dst = out.item_mut(n);
        for i in 0..p {
            let (a, b, c) = f(src[i], src[p + i], src[2 * p + i]);
            dst[i] = a;
            dst[p + i] = b;
            dst[2 * p + i] = c;
        }
    }
    Ok(out)
}

/// Hexcone HSV with hue as a fraction of a full turn in `[0, 1)`.
pub fn rgb_to_hsv(t: &Tensor) -> Result<Tensor> {
    map_pixels(t, "rgb_to_hsv", rgb_to_hsv_px)
}

pub fn hsv_to_rgb(t: &Tensor) -> Result<Tensor> {
    map_pixels(t, "hsv_to_rgb", hsv_to_rgb_px)
}

/// Multiplies HSV saturation by `factor`, clamped to `[0, 1]`.
pub fn scale_saturation(t: &Tensor, factor: f64) -> Result<Tensor> {
    map_pixels(t, "scale_saturation", |r, g, b| {
        let (h, s, v) = rgb_to_hsv_px(r, g, b);
        hsv_to_rgb_px(h, math::clamp01(s * factor), v)
    })
}
