//! Weight initialisation.

use rand::Rng;

use crate::conv::ConvParams;
use crate::math::sqrt;

/// Uniform weight initialisation schemes; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Init {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    HeUniform,
    /// `U(-b, b)` with `b = 1 / sqrt(fan_in)`.
    #[default]
    FanInUniform,
}

impl Init {
    pub fn bound(self, fan_in: usize) -> f64 {
        let f = fan_in.max(1) as f64;
        match self {
            Init::HeUniform => sqrt(6.0 / f),
            Init::FanInUniform => 1.0 / sqrt(f),
        }
    }
}

fn fill<R: Rng + ?Sized>(p: &mut ConvParams, bound: f64, rng: &mut R) {
    for v in p.weight.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    p.bias.data_mut().fill(0.0);
}

/// Fan-in is `in_channels * kh * kw`.
pub fn init_conv<R: Rng + ?Sized>(p: &mut ConvParams, init: Init, rng: &mut R) {
    let s = p.weight.shape();
    fill(p, init.bound(s.c * s.h * s.w), rng);
}

/// Each output pixel of a transposed convolution sees `kh * kw / stride^2`
/// taps per input channel.
pub fn init_upconv<R: Rng + ?Sized>(p: &mut ConvParams, init: Init, rng: &mut R) {
    let s = p.weight.shape();
    let taps = (s.h * s.w / (p.stride * p.stride)).max(1);
    fill(p, init.bound(s.n * taps), rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_stay_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ConvParams::zeros(8, 4, 3, 1, 1);
        p.bias.data_mut().fill(1.0);
        init_conv(&mut p, Init::HeUniform, &mut rng);
        let b = sqrt(6.0 / 36.0);
        assert!(p.weight.data().iter().all(|v| v.abs() <= b));
        assert!(p.weight.data().iter().any(|v| v.abs() > 0.5 * b));
        assert!(p.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bounds() {
        assert_eq!(Init::FanInUniform.bound(100), 0.1);
        assert!((Init::HeUniform.bound(6) - 1.0).abs() < 1e-15);
    }
}
