//! Central finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math;
use crate::tensor::{Shape, Tensor};

/// Tensor of i.i.d. standard normal draws.
pub fn random_normal<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.sample(StandardNormal))
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn finite_difference(x: &Tensor, i: usize, eps: f64, f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut probe = x.clone();
    let orig = probe.data()[i];
    probe.data_mut()[i] = orig + eps;
    let plus = f(&probe);
    probe.data_mut()[i] = orig - eps;
    let minus = f(&probe);
    (plus - minus) / (2.0 * eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Coordinates sampled per tensor; tensors at most this large are
    /// checked exhaustively.
    pub samples_per_tensor: usize,
    /// Coordinates with `|analytic| + |numeric|` below this are not compared.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            samples_per_tensor: 24,
            abs_floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    /// Coordinates skipped because the perturbation straddled a kink or the
    /// gradient was below the comparison floor.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.checked > 0
    }
}

/// Compares `analytic[t]` against central differences of `f` with respect to
/// each tensor in `inputs`, on randomly sampled coordinates.
///
/// A failing coordinate whose one-sided differences disagree by more than the
/// failure itself is a kink crossing (ReLU-style) and is skipped.
pub fn gradcheck(
    inputs: &[Tensor],
    analytic: &[Tensor],
    f: impl Fn(&[Tensor]) -> f64,
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe: Vec<Tensor> = inputs.to_vec();
    let f0 = f(&probe);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        tolerance: cfg.tolerance,
    };
    for (t, (input, grad)) in inputs.iter().zip(analytic).enumerate() {
        assert_eq!(input.shape(), grad.shape(), "gradient {t} shape");
        let len = input.data().len();
        let picks: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, cfg.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let orig = input.data()[i];
            probe[t].data_mut()[i] = orig + cfg.eps;
            let plus = f(&probe);
            probe[t].data_mut()[i] = orig - cfg.eps;
            let minus = f(&probe);
            probe[t].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad.data()[i];
            if math::abs(a) + math::abs(numeric) < cfg.abs_floor {
                report.skipped += 1;
                continue;
            }
            let rel = math::abs(a - numeric) / math::abs(a).max(math::abs(numeric));
            // A kink inside [x - eps, x + eps] shows up as one-sided slopes
            // that disagree by at least the analytic/numeric mismatch.
            let (fwd, bwd) = ((plus - f0) / cfg.eps, (f0 - minus) / cfg.eps);
            if rel > cfg.tolerance && math::abs(fwd - bwd) >= math::abs(a - numeric) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Coordinate { tensor: t, index: i });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv2d, conv2d_backward, ConvParams};

    #[test]
    fn linear_layer_passes_with_rounding_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_normal(Shape::new(1, 3, 5, 5), &mut rng);
        let w = random_normal(Shape::new(2, 3, 1, 1), &mut rng);
        let b = random_normal(Shape::new(2, 1, 1, 1), &mut rng);
        let go = random_normal(Shape::new(1, 2, 5, 5), &mut rng);
        let p = ConvParams::new(w.clone(), b.clone(), 1, 0).unwrap();
        let g = conv2d_backward(&x, &p, &go).unwrap();
        let f = |ts: &[Tensor]| {
            let p = ConvParams::new(ts[1].clone(), ts[2].clone(), 1, 0).unwrap();
            conv2d(&ts[0], &p).unwrap().dot(&go).unwrap()
        };
        let r = gradcheck(&[x, w, b], &[g.input, g.weight, g.bias], f, &GradCheckConfig::default());
        assert!(r.passed(), "{r:?}");
        assert!(r.max_rel_error < 1e-8);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn corrupted_backward_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_normal(Shape::new(1, 2, 4, 4), &mut rng);
        let w = random_normal(Shape::new(2, 2, 3, 3), &mut rng);
        let go = random_normal(Shape::new(1, 2, 4, 4), &mut rng);
        let p = ConvParams::new(w, Tensor::zeros(Shape::new(2, 1, 1, 1)), 1, 1).unwrap();
        let g = conv2d_backward(&x, &p, &go).unwrap();
        let f = |ts: &[Tensor]| conv2d(&ts[0], &p).unwrap().dot(&go).unwrap();
        let r = gradcheck(&[x], &[g.input.scale(2.0)], f, &GradCheckConfig::default());
        assert!(!r.passed());
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }
}
