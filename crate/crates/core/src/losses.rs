//! Multi-scale content loss, adversarial losses and their weighted sum.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::ln;
use crate::tensor::{Shape, Tensor};

/// Guard inside every logarithm.
pub const LOG_EPS: f64 = 1e-12;

/// Default adversarial weight.
pub const DEFAULT_LAMBDA: f64 = 1e-4;

/// Which generator objective is minimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GeneratorObjective {
    /// `log(1 - D(G(B)))`.
    #[default]
    Saturating,
    /// `-log D(G(B))`.
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub content: f64,
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub total: f64,
    pub per_level_content: Vec<f64>,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.content, self.adversarial_g, self.adversarial_d, self.total]
            .iter()
            .chain(&self.per_level_content)
            .all(|v| v.is_finite())
    }
}

fn clamped_ln(p: f64) -> f64 {
    ln(p.max(LOG_EPS))
}

fn check_levels(latents: &[Tensor], sharps: &[Tensor]) -> Result<()> {
    if latents.is_empty() {
        return Err(Error::Empty("content_loss"));
    }
    if latents.len() != sharps.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "{} latent levels against {} sharp levels",
            latents.len(),
            sharps.len()
        )));
    }
    for (l, s) in latents.iter().zip(sharps) {
        s.expect_shape("content_loss", l.shape())?;
    }
    Ok(())
}

/// Per-level mean squared error, averaged over levels and halved. Returns
/// the loss and the per-level MSEs. The mean runs over every element
/// including the batch axis.
pub fn content_loss(latents: &[Tensor], sharps: &[Tensor]) -> Result<(f64, Vec<f64>)> {
    check_levels(latents, sharps)?;
    let per_level: Vec<f64> = latents
        .iter()
        .zip(sharps)
        .map(|(l, s)| {
            let sq: f64 = l.data().iter().zip(s.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            sq / l.data().len() as f64
        })
        .collect();
    let k = per_level.len() as f64;
    Ok((per_level.iter().sum::<f64>() / (2.0 * k), per_level))
}

/// Gradient of [`content_loss`] with respect to each latent level:
/// `(L_k - S_k) / (K * numel_k)`.
pub fn content_loss_grad(latents: &[Tensor], sharps: &[Tensor]) -> Result<Vec<Tensor>> {
    check_levels(latents, sharps)?;
    let k = latents.len() as f64;
    latents
        .iter()
        .zip(sharps)
        .map(|(l, s)| {
            let denom = k * l.data().len() as f64;
            l.zip_map(s, "content_loss_grad", |a, b| (a - b) / denom)
        })
        .collect()
}

fn check_probs(p: &Tensor, op: &'static str) -> Result<()> {
    let s = p.shape();
    p.expect_shape(op, Shape::new(s.n, 1, 1, 1))?;
    if s.n == 0 {
        return Err(Error::Empty(op));
    }
    if !p.is_finite() {
        return Err(Error::NonFinite(op));
    }
    if let Some(&v) = p.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange { op, value: v });
    }
    Ok(())
}

/// `-mean[log D(S) + log(1 - D(G(B)))]`, the quantity the discriminator
/// minimises.
pub fn adversarial_d_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<f64> {
    check_probs(d_real, "adversarial_d_loss")?;
    check_probs(d_fake, "adversarial_d_loss")?;
    let real: f64 = d_real.data().iter().map(|&p| clamped_ln(p)).sum::<f64>() / d_real.data().len() as f64;
    let fake: f64 = d_fake.data().iter().map(|&p| clamped_ln(1.0 - p)).sum::<f64>() / d_fake.data().len() as f64;
    Ok(-(real + fake))
}

/// Gradients of [`adversarial_d_loss`] with respect to `d_real` and `d_fake`.
/// Clamped entries get zero gradient.
pub fn adversarial_d_loss_grad(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    check_probs(d_real, "adversarial_d_loss_grad")?;
    check_probs(d_fake, "adversarial_d_loss_grad")?;
    let nr = d_real.data().len() as f64;
    let nf = d_fake.data().len() as f64;
    let gr = d_real.map(|p| if p > LOG_EPS { -1.0 / (nr * p) } else { 0.0 });
    let gf = d_fake.map(|p| if 1.0 - p > LOG_EPS { 1.0 / (nf * (1.0 - p)) } else { 0.0 });
    Ok((gr, gf))
}

/// Batch mean of the generator's adversarial objective.
pub fn adversarial_g_loss(d_fake: &Tensor, objective: GeneratorObjective) -> Result<f64> {
    check_probs(d_fake, "adversarial_g_loss")?;
    let n = d_fake.data().len() as f64;
    let sum: f64 = match objective {
        GeneratorObjective::Saturating => d_fake.data().iter().map(|&p| clamped_ln(1.0 - p)).sum(),
        GeneratorObjective::NonSaturating => d_fake.data().iter().map(|&p| -clamped_ln(p)).sum(),
    };
    Ok(sum / n)
}

pub fn adversarial_g_loss_grad(d_fake: &Tensor, objective: GeneratorObjective) -> Result<Tensor> {
    check_probs(d_fake, "adversarial_g_loss_grad")?;
    let n = d_fake.data().len() as f64;
    Ok(match objective {
        GeneratorObjective::Saturating => d_fake.map(|p| if 1.0 - p > LOG_EPS { -1.0 / (n * (1.0 - p)) } else { 0.0 }),
        GeneratorObjective::NonSaturating => d_fake.map(|p| if p > LOG_EPS { -1.0 / (n * p) } else { 0.0 }),
    })
}

/// `content + lambda * adv_g`.
pub fn total_loss(content: f64, adv_g: f64, lambda: f64) -> Result<f64> {
    if !content.is_finite() || !adv_g.is_finite() || !lambda.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok(content + lambda * adv_g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference, random_normal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prob(v: &[f64]) -> Tensor {
        Tensor::from_vec(Shape::new(v.len(), 1, 1, 1), v.to_vec()).unwrap()
    }

    fn px(v: f64) -> Tensor {
        Tensor::full(Shape::new(1, 1, 1, 1), v)
    }

    #[test]
    fn identical_pyramids_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l: Vec<Tensor> = (0..3).map(|k| random_normal(Shape::new(2, 3, 8 >> k, 8 >> k), &mut rng)).collect();
        let (c, per) = content_loss(&l, &l).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(per, [0.0; 3]);
    }

    #[test]
    fn single_pixel_hand_value() {
        let (c, per) = content_loss(&[px(0.5)], &[px(0.0)]).unwrap();
        assert_eq!(c, 0.125);
        assert_eq!(per, [0.25]);
    }

    #[test]
    fn two_levels_average_then_halve() {
        let l = [Tensor::full(Shape::new(1, 3, 4, 4), 0.3), Tensor::full(Shape::new(1, 3, 2, 2), 0.1)];
        let s = [Tensor::zeros(Shape::new(1, 3, 4, 4)), Tensor::zeros(Shape::new(1, 3, 2, 2))];
        let (c, per) = content_loss(&l, &s).unwrap();
        assert!((c - (per[0] + per[1]) / 4.0).abs() < 1e-18);
        assert!((per[0] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn content_loss_rejects_mismatch() {
        assert!(content_loss(&[px(0.0)], &[px(0.0), px(0.0)]).is_err());
        assert!(content_loss(&[px(0.0)], &[Tensor::zeros(Shape::new(1, 1, 2, 1))]).is_err());
        assert!(content_loss(&[], &[]).is_err());
    }

    #[test]
    fn content_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l: Vec<Tensor> = (0..2).map(|k| random_normal(Shape::new(2, 3, 4 >> k, 4 >> k), &mut rng)).collect();
        let s: Vec<Tensor> = (0..2).map(|k| random_normal(Shape::new(2, 3, 4 >> k, 4 >> k), &mut rng)).collect();
        let g = content_loss_grad(&l, &s).unwrap();
        for k in 0..2 {
            for i in 0..l[k].data().len() {
                let fd = finite_difference(&l[k], i, 1e-5, |t| {
                    let mut ll = l.clone();
                    ll[k] = t.clone();
                    content_loss(&ll, &s).unwrap().0
                });
                let a = g[k].data()[i];
                assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-8), "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn d_loss_hand_values() {
        let v = adversarial_d_loss(&prob(&[0.5]), &prob(&[0.5])).unwrap();
        assert!((v - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        let perfect = adversarial_d_loss(&prob(&[1.0 - 1e-12]), &prob(&[1e-12])).unwrap();
        assert!(perfect.abs() < 1e-11);
        let worst = adversarial_d_loss(&prob(&[0.0]), &prob(&[1.0])).unwrap();
        assert!(worst.is_finite() && worst > 50.0);
    }

    #[test]
    fn g_loss_hand_values() {
        let s = adversarial_g_loss(&prob(&[0.5]), GeneratorObjective::Saturating).unwrap();
        assert!((s - 0.5f64.ln()).abs() < 1e-12);
        let ns = adversarial_g_loss(&prob(&[0.5]), GeneratorObjective::NonSaturating).unwrap();
        assert!((ns + 0.5f64.ln()).abs() < 1e-12);
        assert!(adversarial_g_loss(&prob(&[1e-15]), GeneratorObjective::Saturating).unwrap().abs() < 1e-14);
        assert!(adversarial_g_loss(&prob(&[0.0]), GeneratorObjective::NonSaturating).unwrap().is_finite());
    }

    #[test]
    fn probabilities_outside_unit_interval_are_rejected() {
        assert!(adversarial_g_loss(&prob(&[1.5]), GeneratorObjective::Saturating).is_err());
        assert!(matches!(adversarial_d_loss(&prob(&[f64::NAN]), &prob(&[0.5])), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let r = prob(&[0.3, 0.8]);
        let f = prob(&[0.6, 0.1]);
        let (gr, gf) = adversarial_d_loss_grad(&r, &f).unwrap();
        for i in 0..2 {
            let fd_r = finite_difference(&r, i, 1e-6, |t| adversarial_d_loss(t, &f).unwrap());
            let fd_f = finite_difference(&f, i, 1e-6, |t| adversarial_d_loss(&r, t).unwrap());
            assert!((gr.data()[i] - fd_r).abs() < 1e-7);
            assert!((gf.data()[i] - fd_f).abs() < 1e-7);
        }
        for obj in [GeneratorObjective::Saturating, GeneratorObjective::NonSaturating] {
            let g = adversarial_g_loss_grad(&f, obj).unwrap();
            for i in 0..2 {
                let fd = finite_difference(&f, i, 1e-6, |t| adversarial_g_loss(t, obj).unwrap());
                assert!((g.data()[i] - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn total_loss_weighting() {
        assert_eq!(total_loss(0.125, -0.75, 1e-4).unwrap(), 0.125 + 1e-4 * -0.75);
        assert_eq!(total_loss(0.3, 7.0, 0.0).unwrap(), 0.3);
        assert_eq!(total_loss(0.3, 0.0, 1e-4).unwrap(), 0.3);
        assert!(total_loss(f64::NAN, 0.0, 1e-4).is_err());
    }
}
