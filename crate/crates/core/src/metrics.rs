//! PSNR, SSIM and MS-SSIM, plus dataset-level reports.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, log10, powf, quantize_u8};
use crate::tensor::{Shape, Tensor};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Smallest side for which every MS-SSIM scale still fits the window.
pub const MS_SSIM_MIN_SIDE: usize = SSIM_WINDOW << (MS_SSIM_WEIGHTS.len() - 1);

/// `10 log10(1 / MSE)` over all elements, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    b.expect_shape("psnr", a.shape())?;
    if a.data().is_empty() {
        return Err(Error::Empty("psnr"));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * log10(1.0 / mse)).min(PSNR_CAP_DB))
}

/// PSNR after rounding both images to 8-bit levels.
pub fn psnr_quantized(a: &Tensor, b: &Tensor) -> Result<f64> {
    let q = |t: &Tensor| t.map(|v| quantize_u8(v) as f64 / 255.0);
    psnr(&q(a), &q(b))
}

/// ITU-R BT.601 luma of each image, shape `(N, 1, H, W)`. Single-channel
/// input is returned unchanged.
pub fn luma(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    match s.c {
        1 => Ok(t.clone()),
        3 => Ok(Tensor::from_fn(Shape::new(s.n, 1, s.h, s.w), |n, _, y, x| {
            0.299 * t.at(n, 0, y, x) + 0.587 * t.at(n, 1, y, x) + 0.114 * t.at(n, 2, y, x)
        })),
        c => Err(Error::InvalidShape {
            op: "luma",
            reason: alloc::format!("expected 1 or 3 channels, got {c}"),
        }),
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter without padding ("valid" output).
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = win.iter().enumerate().map(|(k, c)| c * img[y * w + x + k]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win.iter().enumerate().map(|(k, c)| c * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term of one luma plane.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let win = gaussian_window();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<f64>>();
    let e_aa = filter_valid(&prod(a, a), h, w, &win);
    let e_bb = filter_valid(&prod(b, b), h, w, &win);
    let e_ab = filter_valid(&prod(a, b), h, w, &win);
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        let cs = (2.0 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let n = mu_a.len() as f64;
    (ssim_sum / n, cs_sum / n)
}

fn luma_pair(a: &Tensor, b: &Tensor, op: &'static str, min_side: usize) -> Result<(Tensor, Tensor)> {
    b.expect_shape(op, a.shape())?;
    let s = a.shape();
    if s.h < min_side || s.w < min_side {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("{}x{} is smaller than the required {min_side}x{min_side}", s.h, s.w),
        });
    }
    if s.n == 0 {
        return Err(Error::Empty(op));
    }
    Ok((luma(a)?, luma(b)?))
}

/// Mean SSIM on luma, averaged over the batch.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(ssim_components(a, b)?.0)
}

/// `(ssim, contrast-structure)` means, averaged over the batch.
pub fn ssim_components(a: &Tensor, b: &Tensor) -> Result<(f64, f64)> {
    let (la, lb) = luma_pair(a, b, "ssim", SSIM_WINDOW)?;
    let s = la.shape();
    let mut acc = (0.0, 0.0);
    for n in 0..s.n {
        let (v, cs) = ssim_plane(la.plane(n, 0), lb.plane(n, 0), s.h, s.w);
        acc.0 += v;
        acc.1 += cs;
    }
    Ok((acc.0 / s.n as f64, acc.1 / s.n as f64))
}

fn halve(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Five-scale SSIM with 2x2 average downsampling between scales.
/// Negative contrast-structure terms are clamped to zero before the
/// weighted product.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (la, lb) = luma_pair(a, b, "ms_ssim", MS_SSIM_MIN_SIDE)?;
    let s = la.shape();
    let mut total = 0.0;
    for n in 0..s.n {
        let (mut pa, mut pb) = (la.plane(n, 0).to_vec(), lb.plane(n, 0).to_vec());
        let (mut h, mut w) = (s.h, s.w);
        let mut value = 1.0;
        let last = MS_SSIM_WEIGHTS.len() - 1;
        for (j, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (full, cs) = ssim_plane(&pa, &pb, h, w);
            let term = if j == last { full } else { cs };
            value *= powf(term.max(0.0), weight);
            if j < last {
                let (na, nh, nw) = halve(&pa, h, w);
                pb = halve(&pb, h, w).0;
                pa = na;
                h = nh;
                w = nw;
            }
        }
        total += value;
    }
    Ok(total / s.n as f64)
}

/// Metrics of one evaluated image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
}

impl ImageMetrics {
    pub fn compute(name: impl Into<String>, output: &Tensor, sharp: &Tensor, quantized: bool) -> Result<Self> {
        let p = if quantized {
            psnr_quantized(output, sharp)?
        } else {
            psnr(output, sharp)?
        };
        let s = output.shape();
        let ms = if s.h >= MS_SSIM_MIN_SIDE && s.w >= MS_SSIM_MIN_SIDE {
            Some(ms_ssim(output, sharp)?)
        } else {
            None
        };
        Ok(ImageMetrics {
            name: name.into(),
            psnr: p,
            ssim: ssim(output, sharp)?,
            ms_ssim: ms,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalFailure {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub checkpoint: String,
    pub scales: usize,
    pub images: Vec<ImageMetrics>,
    pub failures: Vec<EvalFailure>,
}

impl MetricReport {
    pub fn new(checkpoint: impl Into<String>, scales: usize) -> Self {
        MetricReport {
            checkpoint: checkpoint.into(),
            scales,
            ..Default::default()
        }
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.images.iter().map(|m| m.psnr))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.images.iter().map(|m| m.ssim))
    }

    pub fn mean_ms_ssim(&self) -> Option<f64> {
        mean(self.images.iter().filter_map(|m| m.ms_ssim))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.random::<f64>())
    }

    fn checker(size: usize) -> Tensor {
        Tensor::from_fn(Shape::new(1, 3, size, size), |_, _, y, x| if (y / 4 + x / 4) % 2 == 0 { 0.2 } else { 0.9 })
    }

    #[test]
    fn psnr_hand_values() {
        let a = Tensor::full(Shape::new(1, 3, 8, 8), 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let z = Tensor::zeros(a.shape());
        let o = Tensor::full(a.shape(), 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&z, &Tensor::zeros(Shape::new(1, 3, 8, 7))).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_image(16, 16, &mut rng);
        let pattern = random_image(16, 16, &mut rng).map(|v| v - 0.5);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let y = x.add(&pattern.scale(amp)).unwrap();
            let p = psnr(&x, &y).unwrap();
            assert_eq!(p, psnr(&y, &x).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn quantized_psnr_sees_through_sub_level_noise() {
        let a = Tensor::full(Shape::new(1, 1, 4, 4), 100.0 / 255.0);
        let b = a.map(|v| v + 0.1 / 255.0);
        assert_eq!(psnr_quantized(&a, &b).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &b).unwrap() < PSNR_CAP_DB);
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random_image(24, 20, &mut rng);
            assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        }
    }

    #[test]
    fn inverted_checker_has_negative_ssim() {
        let x = checker(64);
        let y = x.map(|v| 1.0 - v);
        assert!(ssim(&x, &y).unwrap() < 0.0);
    }

    #[test]
    fn contrast_structure_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(32, 32, &mut rng).scale(0.5);
        let y = x.add(&random_image(32, 32, &mut rng).scale(0.1)).unwrap();
        let (_, cs) = ssim_components(&x, &y).unwrap();
        let (_, cs_shift) = ssim_components(&x.map(|v| v + 0.3), &y.map(|v| v + 0.3)).unwrap();
        assert!((cs - cs_shift).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = Tensor::zeros(Shape::new(1, 3, 10, 32));
        assert!(ssim(&a, &a).is_err());
        let b = Tensor::zeros(Shape::new(1, 3, 32, 32));
        assert!(ssim(&b, &Tensor::zeros(Shape::new(1, 1, 32, 32))).is_err());
        assert!(ms_ssim(&b, &b).is_err());
    }

    #[test]
    fn ms_ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(176, 180, &mut rng);
        assert_eq!(ms_ssim(&x, &x).unwrap(), 1.0);
        let y = x.map(|v| (v * 0.9 + 0.05).clamp(0.0, 1.0));
        let v = ms_ssim(&x, &y).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn luma_weights() {
        let t = Tensor::from_vec(Shape::new(1, 3, 1, 1), alloc::vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(luma(&t).unwrap().data()[0], 0.299);
        let g = Tensor::full(Shape::new(1, 3, 2, 2), 0.4);
        assert!(luma(&g).unwrap().data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn report_means() {
        let mut r = MetricReport::new("x", 3);
        assert_eq!(r.mean_psnr(), None);
        for (p, s) in [(20.0, 0.5), (30.0, 0.7), (25.0, 0.9)] {
            r.images.push(ImageMetrics {
                name: String::new(),
                psnr: p,
                ssim: s,
                ms_ssim: None,
            });
        }
        assert_eq!(r.mean_psnr(), Some(25.0));
        assert!((r.mean_ssim().unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(r.mean_ms_ssim(), None);
    }
}
