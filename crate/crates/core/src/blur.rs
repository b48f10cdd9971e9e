//! Kernel-free blur synthesis from sharp frame sequences.
//!
//! A blurry exposure is modelled as the time average of the sensor signal,
//! pushed through the camera response. Observed frames are first mapped
//! back to the (linear) signal domain with the inverse response, averaged
//! there, and mapped forward again:
//!
//! `B = g((1/M) * sum_i g^-1(S_hat[i]))`, with `g(x) = x^(1/gamma)`.
//!
//! Averaging observed pixel values directly would be wrong whenever the
//! response is non-linear, so nothing in this module does that.
//!
//! The uniform-kernel model `B = K S + n` is provided only to produce the
//! classic "camera shake" comparison images.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Shape, Tensor};

/// Gamma-curve camera response `g(x) = x^(1/gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammaCrf {
    gamma: f64,
}

impl Default for GammaCrf {
    fn default() -> Self {
        GammaCrf { gamma: 2.2 }
    }
}

impl GammaCrf {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("gamma must be positive, got {gamma}")));
        }
        Ok(GammaCrf { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check(op: &'static str, v: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange { op, value: v });
        }
        Ok(())
    }

    /// Signal to observed value.
    pub fn apply_scalar(&self, v: f64) -> f64 {
        if self.gamma == 1.0 {
            v
        } else {
            math::powf(v, 1.0 / self.gamma)
        }
    }

    /// Observed value to signal.
    pub fn invert_scalar(&self, v: f64) -> f64 {
        if self.gamma == 1.0 {
            v
        } else {
            math::powf(v, self.gamma)
        }
    }
}

pub fn crf_apply(signal: &Tensor, crf: &GammaCrf) -> Result<Tensor> {
    for &v in signal.data() {
        GammaCrf::check("crf_apply", v)?;
    }
    Ok(signal.map(|v| crf.apply_scalar(v)))
}

pub fn crf_invert(observed: &Tensor, crf: &GammaCrf) -> Result<Tensor> {
    for &v in observed.data() {
        GammaCrf::check("crf_invert", v)?;
    }
    Ok(observed.map(|v| crf.invert_scalar(v)))
}

/// Ordered sharp frames captured at `fps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Tensor>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor>, fps: f64) -> Result<Self> {
        let first = frames.first().ok_or(Error::Empty("FrameSequence"))?;
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("fps must be positive, got {fps}")));
        }
        let shape = first.shape();
        if shape.n != 1 {
            return Err(Error::InvalidShape {
                op: "FrameSequence",
                reason: alloc::format!("frames must have batch size 1, got {shape}"),
            });
        }
        for f in &frames {
            f.expect_shape("FrameSequence", shape)?;
        }
        Ok(FrameSequence { frames, fps })
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame_shape(&self) -> Shape {
        self.frames[0].shape()
    }

    /// Simulated exposure time in seconds for a window of `frames` frames.
    pub fn exposure(&self, frames: usize) -> f64 {
        frames as f64 / self.fps
    }
}

fn check_window(window: &[Tensor], op: &'static str) -> Result<Shape> {
    let first = window.first().ok_or(Error::Empty(op))?;
    let shape = first.shape();
    for f in window {
        f.expect_shape(op, shape)?;
    }
    Ok(shape)
}

/// Accumulates a window of observed frames into one blurry observation.
///
/// Pixels whose value is identical in every frame are copied through
/// unchanged, so static regions stay bit-identical to the sharp frames.
pub fn synthesize_blur(window: &[Tensor], crf: &GammaCrf) -> Result<Tensor> {
    let shape = check_window(window, "synthesize_blur")?;
    for f in window {
        for &v in f.data() {
            GammaCrf::check("synthesize_blur", v)?;
        }
    }
    let m = window.len() as f64;
    let mut out = Tensor::zeros(shape);
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let first = window[0].data()[i];
        if window.iter().all(|f| f.data()[i] == first) {
            *o = first;
            continue;
        }
        let linear: f64 = window.iter().map(|f| crf.invert_scalar(f.data()[i])).sum::<f64>() / m;
        *o = math::clamp01(crf.apply_scalar(linear));
    }
    Ok(out)
}

/// Index of the sharp reference frame in a window of `len` frames. For even
/// lengths the later of the two central frames is used.
pub fn mid_index(len: usize) -> usize {
    len / 2
}

pub fn select_sharp(window: &[Tensor]) -> Result<&Tensor> {
    if window.is_empty() {
        return Err(Error::Empty("select_sharp"));
    }
    Ok(&window[mid_index(window.len())])
}

/// Normalized, non-negative, odd-sized 2-D kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformKernel {
    taps: Vec<f64>,
    height: usize,
    width: usize,
}

impl UniformKernel {
    pub fn new(taps: Vec<f64>, height: usize, width: usize) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) || taps.len() != height * width {
            return Err(Error::InvalidConfig(alloc::format!(
                "kernel must be odd-sized with {} taps, got {}x{} with {}",
                height * width,
                height,
                width,
                taps.len()
            )));
        }
        if taps.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::InvalidConfig("kernel taps must be finite and non-negative".into()));
        }
        let sum: f64 = taps.iter().sum();
        if math::abs(sum - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig(alloc::format!("kernel taps sum to {sum}, not 1")));
        }
        Ok(UniformKernel { taps, height, width })
    }

    /// `size x size` box filter.
    pub fn box_filter(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(alloc::vec![1.0 / n as f64; n], size, size)
    }

    /// Horizontal line of `length` taps, a linear motion blur.
    pub fn horizontal_line(length: usize) -> Result<Self> {
        Self::new(alloc::vec![1.0 / length as f64; length], 1, length)
    }

    pub fn delta() -> Self {
        UniformKernel {
            taps: alloc::vec![1.0],
            height: 1,
            width: 1,
        }
    }

    pub fn tap(&self, y: usize, x: usize) -> f64 {
        self.taps[y * self.width + x]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge
/// sample (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// `B = K S + n` with a spatially uniform kernel: per-channel convolution
/// with reflected borders, additive Gaussian noise, clipped to `[0, 1]`.
pub fn uniform_kernel_blur<R: Rng + ?Sized>(
    sharp: &Tensor,
    kernel: &UniformKernel,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Tensor> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("noise sigma must be non-negative, got {noise_sigma}")));
    }
    let s = sharp.shape();
    let (kh, kw) = kernel.size();
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = sharp.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for i in 0..kh {
                        let sy = reflect_index(y as isize + i as isize - ry, s.h);
                        for j in 0..kw {
                            let sx = reflect_index(x as isize + j as isize - rx, s.w);
                            acc += kernel.tap(i, j) * src[sy * s.w + sx];
                        }
                    }
                    dst[y * s.w + x] = acc;
                }
            }
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|_| Error::InvalidConfig("noise sigma".into()))?;
        for v in out.data_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(out.clamp01())
}

/// Where a pair came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub start: usize,
    pub len: usize,
    pub gamma: f64,
}

/// A blurry observation and its sharp mid-frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurPair {
    pub blurry: Tensor,
    pub sharp: Tensor,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetWarning {
    /// The sequence cannot hold the largest requested window.
    SequenceTooShort { frames: usize, window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<BlurPair>,
    pub warnings: Vec<DatasetWarning>,
}

/// Window placements: `(start, len)` for every pair `generate_dataset` would
/// emit. Placement `i` starts at `i * stride` and draws its length uniformly
/// from the sizes that still fit, with an RNG keyed by `(seed, i)`.
pub fn plan_windows(frames: usize, window_sizes: &[usize], stride: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if window_sizes.is_empty() {
        return Err(Error::Empty("window sizes"));
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("window stride must be at least 1".into()));
    }
    if let Some(&even) = window_sizes.iter().find(|&&m| m % 2 == 0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "window size {even} is even; use odd sizes so the mid-frame is unambiguous"
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut index = 0u64;
    loop {
        let remaining = frames.saturating_sub(start);
        let fitting: Vec<usize> = window_sizes.iter().copied().filter(|&m| m <= remaining).collect();
        if fitting.is_empty() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let len = fitting[rng.random_range(0..fitting.len())];
        out.push((start, len));
        start += stride;
        index += 1;
    }
    Ok(out)
}

pub fn generate_dataset(
    sequence: &FrameSequence,
    window_sizes: &[usize],
    stride: usize,
    crf: &GammaCrf,
    seed: u64,
) -> Result<Dataset> {
    let plan = plan_windows(sequence.len(), window_sizes, stride, seed)?;
    let mut warnings = Vec::new();
    let largest = window_sizes.iter().copied().max().unwrap_or(0);
    if sequence.len() < largest {
        warnings.push(DatasetWarning::SequenceTooShort {
            frames: sequence.len(),
            window: largest,
        });
    }
    let pairs = plan
        .into_iter()
        .map(|(start, len)| {
            let window = &sequence.frames()[start..start + len];
            Ok(BlurPair {
                blurry: synthesize_blur(window, crf)?,
                sharp: select_sharp(window)?.clone(),
                provenance: Provenance {
                    start,
                    len,
                    gamma: crf.gamma(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { pairs, warnings })
}
