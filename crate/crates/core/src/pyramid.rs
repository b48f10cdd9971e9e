//! Gaussian image pyramids.

use alloc::vec::Vec;

use crate::blur::{reflect_index, BlurPair};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Burt-Adelson binomial taps.
const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Checks that `h x w` can be halved `scales - 1` times exactly.
pub fn check_pyramid_size(h: usize, w: usize, scales: usize) -> Result<()> {
    if scales == 0 {
        return Err(Error::InvalidConfig("a pyramid needs at least one level".into()));
    }
    let div = 1usize << (scales - 1);
    if !h.is_multiple_of(div) || !w.is_multiple_of(div) || h == 0 || w == 0 {
        return Err(Error::InvalidShape {
            op: "gaussian_pyramid",
            reason: alloc::format!("{h}x{w} is not divisible by 2^{} = {div}", scales - 1),
        });
    }
    Ok(())
}

/// Separable 5-tap binomial filter with reflected borders, then keeps every
/// second row and column.
pub fn downsample(image: &Tensor) -> Tensor {
    let s = image.shape();
    let mut tmp = Tensor::zeros(Shape::new(s.n, s.c, s.h, s.w.div_ceil(2)));
    let tw = tmp.shape().w;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = image.plane(n, c);
            let dst = tmp.plane_mut(n, c);
            for y in 0..s.h {
                for ox in 0..tw {
                    let x = 2 * ox;
                    let mut acc = 0.0;
                    for (k, &tap) in BINOMIAL5.iter().enumerate() {
                        acc += tap * src[y * s.w + reflect_index(x as isize + k as isize - 2, s.w)];
                    }
                    dst[y * tw + ox] = acc;
                }
            }
        }
    }
    let th = s.h.div_ceil(2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, th, tw));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = tmp.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..th {
                let y = 2 * oy;
                for x in 0..tw {
                    let mut acc = 0.0;
                    for (k, &tap) in BINOMIAL5.iter().enumerate() {
                        acc += tap * src[reflect_index(y as isize + k as isize - 2, s.h) * tw + x];
                    }
                    dst[oy * tw + x] = acc;
                }
            }
        }
    }
    out
}

/// Level 0 is the input (finest); each further level halves both sides.
pub fn gaussian_pyramid(image: &Tensor, scales: usize) -> Result<Vec<Tensor>> {
    let s = image.shape();
    check_pyramid_size(s.h, s.w, scales)?;
    let mut levels = Vec::with_capacity(scales);
    levels.push(image.clone());
    for _ in 1..scales {
        let next = downsample(levels.last().unwrap());
        levels.push(next);
    }
    Ok(levels)
}

/// Smallest multiple of `2^(scales - 1)` that is at least `size`.
pub fn padded_size(size: usize, scales: usize) -> usize {
    let div = 1usize << scales.saturating_sub(1);
    size.div_ceil(div) * div
}

/// Extends the bottom and right borders by reflection to `height x width`.
pub fn reflect_pad(image: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let s = image.shape();
    if height < s.h || width < s.w {
        return Err(Error::InvalidShape {
            op: "reflect_pad",
            reason: alloc::format!("cannot pad {s} down to {height}x{width}"),
        });
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, height, width), |n, c, y, x| {
        image.at(n, c, reflect_index(y as isize, s.h), reflect_index(x as isize, s.w))
    }))
}

/// Blurry and sharp pyramids of equal depth, finest level first.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidPair {
    pub blurry: Vec<Tensor>,
    pub sharp: Vec<Tensor>,
}

impl PyramidPair {
    pub fn from_images(blurry: &Tensor, sharp: &Tensor, scales: usize) -> Result<Self> {
        sharp.expect_shape("PyramidPair", blurry.shape())?;
        Ok(PyramidPair {
            blurry: gaussian_pyramid(blurry, scales)?,
            sharp: gaussian_pyramid(sharp, scales)?,
        })
    }

    pub fn from_pair(pair: &BlurPair, scales: usize) -> Result<Self> {
        Self::from_images(&pair.blurry, &pair.sharp, scales)
    }

    pub fn scales(&self) -> usize {
        self.blurry.len()
    }

    /// Stacks pyramids level by level along the batch axis.
    pub fn batch(items: &[PyramidPair]) -> Result<PyramidPair> {
        let first = items.first().ok_or(Error::Empty("PyramidPair::batch"))?;
        let k = first.scales();
        if items.iter().any(|p| p.scales() != k) {
            return Err(Error::InvalidConfig("pyramids in a batch differ in depth".into()));
        }
        let stack = |pick: &dyn Fn(&PyramidPair) -> &Tensor| -> Result<Tensor> {
            let v: Vec<Tensor> = items.iter().map(|p| pick(p).clone()).collect();
            Tensor::stack(&v)
        };
        let mut blurry = Vec::with_capacity(k);
        let mut sharp = Vec::with_capacity(k);
        for level in 0..k {
            blurry.push(stack(&|p| &p.blurry[level])?);
            sharp.push(stack(&|p| &p.sharp[level])?);
        }
        Ok(PyramidPair { blurry, sharp })
    }
}
