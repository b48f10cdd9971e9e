//! Dense rank-4 tensors in NCHW layout.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                reason: alloc::format!(
                    "{} values cannot fill shape {shape} ({} elements)",
                    data.len(),
                    shape.numel()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && y < self.shape.h && x < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One `(h, w)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.shape.c * self.shape.plane();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                expected: self.shape,
                actual: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(op, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape("dot", other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape("max_abs_diff", other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| crate::math::abs(a - b))
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(crate::math::clamp01)
    }

    pub(crate) fn expect_shape(&self, op: &'static str, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                op,
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }

    /// Selects a contiguous channel range `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape.c {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                reason: alloc::format!(
                    "channels {start}..{} out of bounds for {}",
                    start + count,
                    self.shape
                ),
            });
        }
        let s = self.shape;
        let p = s.plane();
        let mut out = Tensor::zeros(Shape::new(s.n, count, s.h, s.w));
        for n in 0..s.n {
            let src = &self.item(n)[start * p..(start + count) * p];
            out.item_mut(n).copy_from_slice(src);
        }
        Ok(out)
    }

    /// Batch items `[start, start + count)`.
    pub fn slice_batch(&self, start: usize, count: usize) -> Result<Tensor> {
        if start + count > self.shape.n {
            return Err(Error::InvalidShape {
                op: "slice_batch",
                reason: alloc::format!("items {start}..{} out of bounds for {}", start + count, self.shape),
            });
        }
        let len = self.shape.c * self.shape.plane();
        Ok(Tensor {
            shape: Shape::new(count, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start * len..(start + count) * len].to_vec(),
        })
    }

    /// The `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor> {
        let s = self.shape;
        if top + height > s.h || left + width > s.w {
            return Err(Error::InvalidShape {
                op: "crop",
                reason: alloc::format!("{height}x{width} window at ({top}, {left}) exceeds {s}"),
            });
        }
        Ok(Tensor::from_fn(Shape::new(s.n, s.c, height, width), |n, c, y, x| {
            self.at(n, c, top + y, left + x)
        }))
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or(Error::Empty("stack"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != s.c || t.shape.h != s.h || t.shape.w != s.w {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    expected: Shape::new(t.shape.n, s.c, s.h, s.w),
                    actual: t.shape,
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, s.c, s.h, s.w),
            data,
        })
    }

    /// Little-endian dump: four `u64` dims followed by the `f64` payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.data.len());
        for d in self.shape.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < 32 {
            return Err(Error::Malformed("tensor dump shorter than its header".into()));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let raw = u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
            *d = usize::try_from(raw).map_err(|_| Error::Malformed("dimension overflows usize".into()))?;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let payload = &bytes[32..];
        let expected = shape
            .numel()
            .checked_mul(8)
            .ok_or_else(|| Error::Malformed("tensor size overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::Malformed(alloc::format!(
                "payload of {} bytes does not match shape {shape}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { shape, data })
    }
}

/// Concatenates along channels; `a`'s channels come first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            expected: Shape::new(sa.n, sb.c, sa.h, sa.w),
            actual: sb,
        });
    }
    let mut out = Tensor::zeros(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w));
    let la = a.item(0).len();
    for n in 0..sa.n {
        let dst = out.item_mut(n);
        dst[..la].copy_from_slice(a.item(n));
        dst[la..].copy_from_slice(b.item(n));
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] given the channel count of the first part.
pub fn split_channels(t: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let c = t.shape().c;
    if first > c {
        return Err(Error::InvalidShape {
            op: "split_channels",
            reason: alloc::format!("cannot take {first} channels from {}", t.shape()),
        });
    }
    Ok((t.slice_channels(0, first)?, t.slice_channels(first, c - first)?))
}
