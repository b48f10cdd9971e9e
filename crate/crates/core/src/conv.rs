//! 2-D convolution (cross-correlation) and its transpose, with exact gradients.
//!
//! Both directions lower to `im2col`/`col2im` plus a matrix product. Output
//! rows are processed in bounded chunks so the column buffer stays small
//! for large images; the reduction order is fixed, so results are
//! deterministic for fixed inputs.

use alloc::vec;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatView};
use crate::tensor::{Shape, Tensor};

/// Column buffers are capped at roughly this many `f64`s.
const COL_BUDGET: usize = 1 << 21;

/// Weights and geometry of one convolution layer.
///
/// For [`conv2d`] the weight is `(out_channels, in_channels, kh, kw)`. For
/// [`upconv2d`] it is `(in_channels, out_channels, kh, kw)`, i.e. the same
/// tensor a forward convolution from the upconv output back to its input
/// would use, so the two are adjoint for equal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    /// Shape `(channels, 1, 1, 1)`.
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidConfig("stride must be positive".into()));
        }
        let ws = weight.shape();
        if padding >= ws.h.max(ws.w) && padding > 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "padding {padding} is not smaller than the {}x{} kernel",
                ws.h,
                ws.w
            )));
        }
        let bs = bias.shape();
        if bs.c != 1 || bs.h != 1 || bs.w != 1 || (bs.n != ws.n && bs.n != ws.c) {
            return Err(Error::InvalidShape {
                op: "ConvParams::new",
                reason: alloc::format!("bias shape {bs} does not fit weight {ws}"),
            });
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// Zero weights and bias for a forward convolution.
    pub fn zeros(out_c: usize, in_c: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(Shape::new(out_c, in_c, k, k)),
            bias: Tensor::zeros(Shape::new(out_c, 1, 1, 1)),
            stride,
            padding,
        }
    }

    /// Zero weights and bias for a transposed convolution.
    pub fn zeros_transposed(in_c: usize, out_c: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvParams {
            weight: Tensor::zeros(Shape::new(in_c, out_c, k, k)),
            bias: Tensor::zeros(Shape::new(out_c, 1, 1, 1)),
            stride,
            padding,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Spatial size after a forward convolution.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Spatial size after a transposed convolution.
pub fn upconv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if size == 0 {
        return None;
    }
    ((size - 1) * stride + kernel).checked_sub(2 * padding).filter(|&s| s > 0)
}

/// Geometry of the forward-convolution relation between a "big" image of
/// `c x h x w` and its `ho x wo` output grid.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn rows_per_chunk(&self) -> usize {
        (COL_BUDGET / (self.ckk() * self.wo).max(1)).clamp(1, self.ho.max(1))
    }

    /// Fills `col` (ckk x (rows * wo)) for output rows `r0..r0 + rows`.
    fn im2col(&self, img: &[f64], r0: usize, rows: usize, col: &mut [f64]) {
        let ncols = rows * self.wo;
        let (s, p) = (self.stride as isize, self.pad as isize);
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    for oy in 0..rows {
                        let iy = ((r0 + oy) as isize) * s + i as isize - p;
                        let out = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = ox as isize * s + j as isize - p;
                            *o = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` back into `img`; adjoint of [`Geom::im2col`].
    fn col2im(&self, col: &[f64], r0: usize, rows: usize, img: &mut [f64]) {
        let ncols = rows * self.wo;
        let (s, p) = (self.stride as isize, self.pad as isize);
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &col[row * ncols..(row + 1) * ncols];
                    for oy in 0..rows {
                        let iy = ((r0 + oy) as isize) * s + i as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in src[oy * self.wo..(oy + 1) * self.wo].iter().enumerate() {
                            let ix = ox as isize * s + j as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_chunk();
        let ho = self.ho;
        (0..ho).step_by(step).map(move |r0| (r0, step.min(ho - r0)))
    }
}

fn conv_geom(input: Shape, p: &ConvParams, op: &'static str) -> Result<Geom> {
    let ws = p.weight.shape();
    if ws.c != input.c {
        return Err(Error::ShapeMismatch {
            op,
            expected: Shape::new(input.n, ws.c, input.h, input.w),
            actual: input,
        });
    }
    if p.bias.shape().n != ws.n {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("bias {} does not match {} output channels", p.bias.shape(), ws.n),
        });
    }
    let ho = conv_output_size(input.h, ws.h, p.stride, p.padding);
    let wo = conv_output_size(input.w, ws.w, p.stride, p.padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Geom {
            c: input.c,
            h: input.h,
            w: input.w,
            kh: ws.h,
            kw: ws.w,
            stride: p.stride,
            pad: p.padding,
            ho,
            wo,
        }),
        _ => Err(Error::InvalidShape {
            op,
            reason: alloc::format!("{}x{} kernel does not fit input {input} with padding {}", ws.h, ws.w, p.padding),
        }),
    }
}

fn add_bias(out: &mut Tensor, bias: &Tensor) {
    let s = out.shape();
    for n in 0..s.n {
        for (c, &b) in bias.data().iter().enumerate() {
            if b != 0.0 {
                out.plane_mut(n, c).iter_mut().for_each(|v| *v += b);
            }
        }
    }
}

fn bias_grad(grad_out: &Tensor) -> Tensor {
    let s = grad_out.shape();
    let mut g = Tensor::zeros(Shape::new(s.c, 1, 1, 1));
    for n in 0..s.n {
        for c in 0..s.c {
            g.data_mut()[c] += grad_out.plane(n, c).iter().sum::<f64>();
        }
    }
    g
}

/// Direct cross-correlation plus bias.
pub fn conv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    let g = conv_geom(s, p, "conv2d")?;
    let o = p.weight.shape().n;
    let mut out = Tensor::zeros(Shape::new(s.n, o, g.ho, g.wo));
    let ld = g.ho * g.wo;
    let mut col = vec![0.0; g.ckk() * g.rows_per_chunk() * g.wo];
    for n in 0..s.n {
        let img = input.item(n);
        let dst = out.item_mut(n);
        for (r0, rows) in g.chunks() {
            let ncols = rows * g.wo;
            g.im2col(img, r0, rows, &mut col);
            gemm(
                p.weight.data(),
                MatView::row_major(o, g.ckk()),
                &col,
                MatView::row_major(g.ckk(), ncols),
                0.0,
                &mut dst[r0 * g.wo..],
                MatView::row_major_ld(o, ncols, ld),
            );
        }
    }
    add_bias(&mut out, &p.bias);
    Ok(out)
}

/// Gradients of `<grad_out, conv2d(input, p)>`.
pub fn conv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let s = input.shape();
    let g = conv_geom(s, p, "conv2d_backward")?;
    let o = p.weight.shape().n;
    grad_out.expect_shape("conv2d_backward", Shape::new(s.n, o, g.ho, g.wo))?;
    let ld = g.ho * g.wo;
    let mut grad_input = Tensor::zeros(s);
    let mut grad_weight = Tensor::zeros(p.weight.shape());
    let cap = g.rows_per_chunk() * g.wo;
    let mut col = vec![0.0; g.ckk() * cap];
    let mut gcol = vec![0.0; g.ckk() * cap];
    for n in 0..s.n {
        let img = input.item(n);
        let gout = grad_out.item(n);
        for (r0, rows) in g.chunks() {
            let ncols = rows * g.wo;
            g.im2col(img, r0, rows, &mut col);
            let gview = MatView::row_major_ld(o, ncols, ld);
            gemm(
                &gout[r0 * g.wo..],
                gview,
                &col,
                MatView::row_major(g.ckk(), ncols).t(),
                1.0,
                grad_weight.data_mut(),
                MatView::row_major(o, g.ckk()),
            );
            gemm(
                p.weight.data(),
                MatView::row_major(o, g.ckk()).t(),
                &gout[r0 * g.wo..],
                gview,
                0.0,
                &mut gcol,
                MatView::row_major(g.ckk(), ncols),
            );
            g.col2im(&gcol, r0, rows, grad_input.item_mut(n));
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: bias_grad(grad_out),
    })
}

fn upconv_geom(input: Shape, p: &ConvParams, op: &'static str) -> Result<Geom> {
    let ws = p.weight.shape();
    if ws.n != input.c {
        return Err(Error::ShapeMismatch {
            op,
            expected: Shape::new(input.n, ws.n, input.h, input.w),
            actual: input,
        });
    }
    if p.bias.shape().n != ws.c {
        return Err(Error::InvalidShape {
            op,
            reason: alloc::format!("bias {} does not match {} output channels", p.bias.shape(), ws.c),
        });
    }
    let h = upconv_output_size(input.h, ws.h, p.stride, p.padding);
    let w = upconv_output_size(input.w, ws.w, p.stride, p.padding);
    match (h, w) {
        (Some(h), Some(w)) => Ok(Geom {
            c: ws.c,
            h,
            w,
            kh: ws.h,
            kw: ws.w,
            stride: p.stride,
            pad: p.padding,
            ho: input.h,
            wo: input.w,
        }),
        _ => Err(Error::InvalidShape {
            op,
            reason: alloc::format!("transposed {}x{} kernel produces an empty output for {input}", ws.h, ws.w),
        }),
    }
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same weight,
/// plus bias.
pub fn upconv2d(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    let g = upconv_geom(s, p, "upconv2d")?;
    let ci = s.c;
    let mut out = Tensor::zeros(Shape::new(s.n, g.c, g.h, g.w));
    let ld = g.ho * g.wo;
    let mut col = vec![0.0; g.ckk() * g.rows_per_chunk() * g.wo];
    for n in 0..s.n {
        let src = input.item(n);
        for (r0, rows) in g.chunks() {
            let ncols = rows * g.wo;
            gemm(
                p.weight.data(),
                MatView::row_major(ci, g.ckk()).t(),
                &src[r0 * g.wo..],
                MatView::row_major_ld(ci, ncols, ld),
                0.0,
                &mut col,
                MatView::row_major(g.ckk(), ncols),
            );
            g.col2im(&col, r0, rows, out.item_mut(n));
        }
    }
    add_bias(&mut out, &p.bias);
    Ok(out)
}

/// Gradients of `<grad_out, upconv2d(input, p)>`.
pub fn upconv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let s = input.shape();
    let g = upconv_geom(s, p, "upconv2d_backward")?;
    let ci = s.c;
    grad_out.expect_shape("upconv2d_backward", Shape::new(s.n, g.c, g.h, g.w))?;
    let ld = g.ho * g.wo;
    let mut grad_input = Tensor::zeros(s);
    let mut grad_weight = Tensor::zeros(p.weight.shape());
    let mut col = vec![0.0; g.ckk() * g.rows_per_chunk() * g.wo];
    for n in 0..s.n {
        let src = input.item(n);
        let gout = grad_out.item(n);
        for (r0, rows) in g.chunks() {
            let ncols = rows * g.wo;
            g.im2col(gout, r0, rows, &mut col);
            let cview = MatView::row_major(g.ckk(), ncols);
            gemm(
                p.weight.data(),
                MatView::row_major(ci, g.ckk()),
                &col,
                cview,
                0.0,
                &mut grad_input.item_mut(n)[r0 * g.wo..],
                MatView::row_major_ld(ci, ncols, ld),
            );
            gemm(
                &src[r0 * g.wo..],
                MatView::row_major_ld(ci, ncols, ld),
                &col,
                cview.t(),
                1.0,
                grad_weight.data_mut(),
                MatView::row_major(ci, g.ckk()),
            );
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: bias_grad(grad_out),
    })
}

/// Checks that a transposed convolution scales every spatial size by
/// exactly `stride`, i.e. `kernel - 2 * padding == stride`.
pub fn validate_exact_upsampling(kernel: usize, stride: usize, padding: usize) -> Result<()> {
    if stride < 2 {
        return Err(Error::InvalidConfig(alloc::format!(
            "upconvolution stride must be at least 2, got {stride}"
        )));
    }
    if kernel < 2 * padding || kernel - 2 * padding != stride {
        return Err(Error::InvalidConfig(alloc::format!(
            "upconvolution with kernel {kernel}, stride {stride}, padding {padding} does not scale sizes by exactly {stride}"
        )));
    }
    Ok(())
}

/// Brute-force reference kernels, kept independent of the lowering above.
#[cfg(test)]
pub(crate) mod reference {
    use super::*;

    pub fn conv2d_direct(input: &Tensor, p: &ConvParams) -> Tensor {
        let s = input.shape();
        let ws = p.weight.shape();
        let ho = conv_output_size(s.h, ws.h, p.stride, p.padding).unwrap();
        let wo = conv_output_size(s.w, ws.w, p.stride, p.padding).unwrap();
        Tensor::from_fn(Shape::new(s.n, ws.n, ho, wo), |n, o, oy, ox| {
            let mut acc = p.bias.data()[o];
            for c in 0..s.c {
                for i in 0..ws.h {
                    for j in 0..ws.w {
                        let iy = (oy * p.stride + i) as isize - p.padding as isize;
                        let ix = (ox * p.stride + j) as isize - p.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                            acc += p.weight.at(o, c, i, j) * input.at(n, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    pub fn upconv2d_scatter(input: &Tensor, p: &ConvParams) -> Tensor {
        let s = input.shape();
        let ws = p.weight.shape();
        let h = upconv_output_size(s.h, ws.h, p.stride, p.padding).unwrap();
        let w = upconv_output_size(s.w, ws.w, p.stride, p.padding).unwrap();
        let mut out = Tensor::zeros(Shape::new(s.n, ws.c, h, w));
        for n in 0..s.n {
            for o in 0..ws.c {
                for y in 0..h {
                    for x in 0..w {
                        out.set(n, o, y, x, p.bias.data()[o]);
                    }
                }
            }
            for ci in 0..s.c {
                for iy in 0..s.h {
                    for ix in 0..s.w {
                        let v = input.at(n, ci, iy, ix);
                        for o in 0..ws.c {
                            for i in 0..ws.h {
                                for j in 0..ws.w {
                                    let y = (iy * p.stride + i) as isize - p.padding as isize;
                                    let x = (ix * p.stride + j) as isize - p.padding as isize;
                                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                        let idx = out.index(n, o, y as usize, x as usize);
                                        out.data_mut()[idx] += v * p.weight.at(ci, o, i, j);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
