//! Strided matrix product used by the convolution kernels.

/// Describes a strided `rows x cols` view into a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatView {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatView {
    /// Row-major with contiguous rows of length `cols`.
    pub fn row_major(rows: usize, cols: usize) -> Self {
        MatView {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Row-major block whose rows are `ld` apart.
    pub fn row_major_ld(rows: usize, cols: usize, ld: usize) -> Self {
        MatView {
            rows,
            cols,
            row_stride: ld,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = a * b + beta * c`.
pub(crate) fn gemm(a: &[f64], av: MatView, b: &[f64], bv: MatView, beta: f64, c: &mut [f64], cv: MatView) {
    assert_eq!(av.cols, bv.rows, "inner dimensions");
    assert_eq!(av.rows, cv.rows, "output rows");
    assert_eq!(bv.cols, cv.cols, "output cols");
    assert!(a.len() >= av.extent() && b.len() >= bv.extent() && c.len() >= cv.extent());
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked against its slice above, and `c`
    // is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            1.0,
            a.as_ptr(),
            av.row_stride as isize,
            av.col_stride as isize,
            b.as_ptr(),
            bv.row_stride as isize,
            bv.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            cv.row_stride as isize,
            cv.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product_matches_hand_result() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(
            &a,
            MatView::row_major(2, 3),
            &b,
            MatView::row_major(3, 2),
            0.0,
            &mut c,
            MatView::row_major(2, 2),
        );
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // transposed a: (3x2)^T
        let mut d = [1.0; 4];
        gemm(
            &a,
            MatView::row_major(3, 2).t(),
            &b,
            MatView::row_major(3, 2),
            1.0,
            &mut d,
            MatView::row_major(2, 2),
        );
        // a viewed as 3x2 = [[1,2],[3,4],[5,6]], transposed = [[1,3,5],[2,4,6]]
        assert_eq!(d, [1.0 + 89.0, 1.0 + 98.0, 1.0 + 116.0, 1.0 + 128.0]);
    }
}
