//! Strided single-precision GEMM wrappers.

/// Row-major matrix view: `rows × cols` with explicit strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    pub fn strided(data: &'a [f32], rows: usize, cols: usize, row_stride: usize) -> Self {
        Self { data, rows, cols, row_stride: row_stride as isize, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha · a·b + beta · c` where `c` is a row-major `a.rows × b.cols`
/// block with row stride `ldc`.
pub fn gemm(alpha: f32, a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: &mut [f32], ldc: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= (m - 1) * ldc + n, "gemm output too small");
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: extents checked above and by the slice lengths of a and b.
    check_extent(&a);
    check_extent(&b);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

fn check_extent(m: &MatRef<'_>) {
    let last = (m.rows as isize - 1) * m.row_stride + (m.cols as isize - 1) * m.col_stride;
    assert!(m.row_stride >= 0 && m.col_stride >= 0);
    assert!((last as usize) < m.data.len(), "matrix view exceeds buffer");
}

/// Plain `[m×k]·[k×n]` product into a fresh buffer.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    gemm(1.0, MatRef::new(a, m, k), MatRef::new(b, k, n), 0.0, &mut out, n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(1.0, MatRef::new(&a, 2, 2).t(), MatRef::new(&b, 2, 2), 0.0, &mut c, 2);
        // aᵀ·b = [[1,3],[2,4]]·b
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
