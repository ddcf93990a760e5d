// Dense kernels shared by the forward and backward passes.
//
// Matrices are row-major slices; a transposed operand is expressed through
// strides so no copies are made.

/// A read-only matrix view `rows x cols` with explicit strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = beta * c + a * b` where `c` is a dense row-major `a.rows x b.cols` buffer.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output buffer has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    a.check();
    b.check();

    // Vector-matrix products dominate the recurrent controller; stream the
    // matrix once instead of packing it.
    if m == 1 && b.col_stride == 1 {
        if beta == 0.0 {
            c.fill(0.0);
        } else if beta != 1.0 {
            c.iter_mut().for_each(|v| *v *= beta);
        }
        for p in 0..k {
            let x = a.data[p * a.col_stride];
            if x == 0.0 {
                continue;
            }
            let row = &b.data[p * b.row_stride..p * b.row_stride + n];
            for (ci, bi) in c.iter_mut().zip(row) {
                *ci += x * bi;
            }
        }
        return;
    }
    if m == 1 && b.row_stride == 1 {
        // b is a transposed row-major matrix: each output is a contiguous dot product.
        for (j, cj) in c.iter_mut().enumerate() {
            let col = &b.data[j * b.col_stride..j * b.col_stride + k];
            let mut acc = 0.0;
            if a.col_stride == 1 {
                for (x, y) in a.data[..k].iter().zip(col) {
                    acc += x * y;
                }
            } else {
                for (p, y) in col.iter().enumerate() {
                    acc += a.data[p * a.col_stride] * y;
                }
            }
            *cj = if beta == 0.0 { acc } else { beta * *cj + acc };
        }
        return;
    }

    // SAFETY: every view was bounds-checked above and `c` has exactly m*n
    // elements with row stride n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major strides of `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Decompose a shape around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Visit every output element of a same-rank broadcast, passing the flat
/// offsets into the output and both operands.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let sa = strides(a_shape);
    let sb = strides(b_shape);
    let ea: Vec<usize> = (0..rank).map(|d| if a_shape[d] == 1 { 0 } else { sa[d] }).collect();
    let eb: Vec<usize> = (0..rank).map(|d| if b_shape[d] == 1 { 0 } else { sb[d] }).collect();
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        // increment the multi-index
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += ea[d];
            ib += eb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= ea[d] * idx[d];
            ib -= eb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Source offset for each destination element of a permutation.
pub(crate) fn permute_map(shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let eff: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            src += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_paths_agree_with_naive_product() {
        let (k, n) = (7, 5);
        for m in [1usize, 3] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let want = naive(&a, &b, m, k, n);
            let mut c = vec![0.0; m * n];
            gemm(MatRef::new(&a, m, k), MatRef::new(&b, k, n), &mut c, 0.0);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            // transposed right operand
            let mut bt = vec![0.0; k * n];
            for p in 0..k {
                for j in 0..n {
                    bt[j * k + p] = b[p * n + j];
                }
            }
            let mut c2 = vec![1.0; m * n];
            gemm(MatRef::new(&a, m, k), MatRef::new(&bt, n, k).t(), &mut c2, 1.0);
            for (x, y) in c2.iter().zip(&want) {
                assert!((x - (y + 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permute_map_transposes() {
        let (shape, map) = permute_map(&[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(map, vec![0, 3, 1, 4, 2, 5]);
    }
}
