//! Raw kernels over row-major slices.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is
/// `k x n`. A transposed operand is stored in its untransposed layout
/// (`k x m` for `a`, `n x k` for `b`).
#[allow(clippy::too_many_arguments)]
pub fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }
}

/// Unfolds one `[c, h, w]` sample into a `[c*k*k, oh*ow]` patch matrix
/// (zero padding).
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Vec<f64> {
    let win = Window { kernel, stride, pad };
    let (oh, ow) = (win.out_len(h), win.out_len(w));
    let p = oh * ow;
    let mut col = vec![0.0; c * kernel * kernel * p];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = &mut col[((ch * kernel + ky) * kernel + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f64],
    dx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) {
    let win = Window { kernel, stride, pad };
    let (oh, ow) = (win.out_len(h), win.out_len(w));
    let p = oh * ow;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = &col[((ch * kernel + ky) * kernel + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_transposes() {
        // a = [[1,2,3],[4,5,6]], b = [[1,0],[0,1],[1,1]]
        let a = [1., 2., 3., 4., 5., 6.];
        let b = [1., 0., 0., 1., 1., 1.];
        let mut c = [0.0; 4];
        matmul(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4., 5., 10., 11.]);
        let at = [1., 4., 2., 5., 3., 6.];
        let bt = [1., 0., 1., 0., 1., 1.];
        let mut d = [0.0; 4];
        matmul(2, 3, 2, &at, true, &bt, true, 0.0, &mut d);
        assert_eq!(d, c);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, h, w, k, s, p) = (2, 5, 4, 3, 2, 1);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let col = im2col(&x, c, h, w, k, s, p);
        let y: Vec<f64> = (0..col.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &mut back, c, h, w, k, s, p);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
