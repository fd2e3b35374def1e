//! Dense row-major kernels over `f32`/`f64`, backed by `matrixmultiply`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static {
    /// `C = alpha·A·B + beta·C` for an `m×k` by `k×n` product with explicit
    /// row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn from_f64(x: f64) -> Self;
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "{what}: {rows}x{cols} view with strides ({rs},{cs}) exceeds buffer of {len}");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (isize, isize),
                b: &[Self],
                (rsb, csb): (isize, isize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (isize, isize),
            ) {
                check_extent(a.len(), m, k, (rsa, csa), "A");
                check_extent(b.len(), k, n, (rsb, csb), "B");
                check_extent(c.len(), m, n, (rsc, csc), "C");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every view was bounds-checked above and `c` is a
                // unique borrow disjoint from `a` and `b`.
                unsafe {
                    $gemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc);
                }
            }

            fn from_f64(x: f64) -> Self {
                x as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// `y = x·w` for `x: rows×din`, `w: din×dout`.
pub fn matmul<T: Scalar>(x: &[T], w: &[T], rows: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * dout];
    T::gemm(rows, din, dout, T::one(), x, (din as isize, 1), w, (dout as isize, 1), T::zero(), &mut y, (dout as isize, 1));
    y
}

/// Accumulates the gradients of `y = x·w`: `dx += dy·wᵀ`, `dw += xᵀ·dy`.
pub fn matmul_backward<T: Scalar>(x: &[T], w: &[T], dy: &[T], rows: usize, din: usize, dout: usize, dx: &mut [T], dw: &mut [T]) {
    T::gemm(rows, dout, din, T::one(), dy, (dout as isize, 1), w, (1, dout as isize), T::one(), dx, (din as isize, 1));
    T::gemm(din, rows, dout, T::one(), x, (1, din as isize), dy, (dout as isize, 1), T::one(), dw, (dout as isize, 1));
}

pub const RMS_EPS: f64 = 1e-6;

/// Scale-only RMS normalization per row. Returns the output and each row's
/// inverse RMS.
pub fn rms_norm<T: Scalar>(x: &[T], g: &[T], d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(rows);
    let eps = T::from_f64(RMS_EPS);
    let dn = T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
        let ir = T::one() / (ms + eps).sqrt();
        inv.push(ir);
        for c in 0..d {
            y[r * d + c] = row[c] * ir * g[c];
        }
    }
    (y, inv)
}

pub fn rms_norm_backward<T: Scalar>(x: &[T], g: &[T], inv: &[T], dy: &[T], d: usize, dx: &mut [T], dg: &mut [T]) {
    let dn = T::from_f64(d as f64);
    for (r, &ir) in inv.iter().enumerate() {
        let row = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut dot = T::zero();
        for c in 0..d {
            dg[c] += dyr[c] * row[c] * ir;
            dot += g[c] * dyr[c] * row[c];
        }
        let k = ir * ir * ir * dot / dn;
        for c in 0..d {
            dx[r * d + c] += ir * g[c] * dyr[c] - row[c] * k;
        }
    }
}

pub fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
