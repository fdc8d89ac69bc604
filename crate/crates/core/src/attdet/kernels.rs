//! Row-major dense kernels. Weights use the `x · W` convention: a layer with
//! `n_in` inputs and `n_out` outputs stores `W` as `n_in x n_out`.

use crate::scalar::Scalar;

#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `out[r] = x[r] · W (+ b)`.
pub(crate) fn affine<T: Scalar>(x: &[T], n_in: usize, w: &[T], b: Option<&[T]>, n_out: usize, out: &mut [T]) {
    debug_assert_eq!(w.len(), n_in * n_out);
    debug_assert_eq!(x.len() / n_in, out.len() / n_out);
    for (xr, or) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        match b {
            Some(b) => or.copy_from_slice(b),
            None => or.iter_mut().for_each(|v| *v = T::zero()),
        }
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, &w[i * n_out..(i + 1) * n_out], or);
            }
        }
    }
}

/// `dw += xᵀ · dy`.
pub(crate) fn acc_weight_grad<T: Scalar>(x: &[T], n_in: usize, dy: &[T], n_out: usize, dw: &mut [T]) {
    for (xr, dr) in x.chunks_exact(n_in).zip(dy.chunks_exact(n_out)) {
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, dr, &mut dw[i * n_out..(i + 1) * n_out]);
            }
        }
    }
}

/// `db += Σ_r dy[r]`.
pub(crate) fn acc_bias_grad<T: Scalar>(dy: &[T], n_out: usize, db: &mut [T]) {
    for dr in dy.chunks_exact(n_out) {
        for (b, &d) in db.iter_mut().zip(dr) {
            *b += d;
        }
    }
}

/// `dx[r] (+)= dy[r] · Wᵀ`.
pub(crate) fn input_grad<T: Scalar>(dy: &[T], n_out: usize, w: &[T], n_in: usize, dx: &mut [T], accumulate: bool) {
    for (dr, xr) in dy.chunks_exact(n_out).zip(dx.chunks_exact_mut(n_in)) {
        for (i, xi) in xr.iter_mut().enumerate() {
            let g = dot(dr, &w[i * n_out..(i + 1) * n_out]);
            if accumulate {
                *xi += g;
            } else {
                *xi = g;
            }
        }
    }
}
