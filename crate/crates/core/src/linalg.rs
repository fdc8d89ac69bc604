//! Dense complex and real linear algebra sized for MIMO detection.
//!
//! Matrices are row-major and small (tens of rows, a handful of columns), so
//! everything here is straightforward loops. Positive-definite systems are
//! always solved through a Cholesky factorization; nothing is ever inverted
//! explicitly.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative pivot threshold for Cholesky, scaled by the largest diagonal entry.
pub const CHOLESKY_PIVOT_TOL: f64 = 1e-14;
/// Relative threshold on `|R_kk|` (scaled by the Frobenius norm) for QR.
pub const QR_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

macro_rules! dense_common {
    ($name:ident, $elem:ty) => {
        impl<T: Scalar> $name<T> {
            pub fn new(rows: usize, cols: usize, data: Vec<$elem>) -> Result<Self> {
                if rows == 0 || cols == 0 {
                    return Err(Error::DimensionMismatch(format!(
                        "matrix dimensions must be positive, got {rows}x{cols}"
                    )));
                }
                if data.len() != rows * cols {
                    return Err(Error::DimensionMismatch(format!(
                        "{rows}x{cols} matrix needs {} entries, got {}",
                        rows * cols,
                        data.len()
                    )));
                }
                Ok(Self { rows, cols, data })
            }

            pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> $elem) -> Self {
                assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
                let mut data = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for j in 0..cols {
                        data.push(f(i, j));
                    }
                }
                Self { rows, cols, data }
            }

            pub fn zeros(rows: usize, cols: usize) -> Self {
                Self::from_fn(rows, cols, |_, _| <$elem>::default())
            }

            #[inline]
            pub fn rows(&self) -> usize {
                self.rows
            }

            #[inline]
            pub fn cols(&self) -> usize {
                self.cols
            }

            #[inline]
            pub fn is_square(&self) -> bool {
                self.rows == self.cols
            }

            #[inline]
            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            #[inline]
            pub fn data_mut(&mut self) -> &mut [$elem] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$elem> {
                self.data
            }

            #[inline]
            pub fn get(&self, i: usize, j: usize) -> $elem {
                self.data[i * self.cols + j]
            }

            #[inline]
            pub fn set(&mut self, i: usize, j: usize, v: $elem) {
                self.data[i * self.cols + j] = v;
            }

            #[inline]
            pub fn row(&self, i: usize) -> &[$elem] {
                &self.data[i * self.cols..(i + 1) * self.cols]
            }

            pub fn column(&self, j: usize) -> Vec<$elem> {
                (0..self.rows).map(|i| self.get(i, j)).collect()
            }

            pub fn select_columns(&self, order: &[usize]) -> Self {
                Self::from_fn(self.rows, order.len(), |i, j| self.get(i, order[j]))
            }
        }
    };
}

dense_common!(ComplexMatrix, Complex<T>);
dense_common!(RealMatrix, T);

impl<T: Scalar> ComplexMatrix<T> {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { Complex::new(T::one(), T::zero()) } else { Complex::default() })
    }

    /// Column vector from a slice of entries.
    pub fn column_vector(entries: &[Complex<T>]) -> Self {
        Self::from_fn(entries.len(), 1, |i, _| entries[i])
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "elementwise op on {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Product with a vector given as a slice (length `cols`).
    pub fn mul_vec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.cols, "vector length must equal column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).fold(Complex::default(), |acc, (&a, &b)| acc + a * b))
            .collect()
    }

    /// Real expansion `[[Re, -Im], [Im, Re]]` of shape `2M x 2N`.
    pub fn real_expansion(&self) -> RealMatrix<T> {
        let (m, n) = (self.rows, self.cols);
        RealMatrix::from_fn(2 * m, 2 * n, |i, j| {
            let z = self.get(i % m, j % n);
            match (i < m, j < n) {
                (true, true) | (false, false) => z.re,
                (true, false) => -z.im,
                (false, true) => z.im,
            }
        })
    }
}

impl<T: Scalar> RealMatrix<T> {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("elementwise op on mismatched shapes".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "vector length must equal column count");
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
    }

    /// `selfᵀ · x`.
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "vector length must equal row count");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }
}

pub fn matmul<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = ComplexMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.get(i, k);
            let brow = b.row(k);
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

pub fn hermitian<T: Scalar>(a: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    ComplexMatrix::from_fn(a.cols, a.rows, |i, j| a.get(j, i).conj())
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᴴ`; only the lower
/// triangle of `a` is read.
pub fn cholesky<T: Scalar>(a: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("cholesky needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let max_diag = (0..n).map(|i| a.get(i, i).re).fold(T::zero(), T::max);
    let tol = T::lit(CHOLESKY_PIVOT_TOL) * max_diag;
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= l.get(j, k).norm_sqr();
        }
        if !(d > tol) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d.as_f64() });
        }
        let ljj = d.sqrt();
        l.set(j, j, Complex::new(ljj, T::zero()));
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k).conj();
            }
            l.set(i, j, s / ljj);
        }
    }
    Ok(l)
}

/// Solves `A X = B` for Hermitian positive definite `A` by Cholesky
/// factorization and two triangular solves.
pub fn solve_hpd<T: Scalar>(a: &ComplexMatrix<T>, b: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if b.rows != a.rows {
        return Err(Error::DimensionMismatch(format!("right-hand side has {} rows, system has {}", b.rows, a.rows)));
    }
    let l = cholesky(a)?;
    let n = a.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        // L z = b
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i).re);
        }
        // Lᴴ x = z
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i).conj() * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i).re);
        }
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("solve_hpd"));
    }
    Ok(x)
}

/// Gram matrix `HᴴH`.
pub fn gram<T: Scalar>(h: &ComplexMatrix<T>) -> ComplexMatrix<T> {
    let n = h.cols;
    ComplexMatrix::from_fn(n, n, |i, j| {
        (0..h.rows).fold(Complex::default(), |acc, r| acc + h.get(r, i).conj() * h.get(r, j))
    })
}

/// Moore-Penrose pseudo-inverse `(HᴴH)⁻¹Hᴴ` of a tall, full column rank matrix.
pub fn pseudo_inverse<T: Scalar>(h: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if h.rows < h.cols {
        return Err(Error::RankDeficient(format!("{}x{} matrix cannot have full column rank", h.rows, h.cols)));
    }
    solve_hpd(&gram(h), &hermitian(h)).map_err(|e| match e {
        Error::NotPositiveDefinite { index, pivot } => {
            Error::RankDeficient(format!("gram matrix pivot {pivot:e} at column {index}"))
        }
        other => other,
    })
}

/// Thin Householder QR of a tall real matrix: `Q` is `m x n` with orthonormal
/// columns, `R` is `n x n` upper triangular with a nonnegative diagonal.
pub fn qr_decompose<T: Scalar>(h: &RealMatrix<T>) -> Result<(RealMatrix<T>, RealMatrix<T>)> {
    let (m, n) = (h.rows, h.cols);
    if m < n {
        return Err(Error::RankDeficient(format!("{m}x{n} matrix is wide")));
    }
    let norm = h.frobenius_norm();
    let mut a = h.clone();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(n);
    for k in 0..n {
        let x_norm = (k..m).map(|i| a.get(i, k) * a.get(i, k)).sum::<T>().sqrt();
        let mut v: Vec<T> = (k..m).map(|i| a.get(i, k)).collect();
        let alpha = if v[0] >= T::zero() { -x_norm } else { x_norm };
        v[0] -= alpha;
        let v_norm_sqr: T = v.iter().map(|&x| x * x).sum();
        if v_norm_sqr > T::zero() {
            for j in k..n {
                let dot: T = v.iter().enumerate().map(|(t, &vt)| vt * a.get(k + t, j)).sum();
                let f = T::lit(2.0) * dot / v_norm_sqr;
                for (t, &vt) in v.iter().enumerate() {
                    let cur = a.get(k + t, j);
                    a.set(k + t, j, cur - f * vt);
                }
            }
        }
        reflectors.push(v);
    }
    let mut r = RealMatrix::from_fn(n, n, |i, j| if j >= i { a.get(i, j) } else { T::zero() });
    // Q = H_0 H_1 ... H_{n-1} applied to the first n columns of I.
    let mut q = RealMatrix::from_fn(m, n, |i, j| if i == j { T::one() } else { T::zero() });
    for k in (0..n).rev() {
        let v = &reflectors[k];
        let v_norm_sqr: T = v.iter().map(|&x| x * x).sum();
        if v_norm_sqr == T::zero() {
            continue;
        }
        for j in 0..n {
            let dot: T = v.iter().enumerate().map(|(t, &vt)| vt * q.get(k + t, j)).sum();
            let f = T::lit(2.0) * dot / v_norm_sqr;
            for (t, &vt) in v.iter().enumerate() {
                let cur = q.get(k + t, j);
                q.set(k + t, j, cur - f * vt);
            }
        }
    }
    for k in 0..n {
        if r.get(k, k) < T::zero() {
            for j in k..n {
                let cur = r.get(k, j);
                r.set(k, j, -cur);
            }
            for i in 0..m {
                let cur = q.get(i, k);
                q.set(i, k, -cur);
            }
        }
        if r.get(k, k) < T::lit(QR_RANK_TOL) * norm || !r.get(k, k).is_finite() {
            return Err(Error::RankDeficient(format!("R[{k},{k}] = {:e} below tolerance", r.get(k, k).as_f64())));
        }
    }
    Ok((q, r))
}

/// Column ordering for successive detection: greedy sorted QR picks the
/// remaining column with the smallest residual norm for each position, so the
/// last positions (detected first in a back-substitution tree) carry the
/// largest `R` diagonal entries.
pub fn sorted_qr_order<T: Scalar>(h: &RealMatrix<T>) -> Vec<usize> {
    let (m, n) = (h.rows, h.cols);
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| h.column(j)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (best, _) = (k..n)
            .map(|j| (j, cols[j].iter().map(|&x| x * x).sum::<T>()))
            .fold((k, T::infinity()), |acc, (j, nrm)| if nrm < acc.1 { (j, nrm) } else { acc });
        cols.swap(k, best);
        order.swap(k, best);
        let nrm = cols[k].iter().map(|&x| x * x).sum::<T>().sqrt();
        if nrm == T::zero() {
            continue;
        }
        let qk: Vec<T> = cols[k].iter().map(|&x| x / nrm).collect();
        for col in cols.iter_mut().skip(k + 1) {
            let dot: T = (0..m).map(|i| qk[i] * col[i]).sum();
            for i in 0..m {
                col[i] -= dot * qk[i];
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix<f64> {
        ComplexMatrix::from_fn(rows, cols, |_, _| c(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng)))
    }

    fn random_real(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> RealMatrix<f64> {
        RealMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
    }

    #[test]
    fn identity_times_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(2, 2, &mut rng);
        assert_eq!(matmul(&ComplexMatrix::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn imaginary_unit_squares_to_minus_one() {
        let i = ComplexMatrix::new(2, 2, vec![c(0., 1.), c(0., 0.), c(0., 0.), c(0., 1.)]).unwrap();
        let p = matmul(&i, &i).unwrap();
        assert_eq!(p, ComplexMatrix::identity(2).scale(-1.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(3, 2, &mut rng);
        let b = random_matrix(2, 4, &mut rng);
        let p = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                let mut s = c(0., 0.);
                for k in 0..2 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((p.get(i, j) - s).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = ComplexMatrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn constructor_validates_length() {
        assert!(ComplexMatrix::<f64>::new(2, 2, vec![c(0., 0.); 3]).is_err());
        assert!(ComplexMatrix::<f64>::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn hermitian_cases() {
        let sym = ComplexMatrix::new(2, 2, vec![c(1., 0.), c(2., 0.), c(2., 0.), c(3., 0.)]).unwrap();
        assert_eq!(hermitian(&sym), sym);
        let m = ComplexMatrix::new(1, 1, vec![c(0., 1.)]).unwrap();
        assert_eq!(hermitian(&m).get(0, 0), c(0., -1.));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_matrix(3, 5, &mut rng);
        assert_eq!(hermitian(&hermitian(&r)), r);
    }

    #[test]
    fn solve_hpd_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = random_matrix(3, 2, &mut rng);
        let x = solve_hpd(&ComplexMatrix::identity(3), &b).unwrap();
        assert!(x.sub(&b).unwrap().frobenius_norm() < 1e-15);
        let x = solve_hpd(&ComplexMatrix::identity(3).scale(2.0), &b).unwrap();
        assert!(x.sub(&b.scale(0.5)).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn solve_hpd_residual_many_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..1000 {
            let n = 1 + trial % 16;
            let g = random_matrix(n, n, &mut rng);
            let a = gram(&g).add(&ComplexMatrix::identity(n)).unwrap();
            let b = random_matrix(n, 1 + trial % 3, &mut rng);
            let x = solve_hpd(&a, &b).unwrap();
            let res = matmul(&a, &x).unwrap().sub(&b).unwrap().frobenius_norm() / b.frobenius_norm();
            assert!(res < 1e-10, "trial {trial}: residual {res}");
        }
    }

    #[test]
    fn solve_hpd_rejects_indefinite() {
        let a = ComplexMatrix::new(2, 2, vec![c(1., 0.), c(2., 0.), c(2., 0.), c(1., 0.)]).unwrap();
        let b = ComplexMatrix::identity(2);
        assert!(matches!(solve_hpd(&a, &b), Err(Error::NotPositiveDefinite { index: 1, .. })));
        let z = ComplexMatrix::<f64>::zeros(2, 2);
        assert!(matches!(solve_hpd(&z, &b), Err(Error::NotPositiveDefinite { index: 0, .. })));
    }

    #[test]
    fn pseudo_inverse_cases() {
        let s = 0.5f64.sqrt();
        let q = ComplexMatrix::new(2, 2, vec![c(s, 0.), c(0., s), c(0., s), c(s, 0.)]).unwrap();
        let w = pseudo_inverse(&q).unwrap();
        assert!(w.sub(&hermitian(&q)).unwrap().frobenius_norm() < 1e-12);

        let two = ComplexMatrix::new(1, 1, vec![c(2., 0.)]).unwrap();
        assert!((pseudo_inverse(&two).unwrap().get(0, 0) - c(0.5, 0.)).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let h = random_matrix(8, 2, &mut rng);
            let w = pseudo_inverse(&h).unwrap();
            let err = matmul(&w, &h).unwrap().sub(&ComplexMatrix::identity(2)).unwrap().frobenius_norm();
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn pseudo_inverse_rank_deficient() {
        let col = [c(1., 0.), c(0., 1.), c(2., -1.)];
        let h = ComplexMatrix::from_fn(3, 2, |i, _| col[i]);
        assert!(matches!(pseudo_inverse(&h), Err(Error::RankDeficient(_))));
        assert!(matches!(pseudo_inverse(&ComplexMatrix::<f64>::zeros(2, 3)), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn qr_trivial() {
        let (q, r) = qr_decompose(&RealMatrix::<f64>::identity(3)).unwrap();
        assert!(q.sub(&RealMatrix::identity(3)).unwrap().frobenius_norm() < 1e-15);
        assert!(r.sub(&RealMatrix::identity(3)).unwrap().frobenius_norm() < 1e-15);
        let d = RealMatrix::new(2, 2, vec![3., 0., 0., 4.]).unwrap();
        let (q, r) = qr_decompose(&d).unwrap();
        assert!(q.sub(&RealMatrix::identity(2)).unwrap().frobenius_norm() < 1e-15);
        assert!(r.sub(&d).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn qr_residuals_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_real(6, 4, &mut rng);
            let (q, r) = qr_decompose(&a).unwrap();
            let orth = q.transpose().matmul(&q).unwrap().sub(&RealMatrix::identity(4)).unwrap();
            assert!(orth.frobenius_norm() < 1e-10);
            let rec = q.matmul(&r).unwrap().sub(&a).unwrap();
            assert!(rec.frobenius_norm() < 1e-10 * a.frobenius_norm());
            for i in 0..4 {
                assert!(r.get(i, i) >= 0.0);
                for j in 0..i {
                    assert_eq!(r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn qr_rank_deficient() {
        let a = RealMatrix::new(3, 2, vec![1., 2., 2., 4., 3., 6.]).unwrap();
        assert!(matches!(qr_decompose(&a), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn real_expansion_layout() {
        let h = ComplexMatrix::new(1, 1, vec![c(1., 2.)]).unwrap();
        let r = h.real_expansion();
        assert_eq!(r.data(), &[1., -2., 2., 1.]);
    }

    #[test]
    fn sorted_order_puts_strong_column_last() {
        let a = RealMatrix::new(3, 3, vec![5., 0., 0., 0., 1., 0., 0., 0., 3.]).unwrap();
        assert_eq!(sorted_qr_order(&a), vec![1, 2, 0]);
    }

    #[test]
    fn works_in_single_precision() {
        let a = ComplexMatrix::<f32>::identity(2).scale(4.0);
        let b = ComplexMatrix::<f32>::identity(2);
        let x = solve_hpd(&a, &b).unwrap();
        assert!((x.get(0, 0).re - 0.25).abs() < 1e-7);
    }
}
