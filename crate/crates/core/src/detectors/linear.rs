use num_complex::Complex;

use super::DetectionResult;
use crate::error::{Error, Result};
use crate::linalg::{gram, hermitian, matmul, pseudo_inverse, solve_hpd, ComplexMatrix};
use crate::modem::{maxlog_llr, nearest_point, Constellation};
use crate::scalar::Scalar;

fn check_dims<T: Scalar>(h: &ComplexMatrix<T>, y: &[Complex<T>]) -> Result<()> {
    if y.len() != h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "received vector has {} entries, channel has {} rows",
            y.len(),
            h.rows()
        )));
    }
    Ok(())
}

/// Equalized outputs `z_i ≈ μ_i x_i + e_i` with `Var(e_i) = ν_i`.
fn soft_from_equalized<T: Scalar>(
    name: &str,
    z: &[Complex<T>],
    gain: &[T],
    var: &[T],
    c: &Constellation<T>,
    clip: T,
) -> DetectionResult<T> {
    let llrs = z.iter().zip(gain).zip(var).map(|((&zi, &g), &v)| maxlog_llr(zi, g, v, c, clip)).collect();
    let labels: Vec<u32> = z.iter().zip(gain).map(|(&zi, &g)| c.labels()[nearest_point(zi / g, c)]).collect();
    DetectionResult::from_labels(name, llrs, &labels, c)
}

/// Zero-forcing: `z = H⁺y`, noise enhancement `σ²[(ĤᴴĤ)⁻¹]_ii`.
pub fn detect_zf<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    noise_var: T,
    c: &Constellation<T>,
    clip: T,
) -> Result<DetectionResult<T>> {
    check_dims(h_est, y)?;
    let w = pseudo_inverse(h_est)?;
    let z = w.mul_vec(y);
    let nt = h_est.cols();
    // diag((HᴴH)⁻¹) = row norms of H⁺, since H⁺(H⁺)ᴴ = (HᴴH)⁻¹
    let var: Vec<T> = (0..nt)
        .map(|i| {
            let rn: T = w.row(i).iter().map(|x| x.norm_sqr()).sum();
            (noise_var * rn).max(T::min_positive_value())
        })
        .collect();
    Ok(soft_from_equalized("zf", &z, &vec![T::one(); nt], &var, c, clip))
}

/// MMSE filter `W = (ĤᴴĤ + σ²I)⁻¹Ĥᴴ`.
pub fn mmse_filter<T: Scalar>(h_est: &ComplexMatrix<T>, noise_var: T) -> Result<ComplexMatrix<T>> {
    let mut a = gram(h_est);
    for i in 0..a.rows() {
        let d = a.get(i, i);
        a.set(i, i, d + Complex::new(noise_var, T::zero()));
    }
    solve_hpd(&a, &hermitian(h_est))
}

/// Biased MMSE equalization with per-layer bias and post-equalization
/// interference-plus-noise variance, followed by max-log demapping.
pub fn detect_mmse<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    noise_var: T,
    c: &Constellation<T>,
    clip: T,
) -> Result<DetectionResult<T>> {
    check_dims(h_est, y)?;
    if !(noise_var > T::zero()) {
        return Err(Error::Config("MMSE detection needs a positive noise variance".into()));
    }
    let w = mmse_filter(h_est, noise_var)?;
    let z = w.mul_vec(y);
    let wh = matmul(&w, h_est)?;
    let nt = h_est.cols();
    let mut gain = Vec::with_capacity(nt);
    let mut var = Vec::with_capacity(nt);
    for i in 0..nt {
        let mu = wh.get(i, i).re;
        let interference: T = (0..nt).filter(|&j| j != i).map(|j| wh.get(i, j).norm_sqr()).sum();
        let wn: T = w.row(i).iter().map(|x| x.norm_sqr()).sum();
        gain.push(mu.max(T::min_positive_value()));
        var.push((interference + noise_var * wn).max(T::min_positive_value()));
    }
    Ok(soft_from_equalized("mmse", &z, &gain, &var, c, clip))
}

/// Per-layer matched filter `ĥ_iᴴy / ‖ĥ_i‖²` treating other layers as noise.
pub fn detect_mf<T: Scalar>(
    h_est: &ComplexMatrix<T>,
    y: &[Complex<T>],
    noise_var: T,
    c: &Constellation<T>,
    clip: T,
) -> Result<DetectionResult<T>> {
    check_dims(h_est, y)?;
    let nt = h_est.cols();
    let cols: Vec<Vec<Complex<T>>> = (0..nt).map(|j| h_est.column(j)).collect();
    let inner = |a: &[Complex<T>], b: &[Complex<T>]| {
        a.iter().zip(b).fold(Complex::<T>::default(), |s, (x, y)| s + x.conj() * y)
    };
    let mut z = Vec::with_capacity(nt);
    let mut var = Vec::with_capacity(nt);
    for i in 0..nt {
        let e = inner(&cols[i], &cols[i]).re;
        if !(e > T::zero()) {
            return Err(Error::DegenerateColumn { column: i, norm_sqr: e.as_f64() });
        }
        z.push(inner(&cols[i], y) / e);
        let interference: T = (0..nt).filter(|&j| j != i).map(|j| inner(&cols[i], &cols[j]).norm_sqr()).sum();
        var.push(((interference + noise_var * e) / (e * e)).max(T::min_positive_value()));
    }
    Ok(soft_from_equalized("mf", &z, &vec![T::one(); nt], &var, c, clip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{apply_channel, sample_channel, ChannelConfig};
    use crate::modem::map_bits;
    use crate::rng::seeded;
    use rand::RngExt;

    fn random_symbols(n: usize, c: &Constellation<f64>, rng: &mut crate::rng::SimRng) -> (Vec<u8>, Vec<Complex<f64>>) {
        let bits: Vec<u8> = (0..n * c.bits_per_symbol()).map(|_| rng.random_range(0..2u8)).collect();
        let s = map_bits(&bits, c).unwrap();
        (bits, s)
    }

    #[test]
    fn zf_identity_noiseless() {
        let c = Constellation::<f64>::new(16).unwrap();
        let mut rng = seeded(1);
        let (bits, x) = random_symbols(2, &c, &mut rng);
        let h = ComplexMatrix::identity(2);
        let r = detect_zf(&h, &x, 1e-3, &c, 20.0).unwrap();
        assert_eq!(r.flat_bits(), bits);
        assert_eq!(r.hard_symbols, x);
    }

    #[test]
    fn zf_unitary_is_matched_filter() {
        let s = 0.5f64.sqrt();
        let q = ComplexMatrix::new(
            2,
            2,
            vec![Complex::new(s, 0.), Complex::new(0., s), Complex::new(0., s), Complex::new(s, 0.)],
        )
        .unwrap();
        let w = pseudo_inverse(&q).unwrap();
        let y = [Complex::new(0.3, -0.2), Complex::new(1.1, 0.4)];
        let mf = hermitian(&q).mul_vec(&y);
        for (a, b) in w.mul_vec(&y).iter().zip(&mf) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_noiseless_random() {
        let c = Constellation::<f64>::new(16).unwrap();
        let mut rng = seeded(2);
        for _ in 0..100 {
            let h = sample_channel(&ChannelConfig::iid(4, 2), &mut rng).unwrap();
            let (bits, x) = random_symbols(2, &c, &mut rng);
            let y = h.mul_vec(&x);
            let z = pseudo_inverse(&h).unwrap().mul_vec(&y);
            let err: f64 = z.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-9);
            assert_eq!(detect_zf(&h, &y, 1e-6, &c, 20.0).unwrap().flat_bits(), bits);
        }
    }

    #[test]
    fn mmse_approaches_zf() {
        let mut rng = seeded(3);
        let h = sample_channel::<f64, _>(&ChannelConfig::iid(4, 2), &mut rng).unwrap();
        let zf = pseudo_inverse(&h).unwrap();
        let tiny = mmse_filter(&h, 1e-12).unwrap();
        assert!(tiny.sub(&zf).unwrap().frobenius_norm() < 1e-6);
        let mut prev = f64::INFINITY;
        for e in 1..=8 {
            let d = mmse_filter(&h, 10f64.powi(-e)).unwrap().sub(&zf).unwrap().frobenius_norm();
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn mmse_identity_unit_noise() {
        let w = mmse_filter(&ComplexMatrix::<f64>::identity(2), 1.0).unwrap();
        assert!(w.sub(&ComplexMatrix::identity(2).scale(0.5)).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn mmse_normal_equations() {
        let mut rng = seeded(4);
        for _ in 0..100 {
            let h = sample_channel::<f64, _>(&ChannelConfig::iid(8, 2), &mut rng).unwrap();
            let var = rng.random_range(0.01..2.0);
            let w = mmse_filter(&h, var).unwrap();
            let mut a = gram(&h);
            for i in 0..2 {
                let d = a.get(i, i);
                a.set(i, i, d + Complex::new(var, 0.0));
            }
            let res = matmul(&a, &w).unwrap().sub(&hermitian(&h)).unwrap().frobenius_norm();
            assert!(res < 1e-10);
        }
    }

    #[test]
    fn mmse_rejects_zero_noise() {
        let c = Constellation::<f64>::new(4).unwrap();
        let h = ComplexMatrix::identity(2);
        assert!(detect_mmse(&h, &[Complex::new(1.0, 0.0); 2], 0.0, &c, 20.0).is_err());
    }

    #[test]
    fn hard_bits_follow_llr_signs() {
        let c = Constellation::<f64>::new(16).unwrap();
        let mut rng = seeded(5);
        for _ in 0..200 {
            let h = sample_channel::<f64, _>(&ChannelConfig::iid(4, 2), &mut rng).unwrap();
            let (_, x) = random_symbols(2, &c, &mut rng);
            let y = apply_channel(&h, &x, 0.2, &mut rng).unwrap();
            for r in [
                detect_zf(&h, &y, 0.2, &c, 20.0).unwrap(),
                detect_mmse(&h, &y, 0.2, &c, 20.0).unwrap(),
                detect_mf(&h, &y, 0.2, &c, 20.0).unwrap(),
            ] {
                for (bits, soft) in r.hard_bits.iter().zip(&r.llrs) {
                    for (b, l) in bits.iter().zip(&soft.llrs) {
                        if *l != 0.0 {
                            assert_eq!(*b == 1, *l > 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rank_deficient_zf() {
        let c = Constellation::<f64>::new(4).unwrap();
        let h = ComplexMatrix::from_fn(3, 2, |i, _| Complex::new(i as f64 + 1.0, 0.0));
        assert!(matches!(detect_zf(&h, &[Complex::new(0.0, 0.0); 3], 0.1, &c, 20.0), Err(Error::RankDeficient(_))));
    }
}
