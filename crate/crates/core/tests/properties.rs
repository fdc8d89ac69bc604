use num_complex::Complex;
use proptest::prelude::*;

use attdet::attdet::{
    attention_layer, embed_tokens, forward, forward_batch, init_params, ArchConfig, AttInput, ModelParams,
};
use attdet::channel::{apply_channel, sample_channel, ChannelConfig, ChannelModel, ChannelSampler};
use attdet::detectors::{detect_kbest, detect_ml, detect_mmse, detect_zf, mmse_filter, KBestConfig};
use attdet::harness::{run_sweep, DetectorSpec, SimConfig, Stopping};
use attdet::linalg::{gram, matmul, pseudo_inverse, qr_decompose, solve_hpd, ComplexMatrix, RealMatrix};
use attdet::modem::{hard_demap, map_bits, maxlog_llr, Constellation};
use attdet::rng::{complex_normal, seeded, SimRng};
use attdet::training::bce_loss;

fn cmat(rows: usize, cols: usize, rng: &mut SimRng) -> ComplexMatrix<f64> {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
}

fn rel_frob(a: &ComplexMatrix<f64>, b: &ComplexMatrix<f64>) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn cvec(n: usize, rng: &mut SimRng) -> Vec<Complex<f64>> {
    (0..n).map(|_| complex_normal(rng, 1.0)).collect()
}

fn order() -> impl Strategy<Value = usize> {
    prop_oneof![Just(4usize), Just(16), Just(64)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, p in 1usize..7, q in 1usize..7) {
        let mut rng = seeded(seed);
        let (a, b, c) = (cmat(m, n, &mut rng), cmat(n, p, &mut rng), cmat(p, q, &mut rng));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(rel_frob(&left, &right) < 1e-10);
    }

    #[test]
    fn solve_hpd_residual(seed in any::<u64>(), n in 1usize..17, k in 1usize..4) {
        let mut rng = seeded(seed);
        let g = cmat(n + 2, n, &mut rng);
        let mut a = gram(&g);
        for i in 0..n {
            let d = a.get(i, i);
            a.set(i, i, d + Complex::new(0.1, 0.0));
        }
        let b = cmat(n, k, &mut rng);
        let x = solve_hpd(&a, &b).unwrap();
        prop_assert!(rel_frob(&matmul(&a, &x).unwrap(), &b) < 1e-10);
    }

    #[test]
    fn pseudo_inverse_is_left_inverse(seed in any::<u64>(), n in 1usize..5, extra in 0usize..6) {
        let mut rng = seeded(seed);
        let h = cmat(n + extra, n, &mut rng);
        let p = pseudo_inverse(&h).unwrap();
        let i = ComplexMatrix::<f64>::identity(n);
        prop_assert!(matmul(&p, &h).unwrap().sub(&i).unwrap().frobenius_norm() < 1e-9);
    }

    #[test]
    fn qr_is_orthogonal_and_exact(seed in any::<u64>(), cols in 1usize..7, extra in 0usize..5) {
        let mut rng = seeded(seed);
        let rows = cols + extra;
        let data: Vec<f64> = (0..rows * cols).map(|_| complex_normal(&mut rng, 2.0).re).collect();
        let a = RealMatrix::new(rows, cols, data).unwrap();
        let (q, r) = qr_decompose(&a).unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        prop_assert!(qtq.sub(&RealMatrix::identity(qtq.rows())).unwrap().frobenius_norm() < 1e-10);
        prop_assert!(q.matmul(&r).unwrap().sub(&a).unwrap().frobenius_norm() < 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn modem_round_trip(m in order(), seed in any::<u64>(), n in 1usize..10) {
        let c = Constellation::<f64>::new(m).unwrap();
        let mut rng = seeded(seed);
        let bits: Vec<u8> = (0..n * c.bits_per_symbol()).map(|_| (complex_normal(&mut rng, 1.0).re > 0.0) as u8).collect();
        let syms = map_bits(&bits, &c).unwrap();
        let back: Vec<u8> = syms.iter().flat_map(|&s| hard_demap(s, &c)).collect();
        prop_assert_eq!(back, bits);
    }

    #[test]
    fn llr_scale_invariance(m in order(), re in -3.0..3.0f64, im in -3.0..3.0f64, gain in 0.2..2.0f64,
                            var in 0.05..2.0f64, alpha in 0.1..10.0f64) {
        let c = Constellation::<f64>::new(m).unwrap();
        let z = Complex::new(re, im);
        let a = maxlog_llr(z, gain, var, &c, 1e12);
        let b = maxlog_llr(z * alpha, gain * alpha, var * alpha * alpha, &c, 1e12);
        for (x, y) in a.llrs.iter().zip(&b.llrs) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn qpsk_llr_reflection_antisymmetry(re in -3.0..3.0f64, im in -3.0..3.0f64, var in 0.05..2.0f64) {
        let c = Constellation::<f64>::new(4).unwrap();
        let z = Complex::new(re, im);
        let l = maxlog_llr(z, 1.0, var, &c, 1e12).llrs;
        let flip_re = maxlog_llr(Complex::new(-re, im), 1.0, var, &c, 1e12).llrs;
        let flip_im = maxlog_llr(Complex::new(re, -im), 1.0, var, &c, 1e12).llrs;
        // The bit carried by the real axis is the one whose sign follows Re(s).
        let p0 = c.points()[0];
        let mirror = c.points().iter().position(|p| p.re == -p0.re && p.im == p0.im).unwrap();
        let i_bit = (0..2).find(|&k| c.label_bit(c.labels()[0], k) != c.label_bit(c.labels()[mirror], k)).unwrap();
        let q_bit = 1 - i_bit;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        prop_assert!(close(flip_re[i_bit], -l[i_bit]) && close(flip_re[q_bit], l[q_bit]));
        prop_assert!(close(flip_im[q_bit], -l[q_bit]) && close(flip_im[i_bit], l[i_bit]));
    }

    #[test]
    fn channel_replay_and_zero_correlation(seed in any::<u64>(), nt in 1usize..5, extra in 0usize..5) {
        let iid = ChannelConfig::iid(nt + extra, nt);
        let kron = ChannelConfig { model: ChannelModel::Kronecker, ..iid.clone() };
        let a: ComplexMatrix<f64> = sample_channel(&iid, &mut seeded(seed)).unwrap();
        prop_assert_eq!(&a, &sample_channel(&iid, &mut seeded(seed)).unwrap());
        prop_assert_eq!(&a, &sample_channel(&kron, &mut seeded(seed)).unwrap());
    }

    #[test]
    fn bce_masked_gradient_is_zero(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = seeded(seed);
        let logits: Vec<f64> = (0..n).map(|_| 5.0 * complex_normal(&mut rng, 1.0).re).collect();
        let bits: Vec<u8> = (0..n).map(|_| (complex_normal(&mut rng, 1.0).re > 0.0) as u8).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| complex_normal(&mut rng, 1.0).re > -0.5).collect();
        mask[0] = true;
        let (_, g) = bce_loss(&logits, &bits, &mask).unwrap();
        for (gi, &m) in g.iter().zip(&mask) {
            if !m {
                prop_assert_eq!(*gi, 0.0);
            }
        }
        let zeros = vec![0.0; n];
        let (l0, _) = bce_loss(&zeros, &bits, &mask).unwrap();
        prop_assert!((l0 - std::f64::consts::LN_2).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attdet_permutation_equivariance(seed in any::<u64>(), nt in 2usize..5, rot in 1usize..4, smoothing in any::<bool>()) {
        let arch = ArchConfig { d: 8, n_heads: 2, n_layers: 2, max_bits: 4, score_smoothing: smoothing, ..ArchConfig::default() };
        let mut rng = seeded(seed);
        let p: ModelParams<f64> = init_params(&arch, 3, &mut rng).unwrap();
        let perm: Vec<usize> = (0..nt).map(|i| (i + rot) % nt).collect();
        let res: Vec<_> = (0..4).map(|_| (cmat(3, nt, &mut rng), cvec(3, &mut rng))).collect();
        let grid = smoothing.then_some(attdet::attdet::GridShape { rows: 2, cols: 2 });
        let run = |set: &[(ComplexMatrix<f64>, Vec<Complex<f64>>)]| {
            let inputs: Vec<_> = set.iter().map(|(h, y)| AttInput { h_est: h, y }).collect();
            forward_batch(&p, &inputs, grid, 4).unwrap()
        };
        let base = run(&res);
        let permuted: Vec<_> = res.iter().map(|(h, y)| (h.select_columns(&perm), y.clone())).collect();
        let out = run(&permuted);
        for (b, o) in base.iter().zip(&out) {
            for (k, &src) in perm.iter().enumerate() {
                prop_assert_eq!(&o[k], &b[src]);
            }
        }
    }

    #[test]
    fn attdet_residual_identity(seed in any::<u64>(), nt in 1usize..4, layers in 1usize..4) {
        let arch = ArchConfig { d: 8, n_heads: 2, n_layers: layers, max_bits: 4, ..ArchConfig::default() };
        let mut rng = seeded(seed);
        let mut p: ModelParams<f64> = init_params(&arch, 4, &mut rng).unwrap();
        for t in 0..layers {
            let m = p.layout().blocks[t].mlp_h;
            p.flat_mut()[m.w2().start..m.b2().end].fill(0.0);
        }
        let (h, y) = (cmat(4, nt, &mut rng), cvec(4, &mut rng));
        let s = embed_tokens(&p, &[AttInput { h_est: &h, y: &y }]).unwrap();
        for t in 0..layers {
            prop_assert_eq!(&attention_layer(&p, t, &s, None).unwrap(), &s);
        }
    }

    #[test]
    fn attdet_bounded_inputs_are_finite(seed in any::<u64>(), hs in 1e-3..100.0f64, ys in 0.0..100.0f64) {
        let arch = ArchConfig { d: 16, n_heads: 4, n_layers: 2, ..ArchConfig::default() };
        let mut rng = seeded(seed);
        let p: ModelParams<f64> = init_params(&arch, 4, &mut rng).unwrap();
        let h = cmat(4, 2, &mut rng);
        let h = h.scale(hs / h.frobenius_norm());
        let y = cvec(4, &mut rng);
        let yn = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let y: Vec<_> = y.iter().map(|v| v * (ys / yn)).collect();
        let out = forward(&h, &y, &p, 6).unwrap();
        prop_assert!(out.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn attdet_head_count_structure(seed in any::<u64>(), heads in prop_oneof![Just(1usize), Just(4)]) {
        let arch = ArchConfig { d: 16, n_heads: heads, n_layers: 2, ..ArchConfig::default() };
        let p: ModelParams<f64> = init_params(&arch, 2, &mut seeded(seed)).unwrap();
        let back = ModelParams::from_flat(&arch, 2, p.clone().into_flat()).unwrap();
        prop_assert_eq!(&back, &p);
        let mut rng = seeded(seed ^ 1);
        let out = forward(&cmat(2, 3, &mut rng), &cvec(2, &mut rng), &p, 4).unwrap();
        prop_assert_eq!(out.len(), 3);
        prop_assert!(out.iter().all(|l| l.len() == 4));
    }

    #[test]
    fn detectors_agree_noiseless_identity(seed in any::<u64>(), m in order(), nt in 1usize..4) {
        let c = Constellation::<f64>::new(m).unwrap();
        let h = ComplexMatrix::<f64>::identity(nt);
        let mut rng = seeded(seed);
        let bits: Vec<u8> = (0..nt * c.bits_per_symbol()).map(|_| (complex_normal(&mut rng, 1.0).re > 0.0) as u8).collect();
        let x = map_bits(&bits, &c).unwrap();
        let y = apply_channel(&h, &x, 0.0, &mut rng).unwrap();
        let nv = 1e-9;
        let results = [
            detect_zf(&h, &y, nv, &c, 20.0).unwrap(),
            detect_mmse(&h, &y, nv, &c, 20.0).unwrap(),
            detect_ml(&h, &y, nv, &c, 20.0, 1 << 20).unwrap(),
            detect_kbest(&h, &y, nv, &c, &KBestConfig::new(1)).unwrap(),
            detect_kbest(&h, &y, nv, &c, &KBestConfig::new(8)).unwrap(),
        ];
        for r in &results {
            prop_assert_eq!(r.flat_bits(), bits.clone());
        }
    }
}

#[test]
fn mmse_converges_to_zf_monotonically() {
    let mut rng = seeded(5);
    for _ in 0..20 {
        let h = cmat(6, 3, &mut rng);
        let zf = pseudo_inverse(&h).unwrap();
        let gaps: Vec<f64> = (1..=8)
            .map(|e| {
                let w = mmse_filter(&h, 10f64.powi(-e)).unwrap();
                w.sub(&zf).unwrap().frobenius_norm()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[7] < 1e-6);
    }
}

#[test]
fn ml_has_lowest_vector_error_rate() {
    let c = Constellation::<f64>::new(4).unwrap();
    let sampler = ChannelSampler::<f64>::new(&ChannelConfig::iid(2, 2)).unwrap();
    let mut rng = seeded(17);
    let nv = attdet::channel::snr_to_noise_var(6.0, 2);
    let mut errors = [0u64; 4];
    for _ in 0..100_000 {
        let re = attdet::channel::sample_re(&sampler, &c, nv, &mut rng);
        let (h, y) = (&re.channel.h_est, &re.y);
        let out = [
            detect_ml(h, y, nv, &c, 20.0, 1 << 20).unwrap(),
            detect_zf(h, y, nv, &c, 20.0).unwrap(),
            detect_mmse(h, y, nv, &c, 20.0).unwrap(),
            detect_kbest(h, y, nv, &c, &KBestConfig::new(2)).unwrap(),
        ];
        for (e, r) in errors.iter_mut().zip(&out) {
            *e += (r.flat_bits() != re.bits) as u64;
        }
    }
    for &e in &errors[1..] {
        // One-sided 95% allowance on the paired difference.
        assert!(errors[0] as f64 <= e as f64 + 1.645 * (e as f64).sqrt(), "{errors:?}");
    }
}

#[test]
fn kbest_ber_non_increasing_in_width() {
    let widths = [1usize, 2, 4, 16, 256];
    let mut cfg = SimConfig::new(
        ChannelConfig::iid(2, 2),
        16,
        vec![10.0],
        widths.iter().map(|&k| DetectorSpec::KBest(k)).collect(),
    );
    cfg.max_re_per_point = 40_000;
    cfg.min_bit_errors = u64::MAX;
    cfg.stopping = Stopping::Shared;
    let points = run_sweep(&cfg).unwrap();
    for w in points.windows(2) {
        let (a, b) = (w[0].bit_errors as f64, w[1].bit_errors as f64);
        assert!(b <= a + 1.645 * a.sqrt(), "{points:?}");
    }
    assert!(points[0].bit_errors > points[4].bit_errors);
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let mut cfg = SimConfig::new(
        ChannelConfig::kronecker(4, 2, 0.5, 0.2),
        16,
        vec![6.0, 12.0],
        vec![DetectorSpec::Mmse, DetectorSpec::KBest(4)],
    );
    cfg.max_re_per_point = 5000;
    cfg.chunk_size = 200;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_sweep(&cfg).unwrap())
    };
    assert_eq!(run(1), run(3));
}
