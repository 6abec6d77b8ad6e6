use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ofdm_eq::channel::{complex_gaussian, ChannelRealization};
use ofdm_eq::interference::{build_mimo_channel, build_siso_channel, stacked_matrix, WindowSpec};
use ofdm_eq::modem::{qam_demap_hard, qam_map, Constellation, OfdmEngine, SystemConfig};
use ofdm_eq::unfolded::{lift_matrix, lift_vector, unlift_vector};

fn taps(len: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..len).map(|_| complex_gaussian(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ofdm_round_trip(log_n in 2u32..7, cp in 0usize..9, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let cfg = SystemConfig { n_subcarriers: n, cp_len: cp, ..SystemConfig::default() };
        let e = OfdmEngine::new(&cfg);
        let x = taps(n, seed);
        let t = e.modulate(&x).unwrap();
        prop_assert_eq!(t.len(), n + cp);
        let back = e.demodulate(&t).unwrap();
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn qam_bits_round_trip(order_log in prop::sample::select(vec![2u32, 4, 6]), seed in any::<u64>()) {
        let c = Constellation::new(1 << order_log).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bits: Vec<bool> = (0..order_log as usize * 20).map(|_| rng.random()).collect();
        let sym = qam_map(&bits, &c).unwrap();
        let (points, back) = qam_demap_hard(&sym, &c);
        prop_assert_eq!(back, bits);
        prop_assert_eq!(points, sym);
    }

    #[test]
    fn phi_frobenius_identity(lh in 1usize..20, cp in 0usize..10, seed in any::<u64>()) {
        let h = taps(lh, seed);
        let ch = build_siso_channel(&h, 32, cp).unwrap();
        let frob: f64 = ch.phi.iter().map(|v| v.norm_sqr()).sum();
        let expected: f64 = h.iter().enumerate().filter(|(d, _)| *d > cp).map(|(d, v)| (d - cp) as f64 * v.norm_sqr()).sum();
        prop_assert!((frob - expected).abs() <= 1e-10 * (1.0 + expected));
        prop_assert_eq!(ch.phi_is_zero(), lh <= cp + 1);
    }

    #[test]
    fn stacked_model_reproduces_two_symbols(lh in 1usize..12, seed in any::<u64>()) {
        let (n, cp) = (16, 4);
        let ch = ChannelRealization::new(2, 2, lh, taps(4 * lh, seed)).unwrap();
        let mf = build_mimo_channel(&ch, n, cp).unwrap();
        let a = stacked_matrix(&mf, &mf).unwrap();
        let x = taps(4 * n, seed ^ 1);
        let z = DVector::from_column_slice(&x);
        let r = &a * &z;
        let d = mf.d_matrix();
        let top = &d * DVector::from_column_slice(&x[..2 * n]);
        let bottom = mf.phi() * DVector::from_column_slice(&x[..2 * n]) + &d * DVector::from_column_slice(&x[2 * n..]);
        for k in 0..2 * n {
            prop_assert!((r[k] - top[k]).norm() < 1e-10);
            prop_assert!((r[2 * n + k] - bottom[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn window_columns_are_distinct_and_centred(
        n in 4usize..24,
        n_tx in 1usize..4,
        center_frac in 0.0f64..1.0,
        half in 0i64..2,
    ) {
        let cur: Vec<i64> = (-half..=half).collect();
        let w = WindowSpec::new(vec![0], cur, true).unwrap();
        let center = ((n as f64) * center_frac) as usize % n;
        let cols = w.columns(center, n, n_tx);
        prop_assert_eq!(cols.len(), w.dim(n_tx));
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), cols.len());
        for m in 0..n_tx {
            prop_assert_eq!(cols[w.center_position(n_tx, m)], n_tx * n + m * n + center);
        }
    }

    #[test]
    fn lift_is_a_homomorphism(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let a = nalgebra::DMatrix::from_vec(rows, cols, taps(rows * cols, seed));
        let v = taps(cols, seed ^ 7);
        let lhs = lift_matrix(&a) * lift_vector(&v);
        let rhs = lift_vector((&a * DVector::from_column_slice(&v)).as_slice());
        prop_assert!((lhs - rhs).norm() < 1e-12);
        prop_assert_eq!(unlift_vector(lift_vector(&v).as_slice()), v);
    }
}
