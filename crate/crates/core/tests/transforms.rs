use nalgebra::DMatrix;
use num_complex::Complex64;
use otsm_core::modem::{
    bits_to_indices, indices_to_bits, map_bits, Constellation, OtsmConfig, OtsmModem,
};
use otsm_core::transforms::{perfect_shuffle, sign_changes, wht_matrix, WalshTransform};
use proptest::prelude::*;

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), len)
        .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
}

fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

proptest! {
    #[test]
    fn walsh_transform_is_an_involution(log_n in 0u32..7, seed in any::<u64>()) {
        let n = 1usize << log_n;
        let w = WalshTransform::new(n).unwrap();
        let x: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(((seed >> (i % 64)) & 7) as f64 - 3.5, i as f64 * 0.1))
            .collect();
        let mut y = x.clone();
        let mut scratch = vec![Complex64::default(); n];
        w.apply_in_place(&mut y, &mut scratch);
        prop_assert!((norm2(&y) - norm2(&x)).abs() < 1e-9 * (1.0 + norm2(&x)));
        w.apply_in_place(&mut y, &mut scratch);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn fast_walsh_matches_dense_rows(log_n in 0u32..6, x in complex_vec(32)) {
        let n = 1usize << log_n;
        let x = &x[..n];
        let dense = wht_matrix(n).unwrap().to_complex();
        let expect = &dense * DMatrix::from_column_slice(n, 1, x);
        let mut y = x.to_vec();
        WalshTransform::new(n).unwrap().apply_in_place(&mut y, &mut vec![Complex64::default(); n]);
        for i in 0..n {
            prop_assert!((y[i] - expect[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn shuffle_round_trip(m in 1usize..9, n in 1usize..9) {
        let p = perfect_shuffle(m, n).unwrap();
        let v: Vec<usize> = (0..m * n).collect();
        prop_assert_eq!(p.apply_transpose(&p.apply(&v)), v.clone());
        prop_assert_eq!(p.transpose().apply(&p.apply(&v)), v);
    }

    #[test]
    fn modem_is_unitary_and_invertible(log_m in 1u32..4, log_n in 1u32..4, zp in 0usize..2, x in complex_vec(64)) {
        let (m, n) = (1usize << log_m, 1usize << log_n);
        let cfg = OtsmConfig::zp(m, n, zp.min(m - 1), 15e3, 4).unwrap();
        let modem = OtsmModem::new(&cfg).unwrap();
        let data = &x[..cfg.data_symbols()];
        let s = modem.modulate(data).unwrap();
        prop_assert!((norm2(&s) - norm2(data)).abs() < 1e-9 * (1.0 + norm2(data)));
        let back = modem.receive(&s).unwrap();
        let padded = modem.modulate_padded(&back).unwrap();
        for (a, b) in s.iter().zip(&padded) {
            prop_assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn bit_mapping_round_trip(order in prop::sample::select(vec![2usize, 4, 16, 64]), bits in prop::collection::vec(0u8..2, 0..120)) {
        let c = Constellation::new(order).unwrap();
        let q = c.bits_per_symbol();
        let bits = &bits[..bits.len() / q * q];
        let idx = bits_to_indices(bits, &c).unwrap();
        prop_assert_eq!(indices_to_bits(&idx, &c), bits.to_vec());
        let x = map_bits(bits, &c).unwrap();
        for (z, &k) in x.iter().zip(&idx) {
            prop_assert_eq!(c.nearest(*z), k);
        }
    }
}

#[test]
fn walsh_rows_are_sequency_ordered() {
    for n in [2usize, 4, 8, 16, 32] {
        let w = wht_matrix(n).unwrap();
        let counts: Vec<usize> = (0..n)
            .map(|r| {
                sign_changes(
                    w.as_matrix()
                        .row(r)
                        .iter()
                        .copied()
                        .collect::<Vec<_>>()
                        .as_slice(),
                )
            })
            .collect();
        assert_eq!(counts, (0..n).collect::<Vec<_>>());
    }
}
