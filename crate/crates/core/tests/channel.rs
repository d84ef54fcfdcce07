use num_complex::Complex64;
use otsm_core::channel::*;
use otsm_core::modem::{OtsmConfig, OtsmModem};
use otsm_core::rng::stream_rng;
use otsm_core::sparse::CsrMatrix;
use rand::Rng;
use std::f64::consts::PI;

// Straight-line time-varying convolution of one frame.
fn convolve(s: &[Complex64], paths: &[DelayDopplerPath], m: usize, zp: bool) -> Vec<Complex64> {
    let mn = s.len();
    (0..mn)
        .map(|q| {
            let mut acc = Complex64::default();
            for p in paths {
                let a = p.delay as usize;
                if zp && q % m < a {
                    continue;
                }
                let src = (q + mn - a) % mn;
                acc += p.gain
                    * s[src]
                    * Complex64::from_polar(1.0, 2.0 * PI * p.doppler * src as f64 / mn as f64);
            }
            acc
        })
        .collect()
}

fn random_frame(len: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = stream_rng(seed, 99);
    (0..len).map(|_| sample_cn(&mut rng, 1.0)).collect()
}

#[test]
fn zp_ds_matrix_matches_transmit_chain() {
    for s in 0..10u64 {
        let mut rng = stream_rng(31, s);
        let cfg = OtsmConfig::zp(8, 4, 3, 15e3, 4).unwrap();
        let modem = OtsmModem::new(&cfg).unwrap();
        let paths = sample_paths_uniform(4, 3, 2, s % 2 == 0, &mut rng).unwrap();
        let real = ChannelRealization::new(cfg.clone(), paths.clone(), None, 0.0).unwrap();
        let x = random_frame(cfg.data_symbols(), s);
        let t = modem.modulate(&x).unwrap();
        let via_time = modem
            .receive(&real.time_domain_matrix().unwrap().mul_vec(&t).unwrap())
            .unwrap();
        let via_chain = modem.receive(&convolve(&t, &paths, cfg.m, true)).unwrap();
        let padded = modem.receive(&t).unwrap();
        let via_ds = real.ds_matrix().unwrap().mul_vec(&padded).unwrap();
        for i in 0..cfg.frame_len() {
            assert!((via_time[i] - via_chain[i]).norm() < 1e-10);
            assert!((via_ds[i] - via_chain[i]).norm() < 1e-10);
        }
    }
}

#[test]
fn cp_ds_matrix_matches_circular_chain() {
    let mut rng = stream_rng(32, 0);
    let cfg = OtsmConfig::cp(4, 8, 3, 15e3, 4).unwrap();
    let modem = OtsmModem::new(&cfg).unwrap();
    let paths = sample_paths_uniform(3, 3, 3, true, &mut rng).unwrap();
    let real = ChannelRealization::new(cfg.clone(), paths.clone(), None, 0.0).unwrap();
    let x = random_frame(cfg.frame_len(), 1);
    let t = modem.modulate_padded(&x).unwrap();
    let expect = modem.receive(&convolve(&t, &paths, cfg.m, false)).unwrap();
    let got = real.ds_matrix().unwrap().mul_vec(&x).unwrap();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn zp_ds_matrix_is_block_lower_triangular() {
    let mut rng = stream_rng(33, 0);
    let cfg = OtsmConfig::zp(8, 4, 3, 15e3, 4).unwrap();
    let paths = sample_paths_uniform(5, 3, 2, false, &mut rng).unwrap();
    let h = ChannelRealization::new(cfg.clone(), paths, None, 0.0)
        .unwrap()
        .ds_matrix()
        .unwrap();
    for r in 0..cfg.frame_len() {
        for (c, _) in h.row(r) {
            assert!(c / cfg.n <= r / cfg.n);
        }
    }
}

#[test]
fn single_static_path_is_identity() {
    let cfg = OtsmConfig::zp(4, 4, 1, 15e3, 4).unwrap();
    let path = DelayDopplerPath::new(Complex64::new(1.0, 0.0), 0.0, 0.0);
    let h = ChannelRealization::new(cfg.clone(), vec![path], None, 0.0)
        .unwrap()
        .ds_matrix()
        .unwrap();
    let id = CsrMatrix::identity(cfg.frame_len()).to_dense();
    assert!((h.to_dense() - id).norm() < 1e-12);
}

#[test]
fn eva_doppler_index_for_high_speed_train() {
    // 480 km/h at 16 GHz: ν = 7115.9 Hz; k = ν N / Δf with N = 16, Δf = 60 kHz
    let nu = 480.0 / 3.6 * 16e9 / 299_792_458.0;
    let k = max_doppler_index(480.0, 16e9, 60e3, 16);
    assert!((k - nu * 16.0 / 60e3).abs() < 1e-12);
    assert!((k - 1.8976).abs() < 1e-3);
}

#[test]
fn eva_taps_fit_guard_and_respect_doppler() {
    let cfg = OtsmConfig::zp(16, 16, 4, 60e3, 4).unwrap();
    assert!(eva_delay_bins(&cfg).iter().all(|&b| b <= 3));
    let opts = EvaOptions {
        speed_kmh: 480.0,
        carrier_hz: 16e9,
        integer_doppler: false,
    };
    let mut rng = stream_rng(34, 0);
    let k_max = max_doppler_index(480.0, 16e9, 60e3, 16);
    for _ in 0..50 {
        let p = sample_paths_eva(&opts, &cfg, &mut rng).unwrap();
        assert_eq!(p.len(), 9);
        assert!(p.iter().all(|q| q.doppler.abs() <= k_max + 1e-12));
    }
    let wide = OtsmConfig::zp(64, 16, 4, 60e3, 4).unwrap();
    assert!(sample_paths_eva(&opts, &wide, &mut rng).is_err());
}

#[test]
fn path_gains_have_unit_total_power() {
    let mut rng = stream_rng(35, 0);
    let cfg = OtsmConfig::zp(16, 16, 4, 60e3, 4).unwrap();
    let opts = EvaOptions {
        speed_kmh: 480.0,
        carrier_hz: 16e9,
        integer_doppler: true,
    };
    let draws = 20_000;
    let (mut uni, mut eva) = (0.0, 0.0);
    for _ in 0..draws {
        uni += sample_paths_uniform(4, 3, 3, false, &mut rng)
            .unwrap()
            .iter()
            .map(|p| p.gain.norm_sqr())
            .sum::<f64>();
        eva += sample_paths_eva(&opts, &cfg, &mut rng)
            .unwrap()
            .iter()
            .map(|p| p.gain.norm_sqr())
            .sum::<f64>();
    }
    assert!((uni / draws as f64 - 1.0).abs() < 0.03);
    assert!((eva / draws as f64 - 1.0).abs() < 0.03);
}

#[test]
fn noise_and_csi_errors_have_requested_variance() {
    let cfg = OtsmConfig::zp(16, 16, 2, 15e3, 4).unwrap();
    let path = DelayDopplerPath::new(Complex64::new(0.0, 0.0), 0.0, 0.0);
    let real = ChannelRealization::new(cfg.clone(), vec![path; 4], Some(4.0), 0.1).unwrap();
    let h = CsrMatrix::identity(cfg.frame_len());
    let mut rng = stream_rng(36, 0);
    let zero = vec![Complex64::default(); cfg.frame_len()];
    let (mut noise, mut err, mut n, mut e) = (0.0, 0.0, 0usize, 0usize);
    for _ in 0..200 {
        let out = apply_matrix(&zero, &h, &real, &mut rng).unwrap();
        noise += out.received.iter().map(|z| z.norm_sqr()).sum::<f64>();
        n += out.received.len();
        err += out
            .estimated_gains
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>();
        e += out.estimated_gains.len();
    }
    assert!((noise / n as f64 - 0.25).abs() < 0.01);
    assert!((err / e as f64 - 0.1).abs() < 0.01);
}

#[test]
fn rejects_delays_beyond_guard_and_bad_precision() {
    let cfg = OtsmConfig::zp(8, 4, 2, 15e3, 4).unwrap();
    let far = DelayDopplerPath::new(Complex64::new(1.0, 0.0), 3.0, 0.0);
    assert!(build_time_domain_channel(&[far], &cfg).is_err());
    let frac = DelayDopplerPath::new(Complex64::new(1.0, 0.0), 0.5, 0.0);
    assert!(build_time_domain_channel(&[frac], &cfg).is_err());
    let ok = DelayDopplerPath::new(Complex64::new(1.0, 0.0), 1.0, 0.0);
    assert!(ChannelRealization::new(cfg.clone(), vec![ok], Some(0.0), 0.0).is_err());
    assert!(ChannelRealization::new(cfg, vec![], None, 0.0).is_err());
}

#[test]
fn realization_toml_round_trip() {
    let mut rng = stream_rng(37, 0);
    let cfg = OtsmConfig::zp(8, 4, 3, 15e3, 4).unwrap();
    let paths = sample_paths_uniform(3, 3, 1, rng.gen(), &mut rng).unwrap();
    let real = ChannelRealization::new(cfg, paths, Some(12.5), 0.01).unwrap();
    let back = ChannelRealization::from_toml(&real.to_toml().unwrap()).unwrap();
    assert_eq!(back, real);
}

#[test]
fn distinct_sampler_never_reuses_a_bin() {
    let mut rng = stream_rng(38, 0);
    for _ in 0..200 {
        let p = sample_paths_uniform_distinct(4, 1, 1, &mut rng).unwrap();
        assert_eq!(p[0].delay, 0.0);
        for i in 0..4 {
            for j in 0..i {
                assert!((p[i].delay, p[i].doppler) != (p[j].delay, p[j].doppler));
            }
        }
    }
    assert!(sample_paths_uniform_distinct(5, 1, 1, &mut rng).is_err());
    assert_eq!(
        sample_paths_uniform_distinct(3, 0, 1, &mut rng)
            .unwrap()
            .len(),
        3
    );
}
