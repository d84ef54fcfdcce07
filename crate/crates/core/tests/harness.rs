use num_complex::Complex64;
use otsm_core::analysis::BoundMode;
use otsm_core::detectors::DetectorKind;
use otsm_core::harness::*;
use otsm_core::modem::Guard;
use otsm_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

fn small_uncoded(kinds: Vec<DetectorKind>) -> SimConfig {
    SimConfig {
        seed: 5,
        frame: FrameSpec {
            m: 8,
            n: 4,
            guard: Guard::Zp(2),
            subcarrier_spacing: 15e3,
            modulation_order: 4,
        },
        channel: ChannelSpec {
            model: ChannelModel::Uniform,
            paths: 3,
            l_max: Some(2),
            k_max: Some(1),
            ..ChannelSpec::default()
        },
        detector: DetectorSpec {
            kinds,
            ..DetectorSpec::default()
        },
        sweep: SweepSpec {
            axis: SnrAxis::Snr,
            points: vec![5.0, 15.0],
            min_frame_errors: 10,
            max_frames: 150,
            batch: 16,
            noiseless: false,
        },
        ..SimConfig::default()
    }
}

fn csv_of(r: &MonteCarloReport) -> String {
    let mut out = Vec::new();
    r.write_csv(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn empty_config_takes_link_defaults() {
    let sc = SimConfig::from_toml("").unwrap();
    assert_eq!((sc.frame.m, sc.frame.n), (16, 16));
    assert_eq!(sc.frame.guard, Guard::Zp(4));
    assert_eq!(sc.frame.subcarrier_spacing, 60e3);
    assert_eq!(sc.frame.modulation_order, 4);
    assert_eq!(sc.channel.model, ChannelModel::Eva);
    assert_eq!((sc.channel.speed_kmh, sc.channel.carrier_hz), (480.0, 16e9));
    assert_eq!(sc.detector.kinds, vec![DetectorKind::VampEm]);
    assert!(sc.coding.is_none());
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let err = SimConfig::from_toml("[frame]\nm = 16\nsubcarier_spacing = 1.0\n").unwrap_err();
    match err {
        Error::Parse { message, .. } => assert!(message.contains("subcarier_spacing"), "{message}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(SimConfig::from_toml("bogus = 1").is_err());
}

#[test]
fn config_validation_catches_bad_values() {
    let mut sc = small_uncoded(vec![DetectorKind::Lmmse]);
    sc.sweep.points = vec![10.0, 5.0];
    assert!(sc.validate().is_err());
    let mut sc = small_uncoded(vec![DetectorKind::Lmmse]);
    sc.channel.l_max = Some(3);
    assert!(sc.validate().is_err());
    let mut sc = small_uncoded(vec![DetectorKind::Ml]);
    sc.coding = Some(CodingSpec::default());
    assert!(sc.validate().is_err());
    let mut sc = small_uncoded(vec![]);
    assert!(sc.validate().is_err());
    sc.detector.kinds = vec![DetectorKind::Amp];
    sc.exit.grid = vec![0.5, 1.0];
    assert!(sc.validate().is_err());
}

#[test]
fn config_toml_round_trip() {
    let mut sc = small_uncoded(vec![DetectorKind::Amp, DetectorKind::VampEm]);
    sc.coding = Some(CodingSpec::default());
    sc.bound.mode = BoundMode::ImperfectCsi { sigma_h2: 0.01 };
    let text = sc.to_toml().unwrap();
    let back = SimConfig::from_toml(&text).unwrap();
    assert_eq!(back, sc);
    assert_eq!(back.to_toml().unwrap(), text);
}

#[test]
fn snr_axes_convert_consistently() {
    let mut sc = SimConfig::default();
    sc.coding = Some(CodingSpec::default());
    sc.sweep.points = vec![4.0];
    // rate 1/2 QPSK: one information bit per symbol
    assert_eq!(sc.snr_pair(0), (4.0, 4.0));
    sc.coding = None;
    let (e, s) = sc.snr_pair(0);
    assert_eq!(e, 4.0);
    assert!((s - (4.0 + 10.0 * 2f64.log10())).abs() < 1e-12);
    assert!((snr_to_ebn0_db(ebn0_to_snr_db(3.3, 0.75, 4), 0.75, 4) - 3.3).abs() < 1e-12);
}

#[test]
fn same_seed_same_csv_regardless_of_threads() {
    let sc = small_uncoded(vec![
        DetectorKind::Lmmse,
        DetectorKind::Amp,
        DetectorKind::VampEm,
    ]);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        csv_of(&pool.install(|| run_ber_sweep(&sc)).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(1));
    let mut other = sc.clone();
    other.seed = 6;
    assert_ne!(csv_of(&run_ber_sweep(&other).unwrap()), one);
}

#[test]
fn noiseless_runs_are_error_free() {
    let mut sc = small_uncoded(vec![DetectorKind::Lmmse, DetectorKind::VampEm]);
    sc.sweep.noiseless = true;
    sc.sweep.points = vec![0.0];
    sc.sweep.max_frames = 40;
    let r = run_ber_sweep(&sc).unwrap();
    for p in &r.points {
        assert_eq!(p.frames, 40);
        assert_eq!(p.bit_errors, 0, "{:?}", p.detector);
    }
}

#[test]
fn stopping_rule_is_exact() {
    let mut sc = small_uncoded(vec![DetectorKind::Lmmse]);
    sc.sweep.points = vec![0.0, 40.0];
    sc.sweep.min_frame_errors = 7;
    sc.sweep.max_frames = 100;
    let r = run_ber_sweep(&sc).unwrap();
    let low = &r.points[0];
    assert_eq!(low.frame_errors, 7);
    assert!(low.frames < 100);
    let high = &r.points[1];
    assert_eq!(high.frames, 100);
    assert!(high.frame_errors < 7);
}

#[test]
fn counters_reproduce_reported_ber() {
    let r = run_ber_sweep(&small_uncoded(vec![
        DetectorKind::Amp,
        DetectorKind::VampEm,
    ]))
    .unwrap();
    let text = csv_of(&r);
    let mut rows = text.lines();
    let head: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = |name: &str| head.iter().position(|h| *h == name).unwrap();
    for line in rows {
        let f: Vec<&str> = line.split(',').collect();
        let bits: f64 = f[col("bits")].parse().unwrap();
        let errs: f64 = f[col("bit_errors")].parse().unwrap();
        let ber: f64 = f[col("ber")].parse().unwrap();
        assert!((ber - errs / bits).abs() <= 1e-15 + 1e-12 * ber);
        let ci: f64 = f[col("ci95")].parse().unwrap();
        let p = errs / bits;
        assert!((ci - 1.96 * (p * (1.0 - p) / bits).sqrt()).abs() <= 1e-12);
    }
    for p in &r.points {
        assert_eq!(p.bits, p.frames * 48);
        assert!(p.frame_errors <= p.frames && p.bit_errors >= p.frame_errors);
    }
}

#[test]
fn report_files_are_written() {
    let mut sc = small_uncoded(vec![DetectorKind::VampEm]);
    sc.sweep.max_frames = 20;
    let r = run_ber_sweep(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ber.csv");
    r.save(&path).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join("ber.manifest.toml")).unwrap();
    assert!(manifest.contains(&version_string()));
    assert!(manifest.contains("seed = 5"));
    assert!(manifest.contains("wall_time_s"));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv_of(&r));
    let back: MonteCarloReport = toml::from_str(&manifest).unwrap();
    assert_eq!(back.points.len(), r.points.len());
}

#[test]
fn bound_from_config_is_monotone_and_reduces() {
    let mut sc = SimConfig {
        frame: FrameSpec {
            m: 2,
            n: 2,
            guard: Guard::Cp(1),
            subcarrier_spacing: 15e3,
            modulation_order: 2,
        },
        channel: ChannelSpec {
            model: ChannelModel::Uniform,
            paths: 2,
            l_max: Some(1),
            k_max: Some(1),
            ..ChannelSpec::default()
        },
        ..SimConfig::default()
    };
    sc.sweep.axis = SnrAxis::Snr;
    sc.sweep.points = (0..7).map(|i| 5.0 * i as f64).collect();
    sc.bound.draws = 16;
    let ray = run_bound(&sc).unwrap();
    assert!(ray.bound.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(ray.snr_db, sc.sweep.points);
    sc.bound.mode = BoundMode::ImperfectCsi { sigma_h2: 0.0 };
    let csi = run_bound(&sc).unwrap();
    for (a, b) in csi.bound.iter().zip(&ray.bound) {
        assert!((a / b - 1.0).abs() < 1e-10);
    }
}

// Straight-line BPSK link over a 2x2 CP frame: own transform, own channel,
// exhaustive ML. Returns (bit errors, bits).
fn reference_ml_ber(snr_db: f64, frames: usize, seed: u64) -> (u64, u64) {
    let (m, n) = (2usize, 2usize);
    let mn = m * n;
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let w = [[r2, r2], [r2, -r2]];
    let modulate = |x: &[Complex64]| {
        let mut s = vec![Complex64::default(); mn];
        for d in 0..m {
            for t in 0..n {
                s[t * m + d] = (0..n).map(|k| x[d * n + k] * w[t][k]).sum();
            }
        }
        s
    };
    let demodulate = |r: &[Complex64]| {
        let mut y = vec![Complex64::default(); mn];
        for d in 0..m {
            for k in 0..n {
                y[d * n + k] = (0..n).map(|t| r[t * m + d] * w[k][t]).sum();
            }
        }
        y
    };
    let cn = |rng: &mut ChaCha8Rng, var: f64| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        Complex64::new(a, b) * (var / 2.0).sqrt()
    };
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = 0u64;
    for _ in 0..frames {
        let paths: Vec<(usize, f64, Complex64)> = (0..2)
            .map(|i| {
                let g = cn(&mut rng, 0.5);
                let delay = if i == 0 { 0 } else { 1 };
                let dop = rng.gen_range(-1i64..=1) as f64;
                (delay, dop, g)
            })
            .collect();
        let channel = |s: &[Complex64]| -> Vec<Complex64> {
            (0..mn)
                .map(|q| {
                    paths
                        .iter()
                        .map(|&(a, k, g)| {
                            let src = (q + mn - a) % mn;
                            g * s[src]
                                * Complex64::from_polar(1.0, 2.0 * PI * k * src as f64 / mn as f64)
                        })
                        .sum()
                })
                .collect()
        };
        let word = |bits: usize| -> Vec<Complex64> {
            (0..mn)
                .map(|i| Complex64::new(if bits >> i & 1 == 0 { 1.0 } else { -1.0 }, 0.0))
                .collect()
        };
        let sent: usize = rng.gen_range(0..1 << mn);
        let mut r = channel(&modulate(&word(sent)));
        for v in r.iter_mut() {
            *v += cn(&mut rng, noise_var);
        }
        let y = demodulate(&r);
        let best = (0..1usize << mn)
            .min_by(|&a, &b| {
                let da: f64 = demodulate(&channel(&modulate(&word(a))))
                    .iter()
                    .zip(&y)
                    .map(|(p, q)| (p - q).norm_sqr())
                    .sum();
                let db: f64 = demodulate(&channel(&modulate(&word(b))))
                    .iter()
                    .zip(&y)
                    .map(|(p, q)| (p - q).norm_sqr())
                    .sum();
                da.total_cmp(&db)
            })
            .unwrap();
        errors += (best ^ sent).count_ones() as u64;
    }
    (errors, (frames * mn) as u64)
}

#[test]
fn tiny_bpsk_ml_matches_independent_script() {
    let frames = 40000;
    let points = vec![0.0, 5.0, 10.0];
    let sc = SimConfig {
        seed: 77,
        frame: FrameSpec {
            m: 2,
            n: 2,
            guard: Guard::Cp(1),
            subcarrier_spacing: 15e3,
            modulation_order: 2,
        },
        channel: ChannelSpec {
            model: ChannelModel::Uniform,
            paths: 2,
            l_max: Some(1),
            k_max: Some(1),
            ..ChannelSpec::default()
        },
        detector: DetectorSpec {
            kinds: vec![DetectorKind::Ml],
            ..DetectorSpec::default()
        },
        sweep: SweepSpec {
            axis: SnrAxis::Snr,
            points: points.clone(),
            min_frame_errors: u64::MAX,
            max_frames: frames as u64,
            batch: 256,
            noiseless: false,
        },
        ..SimConfig::default()
    };
    let r = run_ber_sweep(&sc).unwrap();
    for (i, snr) in points.iter().enumerate() {
        let p = &r.points[i];
        let (e, b) = reference_ml_ber(*snr, frames, 1000 + i as u64);
        let (p1, p2) = (p.ber, e as f64 / b as f64);
        let se = (p1 * (1.0 - p1) / p.bits as f64 + p2 * (1.0 - p2) / b as f64).sqrt();
        assert!(
            (p1 - p2).abs() <= 2.0 * se,
            "{snr} dB: harness {p1}, script {p2}, se {se}"
        );
    }
}
