use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use otsm_core::channel::{
    apply_matrix, build_ds_channel_cp, sample_paths_eva, sample_paths_uniform, ChannelRealization,
    EvaOptions,
};
use otsm_core::coded::LdpcCode;
use otsm_core::detectors::{
    amp_detect, lmmse_detect, ml_detect, vamp_em_detect, AmpOptions, VampOptions,
};
use otsm_core::linalg::LinearSystem;
use otsm_core::modem::map_bits;
use otsm_core::rng::stream_rng;
use otsm_core::transforms::WalshTransform;
use otsm_core::{Complex64, OtsmConfig, OtsmModem};
use rand::Rng;

struct Frame {
    c: otsm_core::Constellation,
    y: Vec<Complex64>,
    sys: LinearSystem,
}

fn eva_frame(snr_db: f64) -> Frame {
    let cfg = OtsmConfig::zp(16, 16, 4, 60e3, 4).unwrap();
    let c = cfg.constellation();
    let modem = OtsmModem::new(&cfg).unwrap();
    let mut rng = stream_rng(7, 0);
    let opts = EvaOptions {
        speed_kmh: 480.0,
        carrier_hz: 16e9,
        integer_doppler: true,
    };
    let paths = sample_paths_eva(&opts, &cfg, &mut rng).unwrap();
    let bits: Vec<u8> = (0..cfg.data_symbols() * 2)
        .map(|_| rng.gen_range(0..2))
        .collect();
    let gamma = 10f64.powf(snr_db / 10.0);
    let real = ChannelRealization::new(cfg.clone(), paths, Some(gamma), 0.0).unwrap();
    let s = modem.modulate(&map_bits(&bits, &c).unwrap()).unwrap();
    let out = apply_matrix(&s, &real.time_domain_matrix().unwrap(), &real, &mut rng).unwrap();
    let y = modem.receive(&out.received).unwrap();
    let sys = LinearSystem::new(
        real.ds_matrix()
            .unwrap()
            .to_dense_columns(cfg.data_symbols()),
    );
    Frame { c, y, sys }
}

fn wht(cr: &mut Criterion) {
    for n in [16usize, 64] {
        let w = WalshTransform::new(n).unwrap();
        let mut rng = stream_rng(1, n as u64);
        let data: Vec<Complex64> = (0..n * n)
            .map(|_| Complex64::new(rng.gen(), rng.gen()))
            .collect();
        cr.bench_function(&format!("wht_blocks_{n}x{n}"), |b| {
            b.iter_batched_ref(
                || data.clone(),
                |d| w.apply_blocks(black_box(d)),
                BatchSize::SmallInput,
            )
        });
    }
}

fn detectors(cr: &mut Criterion) {
    let f = eva_frame(15.0);
    let gamma = 10f64.powf(1.5);
    let mut g = cr.benchmark_group("detect_eva_16x16");
    g.sample_size(20);
    g.bench_function("lmmse", |b| {
        b.iter(|| lmmse_detect(black_box(&f.y), f.sys.h(), gamma, &f.c).unwrap())
    });
    g.bench_function("amp", |b| {
        b.iter(|| {
            amp_detect(
                black_box(&f.y),
                &f.sys,
                gamma,
                &f.c,
                &AmpOptions::default(),
                None,
            )
        })
    });
    g.bench_function("vamp_em", |b| {
        b.iter(|| {
            vamp_em_detect(
                black_box(&f.y),
                &f.sys,
                &f.c,
                &VampOptions::default(),
                None,
                None,
            )
            .unwrap()
        })
    });
    g.finish();

    // ML on the smallest frame it can search.
    let cfg = OtsmConfig::cp(2, 2, 1, 3.75e3, 4).unwrap();
    let c = cfg.constellation();
    let mut rng = stream_rng(8, 0);
    let paths = sample_paths_uniform(3, 1, 1, false, &mut rng).unwrap();
    let h = build_ds_channel_cp(&paths, &cfg).unwrap().h_bar;
    let y: Vec<Complex64> = (0..4).map(|i| c.point(i % 4)).collect();
    cr.bench_function("ml_qpsk_2x2", |b| {
        b.iter(|| ml_detect(black_box(&y), &h, &c, 1e7).unwrap())
    });
}

fn ldpc(cr: &mut Criterion) {
    let code = LdpcCode::builtin(384, 1, 2).unwrap();
    let mut rng = stream_rng(9, 0);
    let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2)).collect();
    let cw = code.encode(&info).unwrap();
    let llr: Vec<f64> = cw
        .iter()
        .map(|&b| {
            let s = if b == 0 { 1.0 } else { -1.0 };
            2.0 * s + rng.gen_range(-2.5..2.5)
        })
        .collect();
    cr.bench_function("ldpc_decode_384_20it", |b| {
        b.iter(|| code.decode(black_box(&llr), 20).unwrap())
    });
    cr.bench_function("ldpc_encode_384", |b| {
        b.iter(|| code.encode(black_box(&info)).unwrap())
    });
}

criterion_group!(benches, wht, detectors, ldpc);
criterion_main!(benches);
