use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use au2av_bench::{edge_image, wave_tensor};
use au2av_core::autograd::Tensor;
use au2av_core::media::{
    compute_mfcc, frame_audio_windows, images_to_tensor, AudioClip, CANONICAL_WINDOW_MS,
};
use au2av_core::metrics::{cpbd, kid, ssim};
use au2av_core::stage1::encoder::mfcc_batch;
use au2av_core::stage1::trainer::Stage1Config;
use au2av_core::stage1::SpadeGenerator;
use au2av_core::stage2::{Translator, TranslatorConfig};

fn audio(c: &mut Criterion) {
    let samples: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    let clip = AudioClip::new(samples.clone(), 16_000).unwrap();
    c.bench_function("mfcc_200ms_window", |b| {
        b.iter(|| compute_mfcc(black_box(&samples[..3200]), 16_000).unwrap())
    });
    c.bench_function("frame_audio_windows_1s", |b| {
        b.iter(|| frame_audio_windows(black_box(&clip), 25.0, CANONICAL_WINDOW_MS).unwrap())
    });
}

fn convolution(c: &mut Criterion) {
    let x = Tensor::variable(wave_tensor([4, 16, 32, 32]).to_vec(), &[4, 16, 32, 32]).unwrap();
    let w = Tensor::variable(wave_tensor([16, 16, 3, 3]).to_vec(), &[16, 16, 3, 3]).unwrap();
    c.bench_function("conv3x3_16ch_32px_forward", |b| {
        b.iter(|| x.conv2d(black_box(&w), (1, 1), (1, 1)).unwrap())
    });
    c.bench_function("conv3x3_16ch_32px_backward", |b| {
        b.iter(|| {
            x.conv2d(&w, (1, 1), (1, 1))
                .unwrap()
                .sqr()
                .sum_all()
                .unwrap()
                .backward()
                .unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let a = edge_image(64);
    let b = a.resized(32, 32).unwrap().resized(64, 64).unwrap();
    c.bench_function("ssim_64px", |bn| {
        bn.iter(|| ssim(black_box(&a), black_box(&b)).unwrap())
    });
    c.bench_function("cpbd_64px", |bn| bn.iter(|| cpbd(black_box(&a))));
    let feats = |shift: f64| -> Vec<Vec<f64>> {
        (0..100)
            .map(|i| {
                (0..64)
                    .map(|j| ((i * 64 + j) as f64 * 0.13 + shift).sin())
                    .collect()
            })
            .collect()
    };
    let (x, y) = (feats(0.0), feats(0.5));
    c.bench_function("kid_100x100_dim64", |bn| {
        bn.iter(|| kid(black_box(&x), black_box(&y), 0).unwrap())
    });
}

fn networks(c: &mut Criterion) {
    let cfg = Stage1Config::toy(32);
    let g = SpadeGenerator::new(cfg.generator.clone(), 0).unwrap();
    let p = g.store.bind(false);
    let identity = images_to_tensor(&[edge_image(32)]).unwrap();
    let samples: Vec<f64> = (0..3200).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    let clip = AudioClip::new(samples, 16_000).unwrap();
    let windows = frame_audio_windows(&clip, 25.0, CANONICAL_WINDOW_MS)
        .unwrap()
        .windows;
    let mfcc = mfcc_batch(&[&windows[0]]).unwrap();
    c.bench_function("stage1_toy_generator_frame_32px", |b| {
        b.iter(|| g.forward(&p, &identity, &mfcc).unwrap())
    });
    let t = Translator::new(
        TranslatorConfig {
            resolution: 32,
            base_channels: 8,
            residual_blocks: 4,
        },
        0,
    )
    .unwrap();
    c.bench_function("stage2_toy_translate_32px", |b| {
        b.iter(|| t.translate(black_box(&identity)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = audio, convolution, metrics, networks
}
criterion_main!(benches);
