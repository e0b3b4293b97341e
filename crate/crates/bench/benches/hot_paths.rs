//! Timings for the paths that dominate experiment wall-clock: the encoder
//! forward/backward passes, tokenizer encoding, BPE training, and the
//! power-law fit.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::Rng;

use scalelab_core::model::{backward_mlm, forward, init_params, EncoderConfig};
use scalelab_core::scaling::{fit_power_law, ScaleDimension, ScalePoint};
use scalelab_core::seeds;
use scalelab_core::synth::synth_generate;
use scalelab_core::tokenizer::TokenizerModel;

fn encoder_fixture() -> (EncoderConfig, scalelab_core::model::ParameterSet, Vec<u32>, Vec<bool>) {
    let cfg = EncoderConfig::new(4, 64, 4, 16, 512, 64);
    let params = init_params(&cfg, 17);
    let mut rng = seeds::rng(17, &[]);
    let ids: Vec<u32> = (0..64).map(|_| rng.gen_range(5..512)).collect();
    let pad_mask = vec![true; 64];
    (cfg, params, ids, pad_mask)
}

fn bench_forward(c: &mut Criterion) {
    let (cfg, params, ids, pad_mask) = encoder_fixture();
    c.bench_function("forward 4L-64h seq64", |b| {
        b.iter(|| forward(&cfg, &params, &ids, &pad_mask).unwrap())
    });
}

fn bench_backward(c: &mut Criterion) {
    let (cfg, params, ids, pad_mask) = encoder_fixture();
    let masked: Vec<usize> = (0..64).step_by(7).collect();
    let targets: Vec<u32> = masked.iter().map(|&i| (i as u32 % 500) + 5).collect();
    c.bench_function("backward 4L-64h seq64", |b| {
        b.iter(|| backward_mlm(&cfg, &params, &ids, &pad_mask, &masked, &targets).unwrap())
    });
}

fn bench_tokenizer(c: &mut Criterion) {
    let corpus = synth_generate("expr", 200, 3).unwrap();
    let model = TokenizerModel::train(&corpus, 512).unwrap();
    let text: String = corpus
        .documents
        .iter()
        .take(20)
        .map(|d| d.content.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    c.bench_function("bpe encode 20 docs", |b| {
        b.iter(|| model.encode(&text, false))
    });
    let small = scalelab_core::corpus::Corpus::new(
        corpus.documents[..50].to_vec(),
        "bench",
        3,
    );
    c.bench_function("bpe train vocab 300, 50 docs", |b| {
        b.iter_batched(
            || small.clone(),
            |corpus| TokenizerModel::train(&corpus, 300).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_fit(c: &mut Criterion) {
    let points: Vec<ScalePoint> = (0..8)
        .map(|i| {
            let x = 1e3 * 4f64.powi(i);
            ScalePoint {
                x,
                e: 2.5 * x.powf(-0.07),
                dimension: ScaleDimension::Data,
            }
        })
        .collect();
    c.bench_function("power-law fit 8 points", |b| {
        b.iter(|| fit_power_law(&points).unwrap())
    });
}

criterion_group!(benches, bench_forward, bench_backward, bench_tokenizer, bench_fit);
criterion_main!(benches);
