use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use notegpt::autodiff::kernels::matmul;
use notegpt::corpus::generate_synthetic_corpus;
use notegpt::inference::classify_batch;
use notegpt::model::{ModelConfig, ModelParams};
use notegpt::parallel;
use notegpt::tokenizer::Tokenizer;
use notegpt::training::{example_loss, make_finetune_example, LossExtent};

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn desk_model(vocab: usize) -> ModelParams<f32> {
    let cfg = ModelConfig {
        vocab_size: vocab,
        context_len: 128,
        n_layers: 2,
        n_heads: 4,
        d_model: 64,
        d_mlp: 256,
        dropout: 0.0,
        seed: 1,
    };
    ModelParams::init(&cfg).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &(m, k, n) in &[(128, 64, 256), (128, 256, 1261)] {
        let a: Vec<f32> = (0..m * k).map(|i| (i % 7) as f32 * 0.1).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i % 5) as f32 * 0.1).collect();
        for (name, on) in MODES {
            parallel::set_enabled(on);
            group.bench_with_input(BenchmarkId::new(name, format!("{m}x{k}x{n}")), &(), |bench, _| {
                bench.iter(|| matmul(black_box(&a), black_box(&b), m, k, n))
            });
        }
    }
    parallel::set_enabled(true);
    group.finish();
}

fn bench_classify(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(1, 600, 0.5);
    let texts: Vec<&str> = corpus.iter().map(|n| n.text.as_str()).collect();
    let tok = Tokenizer::train(&texts[64..], 300);
    let params = desk_model(tok.vocab_size());
    let batch = &texts[..64];
    let mut group = c.benchmark_group("classify_64_notes");
    group.sample_size(10);
    for (name, on) in MODES {
        parallel::set_enabled(on);
        group.bench_function(name, |bench| {
            bench.iter(|| classify_batch(&params, &tok, black_box(batch), 0.5).unwrap())
        });
    }
    parallel::set_enabled(true);
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(2, 400, 0.5);
    let texts: Vec<&str> = corpus.iter().map(|n| n.text.as_str()).collect();
    let tok = Tokenizer::train(&texts, 300);
    let params = desk_model(tok.vocab_size());
    let ex = make_finetune_example(texts[0], true, &tok, 128, LossExtent::FullSequence);
    let mut group = c.benchmark_group("loss_and_gradients");
    group.sample_size(20);
    for (name, on) in MODES {
        parallel::set_enabled(on);
        group.bench_function(name, |bench| {
            bench.iter(|| example_loss(&params, black_box(&ex), None, true).unwrap())
        });
    }
    parallel::set_enabled(true);
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_classify, bench_train_step);
criterion_main!(benches);
