use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use preclab_bench::{model, prompts};
use preclab_core::exprgen::default_dataset;
use preclab_core::interventions::{dim_contributions, SwapExperiment};
use preclab_core::tinylm::{argmax, TokenId, TrainConfig};
use preclab_core::{Expression, FilterPolicy, Operator, StructureVariant};

fn enumerate(c: &mut Criterion) {
    c.bench_function("enumerate_dataset", |b| b.iter(|| black_box(default_dataset()).len()));
}

fn forward(c: &mut Criterion) {
    let m = model();
    let (_, tokens) = prompts(64);
    let seqs: Vec<&[TokenId]> = tokens.iter().map(Vec::as_slice).collect();
    c.bench_function("forward_batch64", |b| b.iter(|| m.last_logits_batch(black_box(&seqs), &[]).unwrap()));
    c.bench_function("forward_single", |b| b.iter(|| m.forward(black_box(seqs[0]), &[], false).unwrap()));
    c.bench_function("capture_batch64", |b| b.iter(|| m.capture_batch(black_box(&seqs), &[]).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let (data, _) = prompts(64);
    let cfg = TrainConfig {
        steps: 1,
        split_fraction: 1.0,
        warmup_steps: 0,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(20);
    group.bench_function("step_batch64", |b| {
        b.iter_batched(model, |mut m| m.train(&data, &cfg).unwrap(), criterion::BatchSize::LargeInput)
    });
    group.finish();
}

fn swap(c: &mut Criterion) {
    let m = model();
    let e = Expression::build(3, 4, 5, Operator::Add, Operator::Mul, StructureVariant::NoParenNatural, FilterPolicy::default())
        .unwrap();
    let mut exp = SwapExperiment::new(&e).unwrap();
    exp.t_real = argmax(m.forward(&exp.tokens, &[], false).unwrap().last_logits());
    if exp.t_real == exp.t_target {
        exp.t_target = (exp.t_target + 1) % 163;
    }
    let mut group = c.benchmark_group("interventions");
    group.sample_size(10);
    group.bench_function("dim_contributions_d128", |b| b.iter(|| dim_contributions(&m, &exp, 10).unwrap()));
    group.finish();
}

criterion_group!(benches, enumerate, forward, train_step, swap);
criterion_main!(benches);
