use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gatgan::data::{toy_generator, ToyKind};
use gatgan::layers::{Ctx, GraphAttention, Mode, Orientation};
use gatgan::metrics::{fit_moments, frechet_distance};
use gatgan::tensor::Tape;
use gatgan::train::{Trainer, TrainingConfig};
use gatgan::{GatGanModel, Group, ModelConfig, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let a = Tensor::uniform(&[16, n, n], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[n, n], -1.0, 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let (av, bv) = (tape.leaf(a.clone(), true), tape.leaf(b.clone(), true));
                let y = tape.matmul(av, bv).unwrap();
                let loss = tape.sum_all(y).unwrap();
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn gat_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("gat_forward");
    for (name, o) in [("temporal", Orientation::Temporal), ("spatial", Orientation::Spatial)] {
        for tau in [16, 64] {
            let mut store = ParamStore::new();
            let g = GraphAttention::new(&mut store, Group::Encoder, "g", o, tau, 6, true, &mut rng);
            let x = Tensor::uniform(&[16, tau, 6], -1.0, 1.0, &mut rng);
            group.bench_with_input(BenchmarkId::new(name, tau), &tau, |bench, _| {
                bench.iter(|| {
                    let mut ctx = Ctx::new(&store, Mode::Eval);
                    let xv = ctx.input(x.clone());
                    let y = g.forward(&mut ctx, xv).unwrap();
                    ctx.value(y).len()
                })
            });
        }
    }
    group.finish();
}

fn frechet(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("frechet");
    for d in [16, 64] {
        let a = fit_moments(&Tensor::uniform(&[4 * d, d], -1.0, 1.0, &mut rng)).unwrap();
        let b = fit_moments(&Tensor::uniform(&[4 * d, d], 0.0, 2.0, &mut rng)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |bench, _| {
            bench.iter(|| frechet_distance(&a, &b).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for tau in [16, 64] {
        let data = toy_generator(ToyKind::CoupledSines, 16, tau, 3, 0.01, 0).unwrap().data;
        let mut model = GatGanModel::new(ModelConfig::new(tau, 3)).unwrap();
        let mut trainer = Trainer::new(TrainingConfig::default()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(tau), &tau, |bench, _| {
            bench.iter(|| trainer.train_step(&mut model, &data).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, gat_forward, frechet, train_step);
criterion_main!(benches);
