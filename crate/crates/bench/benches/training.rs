use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use neurosr::losses::{loss_and_gradient, LossKind, LossSettings};
use neurosr::optimizer::{train, BudgetCounter, TrainSettings};
use neurosr::{generate_problem, MasterTopology, ProblemName, Subtopology};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gradient(c: &mut Criterion) {
    let problem = generate_problem(ProblemName::Resistors, 0).unwrap();
    let data = problem.training_data();
    let master = Arc::new(MasterTopology::build(problem.master.spec(2)).unwrap());
    let sub = Subtopology::init(master.clone(), &mut ChaCha8Rng::seed_from_u64(1));
    let settings = LossSettings::default();
    let mut grad = vec![0.0; master.n_params()];
    let mut group = c.benchmark_group("gradient");
    for kind in [LossKind::Fit, LossKind::Constrained, LossKind::Regularized] {
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| {
                grad.iter_mut().for_each(|g| *g = 0.0);
                black_box(loss_and_gradient(&sub, kind, &data, &settings, &mut grad).unwrap())
            })
        });
    }
    group.finish();
}

fn adam_batch(c: &mut Criterion) {
    let problem = generate_problem(ProblemName::Magic, 0).unwrap();
    let data = problem.training_data();
    let master = Arc::new(MasterTopology::build(problem.master.spec(1)).unwrap());
    let start = Subtopology::init(master, &mut ChaCha8Rng::seed_from_u64(2));
    let settings = TrainSettings::default();
    c.bench_function("train_10_steps_magic", |b| {
        b.iter(|| {
            let mut sub = start.clone();
            let mut budget = BudgetCounter::new(10);
            black_box(train(&mut sub, LossKind::Regularized, 10, &data, &mut budget, &settings))
        })
    });
}

criterion_group!(benches, gradient, adam_batch);
criterion_main!(benches);
