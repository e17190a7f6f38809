use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgg_core::dataio::{generate_dataset, RunConfig, SyntheticSpec};
use sgg_core::grouping::{partition_predicates, sort_vocabulary};
use sgg_core::numcore::{ParamStore, Tape, Tensor};
use sgg_core::sha::{AttentionConfig, ShaStack};
use sgg_core::train::train;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random(64, 64, &mut rng);
    let b = random(64, 64, &mut rng);
    c.bench_function("matmul_64", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let y = tape.leaf(a.clone()).matmul(tape.leaf(b.clone())).unwrap().sum();
            let mut store = ParamStore::new();
            tape.backward(y, &mut store).unwrap();
        })
    });
}

fn sha_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let cfg = AttentionConfig::new(32, 4, 64).unwrap();
    let stack = ShaStack::new(&mut store, "enc", 4, cfg, &mut rng).unwrap();
    let x = random(5, 32, &mut rng);
    let y = random(5, 32, &mut rng);
    c.bench_function("sha_forward_4x5x32", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            stack
                .forward(&tape, &store, tape.constant(x.clone()), tape.constant(y.clone()))
                .unwrap()
                .value()
        })
    });
}

fn partition(c: &mut Criterion) {
    let raw: Vec<(String, i64)> = (1..=200)
        .map(|r| (format!("p{r}"), (100_000.0 / (r as f64).powf(1.2)) as i64 + 1))
        .collect();
    let vocab = sort_vocabulary(&raw).unwrap();
    c.bench_function("partition_200", |bench| bench.iter(|| partition_predicates(&vocab, 4.0).unwrap()));
}

fn train_step(c: &mut Criterion) {
    let data = generate_dataset(&SyntheticSpec { scenes: 40, ..SyntheticSpec::default() }).unwrap();
    let cfg = RunConfig { steps: 1, ..RunConfig::default() };
    c.bench_function("train_step_batch8", |bench| bench.iter(|| train(&cfg, &data).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, sha_forward, partition, train_step
}
criterion_main!(benches);
