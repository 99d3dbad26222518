//! Sequential versus rayon execution of the data-parallel kernels.
//!
//! With the `parallel` feature disabled both variants run sequentially, so
//! `cargo bench --no-default-features` measures the fallback build.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dpcandle::dpsgd::clip_in_place;
use dpcandle::gaf::{encode_set_with, EncodedSet, Normalization};
use dpcandle::market::{build_dataset, generate::build_dataset_with, GeneratorConfig};
use dpcandle::nn::{batch_gradient, init_params, per_example_sum, Architecture};
use dpcandle::par::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn batch(n_per_class: usize) -> EncodedSet {
    let d = build_dataset(n_per_class, 1, 1, &GeneratorConfig::default()).unwrap();
    encode_set_with(&d.train, Normalization::Joint, Exec::Sequential).unwrap()
}

fn gradients(c: &mut Criterion) {
    let set = batch(16);
    let params = init_params(Architecture::default(), 3);
    let xs: Vec<&[f64]> = (0..set.len()).map(|i| set.input(i)).collect();
    let ys: Vec<usize> = set.labels().iter().map(|l| l.index()).collect();

    let mut g = c.benchmark_group("per_example_clipped_sum_128");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| per_example_sum(&params, &xs, &ys, exec, |v| clip_in_place(v, 1.5)).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("batch_gradient_128");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradient(&params, &xs, &ys, exec))
        });
    }
    g.finish();
}

fn data(c: &mut Criterion) {
    let gen = GeneratorConfig::default();
    let mut g = c.benchmark_group("generate_dataset_8x20");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_dataset_with(20, 1, 5, &gen, exec).unwrap())
        });
    }
    g.finish();

    let windows = build_dataset(100, 1, 5, &gen).unwrap().train;
    let mut g = c.benchmark_group("encode_800_windows");
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| encode_set_with(&windows, Normalization::Joint, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gradients, data
}
criterion_main!(benches);
