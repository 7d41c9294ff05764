use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pdbrf_core::operators::{conjugate_prox, prox_factory, ProxFunction};

fn families(n: usize) -> Vec<(&'static str, ProxFunction)> {
    let point: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
    let diag: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 + i as f64 } else { 0.0 }).collect()).collect();
    vec![
        ("l1", ProxFunction::L1 { dim: n, weight: 0.5 }),
        ("sq_dist", ProxFunction::SqDist { point: point.clone(), weight: 2.0 }),
        ("box", ProxFunction::Box { lower: vec![-0.5; n], upper: vec![0.5; n] }),
        ("l2_ball", ProxFunction::L2Ball { center: point.clone(), radius: 1.0 }),
        ("quadratic", ProxFunction::Quadratic { p: diag, b: point }),
    ]
}

fn prox(c: &mut Criterion) {
    for n in [10, 100] {
        let mut group = c.benchmark_group(format!("prox_{n}"));
        let x: Vec<f64> = (0..n).map(|k| (k as f64 * 0.7).cos() * 3.0).collect();
        for (name, f) in families(n) {
            let j = prox_factory(&f).unwrap();
            group.bench_function(BenchmarkId::new("primal", name), |b| b.iter(|| j.resolvent(0.7, black_box(&x)).unwrap()));
            let jc = conjugate_prox(&j);
            group.bench_function(BenchmarkId::new("conjugate", name), |b| b.iter(|| jc.resolvent(0.7, black_box(&x)).unwrap()));
        }
        group.finish();
    }
}

criterion_group!(benches, prox);
criterion_main!(benches);
