//! Parallel vs sequential timings of the row-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ssps_lab::eval::{compute_eer, score_with_representations, ScoredTrials};
use ssps_lab::nncore::{Activation, LayerSpec, Network};
use ssps_lab::parallel::set_force_sequential;
use ssps_lab::ssps::spherical_kmeans;
use ssps_lab::synthgen::{build_corpus, build_trials, CorpusConfig};
use ssps_lab::Matrix;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

const MODES: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(512, 64, &mut rng);
    let b = random_matrix(64, 256, &mut rng);
    let mut g = c.benchmark_group("matmul_512x64x256");
    for (name, seq) in MODES {
        set_force_sequential(seq);
        g.bench_function(name, |bench| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    set_force_sequential(false);
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let encoder = [
        LayerSpec::Dense {
            out: 64,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            out: 64,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            out: 32,
            activation: Activation::Identity,
        },
    ];
    let net = Network::random(32, &encoder, None, &mut rng).unwrap();
    let mut g = c.benchmark_group("encoder_forward_backward");
    for batch in [64usize, 192] {
        let x = random_matrix(batch, 32, &mut rng);
        let dy = random_matrix(batch, 32, &mut rng);
        for (name, seq) in MODES {
            set_force_sequential(seq);
            g.bench_with_input(BenchmarkId::new(name, batch), &batch, |bench, _| {
                bench.iter(|| {
                    let out = net.forward(&x).unwrap();
                    black_box(net.backward(&out.cache, &dy).unwrap())
                })
            });
        }
    }
    set_force_sequential(false);
    g.finish();
}

fn kmeans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = random_matrix(2048, 32, &mut rng);
    let init = points.select_rows(&(0..256).map(|i| i * 8).collect::<Vec<_>>());
    let mut g = c.benchmark_group("spherical_kmeans_2048x32_k256");
    g.sample_size(10);
    for (name, seq) in MODES {
        set_force_sequential(seq);
        g.bench_function(name, |bench| {
            bench.iter(|| black_box(spherical_kmeans(&points, init.clone(), 10).unwrap()))
        });
    }
    set_force_sequential(false);
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let corpus = build_corpus(&CorpusConfig::default()).unwrap();
    let eval = corpus.derive_disjoint(16, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let trials = build_trials(&eval, 2000, 2000, &mut rng).unwrap();
    let reps = random_matrix(eval.len(), 32, &mut rng);
    let mut g = c.benchmark_group("trial_scoring_eer");
    for (name, seq) in MODES {
        set_force_sequential(seq);
        g.bench_function(name, |bench| {
            bench.iter(|| {
                let st: ScoredTrials = score_with_representations(&reps, &trials).unwrap();
                black_box(compute_eer(&st).unwrap())
            })
        });
    }
    set_force_sequential(false);
    g.finish();
}

criterion_group!(benches, matmul, forward_backward, kmeans, scoring);
criterion_main!(benches);
