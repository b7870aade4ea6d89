//! Compares the data-parallel execution path against its sequential twin on
//! the three fan-out shapes the library actually uses: pooled log-likelihood
//! sums, per-chunk gradient accumulation inside a fit step, and independent
//! sampler chains. Both paths run the exact same closures, so any timing gap
//! is pure scheduling overhead or speedup.

use criterion::{criterion_group, criterion_main, Criterion};

use misvb_core::exec::{map_indexed, map_indexed_seq};
use misvb_core::model::Dataset;
use misvb_core::numeric::rng::{derive_seed, prng};
use misvb_core::scenario::{count, ScenarioSpec};
use rand::Rng;

const CHUNK: usize = 1024;

fn chunked_loglik(data: &Dataset, theta: &[f64], par: bool) -> f64 {
    let model = count::intercept_model();
    let n = data.n();
    let chunks = n.div_ceil(CHUNK);
    let task = |c: usize| {
        let mut acc = 0.0;
        for row in &data.rows[c * CHUNK..((c + 1) * CHUNK).min(n)] {
            acc += model.loglik_row(theta, row);
        }
        acc
    };
    let partial = if par {
        map_indexed(chunks, task)
    } else {
        map_indexed_seq(chunks, task)
    };
    partial.iter().sum()
}

fn pool_loglik(c: &mut Criterion) {
    let data = ScenarioSpec::CountIntercept
        .generate_data(100_000, 11)
        .unwrap();
    let theta = [0.7f64];
    let mut g = c.benchmark_group("pool_loglik_100k");
    g.sample_size(20);
    g.bench_function("parallel", |b| {
        b.iter(|| chunked_loglik(&data, &theta, true))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| chunked_loglik(&data, &theta, false))
    });
    g.finish();
}

fn grad_accumulation(data: &Dataset, theta: &[f64], par: bool) -> Vec<f64> {
    let model = count::intercept_model();
    let n = data.n();
    let chunks = n.div_ceil(CHUNK);
    let task = |c: usize| {
        let mut acc = vec![0.0; 1];
        for row in &data.rows[c * CHUNK..((c + 1) * CHUNK).min(n)] {
            model.loglik_grad_row(theta, row, &mut acc);
        }
        acc
    };
    let partial = if par {
        map_indexed(chunks, task)
    } else {
        map_indexed_seq(chunks, task)
    };
    let mut out = vec![0.0; 1];
    for p in partial {
        out[0] += p[0];
    }
    out
}

fn fit_step_gradient(c: &mut Criterion) {
    let data = ScenarioSpec::CountIntercept
        .generate_data(6_400, 13)
        .unwrap();
    let theta = [0.7f64];
    let mut g = c.benchmark_group("fit_step_gradient_6400");
    g.sample_size(30);
    g.bench_function("parallel", |b| {
        b.iter(|| grad_accumulation(&data, &theta, true))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| grad_accumulation(&data, &theta, false))
    });
    g.finish();
}

/// One random-walk chain on the intercept posterior; returns its mean so the
/// work cannot be optimised away.
fn run_chain(data: &Dataset, seed: u64, steps: usize) -> f64 {
    let model = count::intercept_model();
    let mut rng = prng(seed);
    let mut theta = 0.7 + 0.1 * (rng.random::<f64>() - 0.5);
    let mut lp = model.log_posterior_unnorm(&[theta], data).unwrap();
    let mut sum = 0.0;
    for _ in 0..steps {
        let prop = theta + 0.05 * (rng.random::<f64>() - 0.5);
        let lp_prop = model.log_posterior_unnorm(&[prop], data).unwrap();
        if rng.random::<f64>().ln() < lp_prop - lp {
            theta = prop;
            lp = lp_prop;
        }
        sum += theta;
    }
    sum / steps as f64
}

fn sampler_chains(c: &mut Criterion) {
    let data = ScenarioSpec::CountIntercept.generate_data(400, 17).unwrap();
    let mut g = c.benchmark_group("sampler_chains_4x2000");
    g.sample_size(20);
    g.bench_function("parallel", |b| {
        b.iter(|| map_indexed(4, |i| run_chain(&data, derive_seed(19, &[i as u64]), 2_000)))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| map_indexed_seq(4, |i| run_chain(&data, derive_seed(19, &[i as u64]), 2_000)))
    });
    g.finish();
}

criterion_group!(benches, pool_loglik, fit_step_gradient, sampler_chains);
criterion_main!(benches);
