use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fsmooth::experiment::benchmark_lgssm;
use fsmooth::filter::run_filter;
use fsmooth::kernel;
use fsmooth::model::simulate;
use fsmooth::smoother::{ffbs_backward, ForwardSmootherState, LgssmBenchmark};
use fsmooth::{Blend, Execution, ParticleSet, ResamplingPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn history(particles: usize, n: usize) -> (Vec<f64>, Vec<ParticleSet>) {
    let model = benchmark_lgssm();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ys = simulate(&model, n, &mut rng).unwrap().observations;
    let hist = run_filter(&model, &ys, particles, &ResamplingPolicy::default(), &mut rng).unwrap();
    (ys, hist)
}

fn fs_update(c: &mut Criterion) {
    let model = benchmark_lgssm();
    let mut group = c.benchmark_group("fs_update");
    for particles in [256usize, 1024, 4096] {
        let (ys, hist) = history(particles, 2);
        let state = ForwardSmootherState::init(&hist[0], &LgssmBenchmark, ys[0]);
        group.throughput(Throughput::Elements((particles * particles) as u64));
        for exec in [Execution::Sequential, Execution::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), particles), &exec, |b, &exec| {
                b.iter(|| {
                    state
                        .update(&hist[0], &hist[1], &model, &LgssmBenchmark, ys[1], Blend::SUM, exec)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn ffbs(c: &mut Criterion) {
    let model = benchmark_lgssm();
    let mut group = c.benchmark_group("ffbs_backward");
    group.sample_size(10);
    let (ys, hist) = history(512, 20);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| ffbs_backward(&hist, &ys, &model, &LgssmBenchmark, false, exec).unwrap())
        });
    }
    group.finish();
}

/// Fused vectorised row against a scalar row built on libm `exp`.
fn kernel_row(c: &mut Criterion) {
    let n = 4096;
    let means: Vec<f64> = (0..n).map(|j| (j as f64 * 0.37).sin() * 0.3).collect();
    let scale: Vec<f64> = (0..n).map(|j| 0.5 + 0.5 * (j as f64 * 0.11).cos().abs()).collect();
    let sq: Vec<f64> = means.iter().map(|m| m * m).collect();
    let mut out = vec![0.0; n];
    let mut group = c.benchmark_group(format!("kernel_row/{}", kernel::simd_level()));
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function("fused", |b| {
        b.iter(|| kernel::gaussian_row_moments(black_box(0.1), &means, &scale, 50.0, &means, &sq, &mut out))
    });
    group.bench_function("libm", |b| {
        b.iter(|| {
            let x = black_box(0.1);
            let mut acc = [0.0; 3];
            for j in 0..n {
                let d = x - means[j];
                let k = scale[j] * (-(d * d) * 50.0).exp();
                out[j] = k;
                acc[0] += k;
                acc[1] += k * means[j];
                acc[2] += k * sq[j];
            }
            acc
        })
    });
    group.finish();
}

criterion_group!(benches, fs_update, ffbs, kernel_row);
criterion_main!(benches);
