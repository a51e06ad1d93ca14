use fsmooth::experiment::{benchmark_lgssm, mean_and_variance, replicate_rng};
use fsmooth::filter::{init_particles, run_filter};
use fsmooth::model::simulate;
use fsmooth::oracle::kalman_filter;
use fsmooth::ResamplingPolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn first_observation_likelihood_converges_to_kalman() {
    let model = benchmark_lgssm();
    let y0 = 0.7;
    let exact = kalman_filter(&model, &[y0]).unwrap().log_likelihood.exp();
    let ps = init_particles(&model, y0, 100_000, &mut ChaCha8Rng::seed_from_u64(41)).unwrap();
    let estimate = ps.log_likelihood.exp();
    assert!((estimate / exact - 1.0).abs() < 0.02, "{estimate} vs {exact}");
}

#[test]
fn accumulated_log_likelihood_matches_kalman() {
    let model = benchmark_lgssm();
    let ys = simulate(&model, 200, &mut ChaCha8Rng::seed_from_u64(42)).unwrap().observations;
    let exact = kalman_filter(&model, &ys).unwrap().log_likelihood;
    let estimates: Vec<f64> = (0..20)
        .map(|s| {
            let hist = run_filter(&model, &ys, 5000, &ResamplingPolicy::default(), &mut replicate_rng(43, s)).unwrap();
            hist.last().unwrap().log_likelihood
        })
        .collect();
    let (mean, var) = mean_and_variance(&estimates);
    let se = (var / estimates.len() as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
}
