//! KL divergence against Monte Carlo, GP evidence against a dense LU solve,
//! and the putting game against hand-evaluated strokes.

use rand::Rng;
use trio_core::latent::{kl_diag_gaussian, GaussianBelief};
use trio_core::rng::SeedStream;
use trio_core::tracking::{log_marginal_likelihood, KernelParams, WHITE_NOISE};
use trio_core::verify::{dense_log_marginal_likelihood, kl_monte_carlo, minigolf_table_error, MINIGOLF_CASES};

fn belief(d: usize, rng: &mut impl Rng) -> GaussianBelief {
    let m: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.8)).collect();
    GaussianBelief::new(m, s).unwrap()
}

#[test]
fn kl_matches_monte_carlo_within_three_standard_errors() {
    let mut rng = SeedStream::new(11).rng();
    for i in 0..12 {
        let d = 1 + i % 3;
        let q = belief(d, &mut rng);
        let p = belief(d, &mut rng);
        let exact = kl_diag_gaussian(&q, &p).unwrap();
        let (mc, se) = kl_monte_carlo(&q, &p, 1_000_000, &mut rng).unwrap();
        assert!((exact - mc).abs() < 3.0 * se, "pair {i}: exact {exact} mc {mc} se {se}");
    }
}

#[test]
fn gp_evidence_matches_dense_solve() {
    let mut rng = SeedStream::new(12).rng();
    for n in 1..=20 {
        let c = rng.random_range(0.05..5.0);
        let l = rng.random_range(0.5..30.0);
        let s0 = rng.random_range(1e-6..2.0);
        let inputs: Vec<f64> = (0..n).map(|t| t as f64).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = KernelParams::new(c, l, s0).unwrap();
        let fast = log_marginal_likelihood(&p, &inputs, &targets).unwrap();
        let dense = dense_log_marginal_likelihood(c, l, s0, WHITE_NOISE, &inputs, &targets).unwrap();
        assert!((fast - dense).abs() <= 1e-8 * dense.abs().max(1.0), "n={n}: {fast} vs {dense}");
    }
}

#[test]
fn minigolf_strokes_match_hand_evaluation() {
    assert!(MINIGOLF_CASES.len() >= 20);
    let err = minigolf_table_error();
    assert!(err < 1e-3, "worst relative error {err}");
}

#[test]
fn minigolf_reference_values() {
    let c = trio_core::envs::MinigolfConstants::default();
    assert!((c.deceleration(1.0) - 7.0071).abs() < 1e-4);
    assert!((c.min_speed(1.0, 10.0) - 11.838).abs() < 1e-3);
}
