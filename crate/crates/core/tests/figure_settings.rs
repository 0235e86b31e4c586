//! The six benchmark panels and the experiment defaults.

use presgd_core::harness::{figure1_instances, ExperimentConfig, UnlabeledRule};
use presgd_core::precondition::{estimate_covariance, exact_sgd_precond};
use presgd_core::problem::sample_unlabeled;
use presgd_core::tuning::{GridSpec, Method};
use presgd_core::SpectralOperator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn six_panels_cover_two_spectra_and_three_targets() {
    let panels = figure1_instances(&[]).unwrap();
    let ids: Vec<&str> = panels.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c", "d", "e", "f"]);
    for (k, p) in panels.iter().enumerate() {
        let inst = &p.instance;
        assert_eq!(inst.dim(), 200);
        assert_eq!(inst.noise_variance(), 1.0);
        let decay = if k < 3 { 1 } else { 2 };
        let power = [0, 1, 10][k % 3];
        let h = inst.covariance();
        for i in 1..=200usize {
            let l = h.eigenvalues()[i - 1];
            assert!((l - (i as f64).powi(-decay)).abs() <= 1e-15, "{} λ_{i}", p.id);
            let want = (i as f64).powi(-power);
            let got = inst.target()[i - 1];
            assert!((got - want).abs() <= 1e-15 * want.max(1e-300) || got == want, "{} w_{i}", p.id);
        }
    }
}

#[test]
fn defaults_follow_the_benchmark_protocol() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.methods, [Method::Sgd, Method::Ridge, Method::Presgd, Method::PresgdEst]);
    assert_eq!(cfg.unlabeled, UnlabeledRule::EqualToN);
    let grid = GridSpec::default();
    assert_eq!(grid.trials, 10);
    assert_eq!(grid.test_size, 1000);
}

#[test]
fn estimated_covariance_is_the_scaled_gram_matrix() {
    let inst = &figure1_instances(&["d".to_string()]).unwrap()[0].instance;
    let m = 37;
    let batch = sample_unlabeled(inst, m, &mut ChaCha8Rng::seed_from_u64(4));
    let sigma = estimate_covariance(&batch).unwrap();
    let x = batch.design_matrix();
    let direct = x.transpose() * &x / m as f64;
    assert!((sigma.to_dense() - &direct).norm() <= 1e-10 * direct.norm());
}

#[test]
fn exact_preconditioner_eigenvalues() {
    let h = SpectralOperator::from_diagonal(&[1.0, 0.5]).unwrap();
    let g = exact_sgd_precond(&h, 10.0).unwrap();
    let got = g.operator().eigenvalues();
    // (βλ_i + 1)⁻¹ sorted in non-increasing order
    let mut want = [1.0 / 11.0, 1.0 / 6.0];
    want.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() <= 1e-15);
    }
}
