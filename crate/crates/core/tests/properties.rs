//! Cross-module properties checked against dense-matrix and hand-written
//! oracles.

use nalgebra::DMatrix;
use presgd_core::bounds::{
    kappa, ridge_k_star, ridge_lower_bound, sgd_lower_bound, sgd_upper_bound, sgd_upper_bound_min, BoundConstants,
    RiskBoundReport, SignalFactor,
};
use presgd_core::precondition::{
    custom_precond, exact_sgd_precond, identity_precond, ridge_transformed_problem, transformed_problem,
};
use presgd_core::problem::{make_power_law_instance, SpectrumMode, TargetMode};
use presgd_core::sgd::{run_sgd, sgd_step, FixedStream, SgdConfig};
use presgd_core::spectral::sym_eigendecompose;
use presgd_core::tuning::{heuristic_config, Method};
use presgd_core::{SpectralOperator, Vector};
use proptest::prelude::*;

fn pd_matrix(entries: &[f64], d: usize, shift: f64) -> DMatrix<f64> {
    let b = DMatrix::from_column_slice(d, d, &entries[..d * d]);
    let a = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * shift;
    (&a + a.transpose()) * 0.5
}

/// `(d, entries of B, shift)` for a PD matrix `BBᵀ/d + shift·I`.
fn pd_parts(max_d: usize) -> impl Strategy<Value = (usize, Vec<f64>, f64)> {
    (1..=max_d).prop_flat_map(|d| (Just(d), prop::collection::vec(-1.0..1.0f64, d * d), 1e-2..1.0f64))
}

fn spectrum(max_d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..0.5f64, 1..=max_d).prop_map(|mut v| {
        v.iter_mut().for_each(|x| *x = 10f64.powf(*x));
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn check_sums(r: &RiskBoundReport) {
    assert!(r.bias >= 0.0 && r.variance >= 0.0);
    assert!(rel(r.total, r.bias + r.variance) <= 1e-12 || r.total == 0.0);
    let terms = r.per_direction.as_ref().expect("breakdown present");
    let b: f64 = terms.iter().map(|t| t.bias).sum();
    let v: f64 = terms.iter().map(|t| t.variance).sum();
    assert!((b - r.bias).abs() <= 1e-12 * r.bias.max(1e-300));
    assert!((v - r.variance).abs() <= 1e-12 * r.variance.max(1e-300));
}

/// Ridge bound from its definition, evaluated on a plain spectrum and
/// eigen-coordinates.
fn ridge_oracle(l: &[f64], c: &[f64], lambda: f64, n: usize, sigma2: f64, b: f64) -> f64 {
    let nf = n as f64;
    let d = l.len();
    let mut k = d;
    for cand in 0..=d {
        let tail: f64 = l[cand..].iter().sum();
        let next = if cand < d { l[cand] } else { 0.0 };
        if b * next <= (lambda + tail) / nf {
            k = cand;
            break;
        }
    }
    let lh = lambda + l[k..].iter().sum::<f64>();
    let head_bias: f64 = (0..k).map(|i| c[i] * c[i] / l[i]).sum::<f64>() * lh * lh / (nf * nf);
    let tail_bias: f64 = (k..d).map(|i| l[i] * c[i] * c[i]).sum();
    let tail_sq: f64 = (k..d).map(|i| l[i] * l[i]).sum();
    head_bias + tail_bias + sigma2 * (k as f64 / nf + nf / (lh * lh) * tail_sq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signal_is_preserved_by_random_preconditioners(
        (d, h_entries, h_shift) in pd_parts(50),
        g_entries in prop::collection::vec(-1.0..1.0f64, 2500),
        g_shift in 1e-2..1.0f64,
        w_raw in prop::collection::vec(-2.0..2.0f64, 50),
    ) {
        let h = sym_eigendecompose(&pd_matrix(&h_entries, d, h_shift)).unwrap();
        let p = custom_precond(sym_eigendecompose(&pd_matrix(&g_entries, d, g_shift)).unwrap()).unwrap();
        let w = Vector::from_column_slice(&w_raw[..d]);
        let base = h.weighted_norm_sq(&w).unwrap();
        let (ht, wt) = transformed_problem(&p, &h, &w).unwrap();
        prop_assert!(rel(ht.weighted_norm_sq(&wt).unwrap(), base) <= 1e-9);
        let (hh, wh) = ridge_transformed_problem(&p, &h, &w).unwrap();
        prop_assert!(rel(hh.weighted_norm_sq(&wh).unwrap(), base) <= 1e-9);
    }

    #[test]
    fn transformed_problem_matches_dense_products(
        (d, h_entries, h_shift) in pd_parts(8),
        g_entries in prop::collection::vec(-1.0..1.0f64, 64),
        g_shift in 1e-2..1.0f64,
        w_raw in prop::collection::vec(-2.0..2.0f64, 8),
    ) {
        let hd = pd_matrix(&h_entries, d, h_shift);
        let gd = pd_matrix(&g_entries, d, g_shift);
        let h = sym_eigendecompose(&hd).unwrap();
        let g = sym_eigendecompose(&gd).unwrap();
        let w = Vector::from_column_slice(&w_raw[..d]);
        let (ht, wt) = transformed_problem(&custom_precond(g.clone()).unwrap(), &h, &w).unwrap();
        // G^{1/2} from nalgebra's own eigensolver, independent of the crate's
        let eig = gd.clone().symmetric_eigen();
        let half = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let want_h = &half * &hd * &half;
        let want_w = half.clone().try_inverse().unwrap() * &w;
        let scale = want_h.norm().max(1.0);
        prop_assert!((ht.to_dense() - want_h).norm() <= 1e-8 * scale);
        prop_assert!((wt - want_w).norm() <= 1e-8 * w.norm().max(1.0) * half.norm().max(1.0));
    }

    #[test]
    fn bound_reports_add_up(
        s in spectrum(60),
        w_raw in prop::collection::vec(-2.0..2.0f64, 60),
        lambda in 1e-6..10.0f64,
        eta_frac in 0.01..1.0f64,
        n in 1usize..5000,
        sigma2 in 0.0..2.0f64,
    ) {
        let d = s.len();
        let h = SpectralOperator::from_diagonal(&s).unwrap();
        let w = Vector::from_column_slice(&w_raw[..d]);
        let eta = eta_frac / s.iter().sum::<f64>();
        let consts = BoundConstants::default();
        check_sums(&ridge_lower_bound(&h, &w, lambda, n, sigma2, &consts).unwrap());
        check_sums(&sgd_upper_bound_min(&h, &w, eta, n, sigma2, SignalFactor::Squared).unwrap());
        check_sums(&sgd_lower_bound(&h, &w, eta, n, sigma2).unwrap());
        let r = ridge_lower_bound(&h, &w, lambda, n, sigma2, &consts).unwrap();
        prop_assert!(r.k_star <= d);
    }

    #[test]
    fn ridge_bound_matches_oracle(
        s in spectrum(80),
        w_raw in prop::collection::vec(-2.0..2.0f64, 80),
        lambda in 0.0..5.0f64,
        n in 1usize..5000,
        sigma2 in 0.0..2.0f64,
    ) {
        let d = s.len();
        let h = SpectralOperator::from_diagonal(&s).unwrap();
        let w = Vector::from_column_slice(&w_raw[..d]);
        let got = ridge_lower_bound(&h, &w, lambda, n, sigma2, &BoundConstants::default()).unwrap().total;
        let want = ridge_oracle(&s, &w_raw[..d], lambda, n, sigma2, 2.0);
        prop_assert!(rel(got, want) <= 1e-12, "{} vs {}", got, want);
    }

    #[test]
    fn k_star_fails_below_and_holds_at_selection(
        s in spectrum(200),
        lambda in 0.0..5.0f64,
        n in 1usize..10000,
    ) {
        let (k, lh) = ridge_k_star(&s, lambda, n, 2.0).unwrap();
        let holds = |j: usize| {
            let next = s.get(j).copied().unwrap_or(0.0);
            2.0 * next <= (lambda + s[j..].iter().sum::<f64>()) / n as f64
        };
        prop_assert!(holds(k));
        prop_assert!((0..k).all(|j| !holds(j)));
        prop_assert!(rel(lh, lambda + s[k..].iter().sum::<f64>()) <= 1e-12 || lh == 0.0);
    }

    #[test]
    fn min_bound_never_exceeds_any_split(
        s in spectrum(12),
        w_raw in prop::collection::vec(-2.0..2.0f64, 12),
        eta_frac in 0.01..1.0f64,
        n in 2usize..3000,
    ) {
        let d = s.len();
        let h = SpectralOperator::from_diagonal(&s).unwrap();
        let w = Vector::from_column_slice(&w_raw[..d]);
        let eta = eta_frac / s.iter().sum::<f64>();
        let best = sgd_upper_bound_min(&h, &w, eta, n, 1.0, SignalFactor::Squared).unwrap().total;
        for k1 in 0..=d {
            for k2 in 0..=d {
                let v = sgd_upper_bound(&h, &w, eta, n, 1.0, k1, k2, SignalFactor::Squared).unwrap().total;
                prop_assert!(best <= v * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn heuristic_step_respects_transformed_trace(
        d in 2usize..120,
        inv2 in any::<bool>(),
        target in 0usize..3,
        n in 10usize..5000,
        log_lambda in -6.0..1.0f64,
    ) {
        let spec = if inv2 { SpectrumMode::Inv2 } else { SpectrumMode::Inv1 };
        let tgt = [TargetMode::Ones, TargetMode::Inv1, TargetMode::Inv10][target].clone();
        let inst = make_power_law_instance(d, &spec, &tgt, 1.0).unwrap();
        let p = heuristic_config(Method::Presgd, &inst, n, 10f64.powf(log_lambda)).unwrap();
        let (eta, beta) = (p.eta.unwrap(), p.beta.unwrap());
        let g = exact_sgd_precond(inst.covariance(), beta).unwrap();
        let (ht, _) = transformed_problem(&g, inst.covariance(), inst.target()).unwrap();
        prop_assert!(eta <= 1.0 / ht.trace() * (1.0 + 1e-12));
    }

    #[test]
    fn preconditioned_trajectory_is_a_change_of_variables(
        (d, g_entries, g_shift) in pd_parts(6),
        xs_raw in prop::collection::vec(-1.5..1.5f64, 6 * 30),
        ys in prop::collection::vec(-1.0..1.0f64, 30),
        w0_raw in prop::collection::vec(-1.0..1.0f64, 6),
    ) {
        let g_op = sym_eigendecompose(&pd_matrix(&g_entries, d, g_shift)).unwrap();
        let g = custom_precond(g_op.clone()).unwrap();
        let half = g_op.power(0.5).unwrap();
        let xs: Vec<Vec<f64>> = xs_raw.chunks(6).map(|c| c[..d].to_vec()).collect();
        let mapped: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| half.apply(&Vector::from_row_slice(x)).unwrap().as_slice().to_vec())
            .collect();
        let peak = mapped.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).fold(1e-3, f64::max);
        let eta = 0.5 / peak;
        let w0 = Vector::from_column_slice(&w0_raw[..d]);
        let v0 = g_op.power(-0.5).unwrap().apply(&w0).unwrap();
        let id = identity_precond(d);
        let (mut w, mut v) = (w0.clone(), v0.clone());
        for t in 0..xs.len() {
            w = sgd_step(&w, &Vector::from_row_slice(&xs[t]), ys[t], &g, eta).unwrap();
            v = sgd_step(&v, &Vector::from_row_slice(&mapped[t]), ys[t], &id, eta).unwrap();
            prop_assert!((half.apply(&v).unwrap() - &w).norm() <= 1e-9 * w.norm().max(1.0));
        }
        let n = xs.len();
        let a = run_sgd(&mut FixedStream::new(xs, ys.clone()).unwrap(), &g, &SgdConfig::new(eta, n).unwrap().with_initial(w0)).unwrap();
        let b = run_sgd(&mut FixedStream::new(mapped, ys).unwrap(), &id, &SgdConfig::new(eta, n).unwrap().with_initial(v0)).unwrap();
        prop_assert!((half.apply(&b.average).unwrap() - &a.average).norm() <= 1e-9 * a.average.norm().max(1.0));
    }
}

#[test]
fn flattening_improves_kappa_on_figure_instances() {
    for spec in [SpectrumMode::Inv1, SpectrumMode::Inv2] {
        let inst = make_power_law_instance(200, &spec, &TargetMode::Ones, 1.0).unwrap();
        let h = inst.covariance();
        for n in [100, 1000] {
            let (k, _) = ridge_k_star(h.eigenvalues(), 0.0, n, 2.0).unwrap();
            let beta = if k == 0 { 0.0 } else { 1.0 / h.eigenvalues()[k - 1] };
            let g = exact_sgd_precond(h, beta).unwrap();
            let (ht, _) = transformed_problem(&g, h, inst.target()).unwrap();
            let (before, after) = (kappa(h, n).unwrap(), kappa(&ht, n).unwrap());
            assert!(after <= before, "{spec:?} N={n}: {after} > {before}");
        }
    }
}
