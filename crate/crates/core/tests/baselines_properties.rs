use dpls_core::baselines::{
    default_path, fit_lasso, fit_lasso_cv, fit_ols, fit_pca_factors, lambda_max, soft_threshold, CvRule,
};
use dpls_core::linalg;
use dpls_core::pls::helland_coefficients;
use dpls_core::seed::rng_for;
use ndarray::{array, Array1, Array2, Axis};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn randn(seed: u64, n: usize, p: usize) -> Array2<f64> {
    let mut rng = rng_for(seed, "baselines-properties");
    Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal))
}

fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).dot(&(a - b)).sqrt() / b.dot(b).sqrt()
}

#[test]
fn ols_on_orthonormal_design_is_projection() {
    let q = linalg::orthonormal_columns(randn(1, 30, 4).view());
    // centered orthonormal columns so the intercept is the mean of y
    let qc = &q - &q.mean_axis(Axis(0)).unwrap();
    let o = linalg::orthonormal_columns(qc.view());
    let y = randn(2, 30, 2);
    let m = fit_ols(o.view(), y.view()).unwrap();
    let expect = o.t().dot(&y);
    assert!((&m.coefficients - &expect).iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn ols_matches_full_rank_krylov_estimator() {
    for seed in 0..10 {
        let x = randn(seed, 60, 5);
        let y = randn(seed + 100, 60, 1);
        let m = fit_ols(x.view(), y.view()).unwrap();
        let (hel, _) = helland_coefficients(x.view(), y.view(), 5).unwrap().raw_coefficients();
        assert!(rel_err(&m.coefficients.column(0).to_owned(), &hel.column(0).to_owned()) <= 1e-6);
    }
}

#[test]
fn ols_residuals_are_orthogonal_and_additive() {
    let x = randn(3, 80, 4);
    let y = randn(4, 80, 1);
    let m = fit_ols(x.view(), y.view()).unwrap();
    let fitted = m.predict(x.view()).unwrap();
    let resid = &y - &fitted;
    assert!(x.t().dot(&resid).iter().all(|v| v.abs() <= 1e-8));
    assert!(resid.sum().abs() <= 1e-8);
    assert!((&(&fitted + &resid) - &y).iter().all(|v| v.abs() <= 1e-14));
    let ym = y.mean().unwrap();
    let r2 = 1.0 - resid.mapv(|v| v * v).sum() / y.mapv(|v| (v - ym).powi(2)).sum();
    assert!((0.0..=1.0).contains(&r2));
}

#[test]
fn rank_deficient_ols_is_flagged() {
    let mut x = randn(5, 20, 3);
    let c = x.column(0).to_owned() * 2.0;
    x.column_mut(2).assign(&c);
    let m = fit_ols(x.view(), randn(6, 20, 1).view()).unwrap();
    assert!(m.singular);
}

#[test]
fn lasso_above_lambda_max_is_zero() {
    let x = randn(7, 100, 6);
    let y = randn(8, 100, 1).column(0).to_owned();
    let lm = lambda_max(x.view(), y.view()).unwrap();
    let m = fit_lasso(x.view(), y.view(), lm * 1.0001).unwrap();
    assert!(m.coefficients.iter().all(|&b| b == 0.0));
    assert!((m.intercept - y.mean().unwrap()).abs() < 1e-12);
}

#[test]
fn unpenalized_lasso_is_ols() {
    let x = randn(9, 200, 5);
    let y = x.dot(&array![1.0, -0.5, 0.0, 2.0, 0.3]) + randn(10, 200, 1).column(0);
    let lasso = fit_lasso(x.view(), y.view(), 0.0).unwrap();
    let ols = fit_ols(x.view(), y.view().insert_axis(Axis(1))).unwrap();
    assert!(rel_err(&lasso.coefficients, &ols.coefficients.column(0).to_owned()) <= 1e-5);
}

#[test]
fn single_predictor_is_soft_thresholded_correlation() {
    // already centered with xᵀx/n = 1, so internal scaling is the identity
    let raw = randn(11, 50, 1).column(0).to_owned();
    let c = &raw - raw.mean().unwrap();
    let x = &c / (c.dot(&c) / 50.0).sqrt();
    let y = &x * 0.7 + randn(12, 50, 1).column(0);
    let yc = &y - y.mean().unwrap();
    for lam in [0.0, 0.1, 0.5, 2.0] {
        let m = fit_lasso(x.view().insert_axis(Axis(1)), y.view(), lam).unwrap();
        let expect = soft_threshold(x.dot(&yc) / 50.0, lam);
        assert!((m.coefficients[0] - expect).abs() <= 1e-10, "{lam}");
    }
}

#[test]
fn cv_lasso_satisfies_kkt_and_uses_default_path() {
    let x = randn(13, 150, 8);
    let beta = array![1.5, 0.0, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0];
    let y = x.dot(&beta) + randn(14, 150, 1).column(0);
    let m = fit_lasso_cv(x.view(), y.view(), None, 5, 3, CvRule::Min).unwrap();
    assert!(m.kkt_violation(x.view(), y.view()) <= 1e-6);
    let cv = m.cv.as_ref().unwrap();
    assert_eq!(cv.lambdas, default_path(x.view(), y.view()).unwrap());
    assert_eq!(cv.lambdas.len(), 50);
    let lm = lambda_max(x.view(), y.view()).unwrap();
    assert!((cv.lambdas[49] - lm * 1e-3).abs() <= 1e-12 * lm);
    let one_se = fit_lasso_cv(x.view(), y.view(), None, 5, 3, CvRule::OneStandardError).unwrap();
    assert!(one_se.lambda >= m.lambda);
    let again = fit_lasso_cv(x.view(), y.view(), None, 5, 3, CvRule::Min).unwrap();
    assert_eq!(m, again);
}

#[test]
fn pca_recovers_rank_one_and_full_panels() {
    let f = randn(15, 12, 1);
    let b = randn(16, 1, 7);
    let panel = f.dot(&b);
    let m = fit_pca_factors(panel.view(), 1).unwrap();
    assert!((&m.reconstruct(1) - &panel).iter().all(|v| v.abs() <= 1e-10));
    let full = randn(17, 6, 9);
    let mf = fit_pca_factors(full.view(), 6).unwrap();
    assert!((&mf.reconstruct(6) - &full).iter().all(|v| v.abs() <= 1e-10));
}

#[test]
fn pca_explained_variance_matches_covariance_eigenvalues() {
    let panel = array![[2.0, 0.0, 1.0], [1.0, 3.0, -1.0], [4.0, 1.0, 0.0]];
    let m = fit_pca_factors(panel.view(), 3).unwrap();
    // eigenvalues of the centered Gram matrix by the characteristic
    // polynomial of a 3×3 symmetric matrix (trigonometric closed form)
    let c = &panel - &panel.mean_axis(Axis(0)).unwrap();
    let a = c.t().dot(&c);
    let p1 = a[[0, 1]].powi(2) + a[[0, 2]].powi(2) + a[[1, 2]].powi(2);
    let tr = a[[0, 0]] + a[[1, 1]] + a[[2, 2]];
    let qm = tr / 3.0;
    let p2 = (a[[0, 0]] - qm).powi(2) + (a[[1, 1]] - qm).powi(2) + (a[[2, 2]] - qm).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let bm = (&a - &(Array2::<f64>::eye(3) * qm)) / p;
    let det = bm[[0, 0]] * (bm[[1, 1]] * bm[[2, 2]] - bm[[1, 2]] * bm[[2, 1]])
        - bm[[0, 1]] * (bm[[1, 0]] * bm[[2, 2]] - bm[[1, 2]] * bm[[2, 0]])
        + bm[[0, 2]] * (bm[[1, 0]] * bm[[2, 1]] - bm[[1, 1]] * bm[[2, 0]]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = qm + 2.0 * p * phi.cos();
    let e3 = qm + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = tr - e1 - e3;
    let total = e1 + e2 + e3;
    for (got, want) in m.explained_variance.iter().zip([e1 / total, e2 / total, e3.max(0.0) / total]) {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pca_error_non_increasing_in_k(seed in 0u64..10_000, t in 3usize..12, n in 3usize..12) {
        let panel = randn(seed, t, n);
        let kmax = t.min(n);
        let m = fit_pca_factors(panel.view(), kmax).unwrap();
        prop_assert!(m.explained_variance.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let mut last = f64::INFINITY;
        for k in 1..=kmax {
            let err = (&m.reconstruct(k) - &panel).mapv(|v| v * v).sum();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
    }

    #[test]
    fn lasso_kkt_holds_along_path(seed in 0u64..10_000, frac in 0.01f64..0.9) {
        let x = randn(seed, 60, 5);
        let y = randn(seed + 1, 60, 1).column(0).to_owned() + x.column(0);
        let lam = frac * lambda_max(x.view(), y.view()).unwrap();
        let m = fit_lasso(x.view(), y.view(), lam).unwrap();
        prop_assert!(m.kkt_violation(x.view(), y.view()) <= 1e-6);
    }
}
