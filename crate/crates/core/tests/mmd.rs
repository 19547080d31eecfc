use nalgebra::{DMatrix, SymmetricEigen};
use ratiobench::matrix::Matrix;
use ratiobench::moments::{
    median_heuristic, mmd2_biased, mmd2_unbiased, moment_loss, KernelSpec, RandomFeatureMap, TestStatistic,
};
use ratiobench::prob::{Density, GaussianSpec};
use ratiobench::rng::RngState;

fn gaussian(mean: Vec<f64>, rng: &mut RngState, n: usize) -> Matrix {
    let var = vec![1.0; mean.len()];
    let d: Density = GaussianSpec::new(mean, var).unwrap().into();
    d.sample(n, rng).unwrap().points
}

fn min_eigenvalue(k: &Matrix) -> f64 {
    let m = DMatrix::from_row_slice(k.rows(), k.cols(), k.as_slice());
    SymmetricEigen::new(m).eigenvalues.min()
}

#[test]
fn gram_matrices_are_positive_semidefinite() {
    let mut rng = RngState::new(31);
    let x = gaussian(vec![0.0, 0.0, 0.0], &mut rng, 60);
    let kernels = [
        KernelSpec::rbf(0.3).unwrap(),
        KernelSpec::rbf(2.0).unwrap(),
        KernelSpec::Polynomial { degree: 2, offset: 1.0 },
        KernelSpec::Polynomial { degree: 3, offset: 0.5 },
    ];
    for k in kernels {
        let g = k.gram(&x, &x);
        let scale = g.as_slice().iter().fold(1.0f64, |a, v| a.max(v.abs()));
        assert!(min_eigenvalue(&g) > -1e-8 * scale, "{k}: {}", min_eigenvalue(&g));
    }
}

#[test]
fn random_feature_moments_approximate_rbf_mmd() {
    let mut rng = RngState::new(32);
    let sigma = 1.0;
    let x = gaussian(vec![0.0, 0.0], &mut rng, 400);
    let y = gaussian(vec![1.0, 0.0], &mut rng, 400);
    let exact = mmd2_biased(&KernelSpec::rbf(sigma).unwrap(), &x, &y).unwrap();
    let map = RandomFeatureMap::rbf(2, sigma, 512, &mut rng).unwrap();
    let approx = moment_loss(&TestStatistic::Features(map), &x, &y).unwrap();
    assert!((approx - exact).abs() < 0.1 * exact, "features {approx} vs mmd {exact}");
}

#[test]
fn biased_and_unbiased_estimators_converge_together() {
    let mut rng = RngState::new(33);
    let x = gaussian(vec![0.0, 0.0], &mut rng, 5000);
    let y = gaussian(vec![0.5, 0.0], &mut rng, 5000);
    let k = KernelSpec::rbf(1.0).unwrap();
    let b = mmd2_biased(&k, &x, &y).unwrap();
    let u = mmd2_unbiased(&k, &x, &y).unwrap();
    assert!(b >= u);
    assert!((b - u).abs() < 0.01, "biased {b}, unbiased {u}");
}

#[test]
fn unbiased_estimator_is_centred_under_the_null_for_a_polynomial_kernel() {
    let mut rng = RngState::new(34);
    let k = KernelSpec::Polynomial { degree: 2, offset: 1.0 };
    let vals: Vec<f64> = (0..200)
        .map(|_| {
            let x = gaussian(vec![0.0, 0.0], &mut rng, 100);
            let y = gaussian(vec![0.0, 0.0], &mut rng, 100);
            mmd2_unbiased(&k, &x, &y).unwrap()
        })
        .collect();
    let m = vals.iter().sum::<f64>() / 200.0;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 199.0;
    let se = (var / 200.0).sqrt();
    assert!(m.abs() <= 3.0 * se, "mean {m}, se {se}");
}

#[test]
fn median_heuristic_matches_the_pairwise_distance_median() {
    // For independent x, y ~ N(0, I₂), |x − y|² / 4 is Exp(1), so the
    // distance CDF is 1 − exp(−d²/4). Solve CDF(d) = ½ by bisection.
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 1.0 - (-mid * mid / 4.0).exp() < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    assert!((oracle - 2.0 * 2f64.ln().sqrt()).abs() < 1e-12);

    let mut rng = RngState::new(35);
    let x = gaussian(vec![0.0, 0.0], &mut rng, 1000);
    let y = gaussian(vec![0.0, 0.0], &mut rng, 1000);
    let bw = median_heuristic(&x, &y).unwrap();
    assert!(!bw.degenerate);
    assert!((bw.sigma - oracle).abs() < 0.1 * oracle, "{} vs {oracle}", bw.sigma);
}
