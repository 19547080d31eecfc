//! Moment matching and kernel maximum mean discrepancy.
//!
//! `moment_loss` compares mean test statistics `‖E_p[s(x)] − E_q[s(x)]‖²`.
//! With a kernel `k`, the RKHS version is the squared MMD:
//!
//! ```text
//! MMD²(X, Y) = mean k(X, X) + mean k(Y, Y) − 2 mean k(X, Y)
//! ```
//!
//! The biased estimator keeps the Gram diagonals (nonnegative, used in
//! training). The unbiased one drops them (may go negative, used for
//! evaluation). Gram matrices are exact `O(n²)`; rough batch-size guidance
//! for the biased training loss on `d = 2` data:
//!
//! | batch | Gram entries per step | notes                           |
//! |-------|-----------------------|---------------------------------|
//! | 64    | ~12k                  | noisy gradients                 |
//! | 256   | ~200k                 | desk default                    |
//! | 1024  | ~3M                   | several times slower than CPE   |
//! | 5000  | ~75M                  | evaluation only                 |

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

/// Floor applied by [`median_heuristic`].
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Random Fourier features approximating an rbf kernel of bandwidth `σ`:
/// `φ(x) = √(2/D) cos(ωᵀx + b)`, `ω ~ N(0, σ⁻² I)`, `b ~ U(0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    omega: Matrix,
    bias: Matrix,
}

impl RandomFeatureMap {
    pub fn rbf(dim: usize, sigma: f64, features: usize, rng: &mut RngState) -> Result<Self> {
        if !(sigma > 0.0) || features == 0 || dim == 0 {
            return Err(Error::Usage("random features need σ > 0, dim ≥ 1, D ≥ 1".into()));
        }
        let omega = (0..dim * features).map(|_| rng.normal() / sigma).collect();
        let bias = (0..features)
            .map(|_| rng.uniform_range(0.0, 2.0 * std::f64::consts::PI))
            .collect();
        Ok(Self {
            omega: Matrix::from_vec(dim, features, omega)?,
            bias: Matrix::from_vec(1, features, bias)?,
        })
    }

    pub fn features(&self) -> usize {
        self.omega.cols()
    }
}

/// Test statistic `s(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestStatistic {
    /// Per-coordinate powers `x_j, x_j², …, x_j^order`.
    RawMoments { order: usize },
    /// A fixed feature map.
    Features(RandomFeatureMap),
}

impl TestStatistic {
    pub fn output_dim(&self, data_dim: usize) -> usize {
        match self {
            TestStatistic::RawMoments { order } => data_dim * order,
            TestStatistic::Features(m) => m.features(),
        }
    }

    /// `s` applied row-wise on the tape: `n × d → n × output_dim`.
    pub fn graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            TestStatistic::RawMoments { order } => {
                if *order == 0 {
                    return Err(Error::Usage("raw moment order must be >= 1".into()));
                }
                // Column blocks [x, x², …] concatenated through a selector matmul.
                let (n, d) = g.value(x).shape();
                let mut acc: Option<Var> = None;
                let mut power = x;
                for p in 0..*order {
                    if p > 0 {
                        power = g.mul(power, x)?;
                    }
                    let mut sel = Matrix::zeros(d, d * order);
                    for j in 0..d {
                        sel.set(j, p * d + j, 1.0);
                    }
                    let sel = g.constant(sel);
                    let placed = g.matmul(power, sel)?;
                    acc = Some(match acc {
                        Some(a) => g.add(a, placed)?,
                        None => placed,
                    });
                }
                debug_assert_eq!(g.value(acc.unwrap()).shape(), (n, d * order));
                Ok(acc.expect("order >= 1"))
            }
            TestStatistic::Features(m) => {
                let w = g.constant(m.omega.clone());
                let b = g.constant(m.bias.clone());
                let z = g.matmul(x, w)?;
                let z = g.add(z, b)?;
                let c = g.cos(z)?;
                g.scale(c, (2.0 / m.features() as f64).sqrt())
            }
        }
    }

    pub fn eval(&self, x: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let s = self.graph(&mut g, xv)?;
        Ok(g.value(s).clone())
    }
}

/// Positive semi-definite kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Rbf { sigma: f64 },
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(KernelSpec::Rbf { sigma })
        } else {
            Err(Error::Usage(format!("rbf bandwidth must be > 0, got {sigma}")))
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }

    pub fn gram(&self, x: &Matrix, y: &Matrix) -> Matrix {
        let mut k = Matrix::zeros(x.rows(), y.rows());
        for (i, xi) in x.iter_rows().enumerate() {
            for (j, yj) in y.iter_rows().enumerate() {
                k.set(i, j, self.eval(xi, yj));
            }
        }
        k
    }

    /// Gram matrix on the tape.
    pub fn graph_gram(&self, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        let yt = g.transpose(y)?;
        let dot = g.matmul(x, yt)?;
        match *self {
            KernelSpec::Rbf { sigma } => {
                let xx = g.square(x)?;
                let xx = g.row_sum(xx)?;
                let yy = g.square(y)?;
                let yy = g.row_sum(yy)?;
                let yy = g.transpose(yy)?;
                let cross = g.scale(dot, -2.0)?;
                let d2 = g.add(cross, xx)?;
                let d2 = g.add(d2, yy)?;
                let e = g.scale(d2, -1.0 / (2.0 * sigma * sigma))?;
                g.exp(e)
            }
            KernelSpec::Polynomial { degree, offset } => {
                let base = g.offset(dot, offset)?;
                let mut acc = g.scalar(1.0);
                for _ in 0..degree {
                    acc = g.mul(acc, base)?;
                }
                Ok(acc)
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Rbf { sigma } => write!(f, "rbf:{sigma}"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset}"),
        }
    }
}

/// Kernel as configured: either fixed, or an rbf whose bandwidth comes from
/// the median heuristic once at startup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    RbfMedian,
    Fixed(KernelSpec),
}

impl KernelChoice {
    pub fn resolve(&self, x: &Matrix, y: &Matrix) -> Result<KernelSpec> {
        match self {
            KernelChoice::Fixed(k) => Ok(*k),
            KernelChoice::RbfMedian => KernelSpec::rbf(median_heuristic(x, y)?.sigma),
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelChoice::RbfMedian => f.write_str("rbf:median"),
            KernelChoice::Fixed(k) => k.fmt(f),
        }
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Usage(format!("bad kernel `{s}`; expected rbf:<sigma|median> or poly:<degree>:<offset>"));
        match parts.as_slice() {
            ["rbf", "median"] => Ok(KernelChoice::RbfMedian),
            ["rbf", sigma] => Ok(KernelChoice::Fixed(KernelSpec::rbf(sigma.parse().map_err(|_| bad())?)?)),
            ["poly", degree, offset] => Ok(KernelChoice::Fixed(KernelSpec::Polynomial {
                degree: degree.parse().map_err(|_| bad())?,
                offset: offset.parse().map_err(|_| bad())?,
            })),
            _ => Err(bad()),
        }
    }
}

fn check_dims(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Usage("batches must be non-empty".into()));
    }
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    Ok(())
}

/// `‖mean s(X_p) − mean s(X_gen)‖²`.
pub fn moment_loss(s: &TestStatistic, x_p: &Matrix, x_gen: &Matrix) -> Result<f64> {
    check_dims(x_p, x_gen)?;
    let a = s.eval(x_p)?.col_means();
    let b = s.eval(x_gen)?.col_means();
    Ok(a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum())
}

pub fn moment_loss_graph(g: &mut Graph, s: &TestStatistic, x_p: Var, x_gen: Var) -> Result<Var> {
    let sp = s.graph(g, x_p)?;
    let sp = g.col_mean(sp)?;
    let sq = s.graph(g, x_gen)?;
    let sq = g.col_mean(sq)?;
    let d = g.sub(sp, sq)?;
    let d = g.square(d)?;
    g.sum(d)
}

fn gram_sum(k: &KernelSpec, x: &Matrix, y: &Matrix, skip_diagonal: bool) -> f64 {
    let mut acc = 0.0;
    for (i, xi) in x.iter_rows().enumerate() {
        for (j, yj) in y.iter_rows().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            acc += k.eval(xi, yj);
        }
    }
    acc
}

/// Biased MMD² with full Gram means, diagonals included.
pub fn mmd2_biased(k: &KernelSpec, x: &Matrix, y: &Matrix) -> Result<f64> {
    check_dims(x, y)?;
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let v = gram_sum(k, x, x, false) / (n * n) + gram_sum(k, y, y, false) / (m * m)
        - 2.0 * gram_sum(k, x, y, false) / (n * m);
    // Exact zero for identical inputs; rounding can leave −1e-17.
    Ok(if x == y { 0.0 } else { v })
}

pub fn mmd2_biased_graph(g: &mut Graph, k: &KernelSpec, x: Var, y: Var) -> Result<Var> {
    let kxx = k.graph_gram(g, x, x)?;
    let kxx = g.mean(kxx)?;
    let kyy = k.graph_gram(g, y, y)?;
    let kyy = g.mean(kyy)?;
    let kxy = k.graph_gram(g, x, y)?;
    let kxy = g.mean(kxy)?;
    let kxy = g.scale(kxy, -2.0)?;
    let s = g.add(kxx, kyy)?;
    g.add(s, kxy)
}

/// Unbiased MMD²: within-set means exclude the diagonal.
pub fn mmd2_unbiased(k: &KernelSpec, x: &Matrix, y: &Matrix) -> Result<f64> {
    check_dims(x, y)?;
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::Usage("unbiased MMD needs at least 2 rows per batch".into()));
    }
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    Ok(gram_sum(k, x, x, true) / (n * (n - 1.0)) + gram_sum(k, y, y, true) / (m * (m - 1.0))
        - 2.0 * gram_sum(k, x, y, false) / (n * m))
}

/// Bandwidth from [`median_heuristic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub sigma: f64,
    /// Set when every pooled point coincides and the floor was returned.
    pub degenerate: bool,
}

/// Median pairwise Euclidean distance of the pooled sample, floored at
/// [`MIN_BANDWIDTH`].
pub fn median_heuristic(x: &Matrix, y: &Matrix) -> Result<Bandwidth> {
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    let pooled: Vec<&[f64]> = x.iter_rows().chain(y.iter_rows()).collect();
    if pooled.len() < 2 {
        return Err(Error::Usage("median heuristic needs at least 2 pooled points".into()));
    }
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let d2: f64 = pooled[i].iter().zip(pooled[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        *dists.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let upper = *dists.select_nth_unstable_by(mid, f64::total_cmp).1;
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(if median < MIN_BANDWIDTH {
        Bandwidth {
            sigma: MIN_BANDWIDTH,
            degenerate: true,
        }
    } else {
        Bandwidth {
            sigma: median,
            degenerate: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random(rng: &mut RngState, n: usize, d: usize) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn moment_loss_cases() {
        let mut rng = RngState::new(1);
        let x = random(&mut rng, 30, 2);
        let s = TestStatistic::RawMoments { order: 2 };
        assert_eq!(moment_loss(&s, &x, &x).unwrap(), 0.0);
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let id = TestStatistic::RawMoments { order: 1 };
        assert_abs_diff_eq!(moment_loss(&id, &a, &b).unwrap(), 1.0, epsilon = 1e-15);
        assert!(moment_loss(&id, &a, &random(&mut rng, 3, 3)).is_err());
    }

    #[test]
    fn raw_moments_layout() {
        let x = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let s = TestStatistic::RawMoments { order: 3 }.eval(&x).unwrap();
        assert_eq!(s.as_slice(), &[2.0, 3.0, 4.0, 9.0, 8.0, 27.0]);
    }

    #[test]
    fn matched_low_moments_hide_higher_ones() {
        // ±1 and {−√2, 0, 0, √2} share mean 0 and variance 1 but differ in
        // the fourth moment.
        let a = Matrix::column(&[-1.0, 1.0, -1.0, 1.0]);
        let r2 = 2f64.sqrt();
        let b = Matrix::column(&[-r2, 0.0, 0.0, r2]);
        let k2 = TestStatistic::RawMoments { order: 2 };
        assert_abs_diff_eq!(moment_loss(&k2, &a, &b).unwrap(), 0.0, epsilon = 1e-15);
        let k4 = TestStatistic::RawMoments { order: 4 };
        assert!(moment_loss(&k4, &a, &b).unwrap() > 0.1);
    }

    #[test]
    fn mmd_biased_properties() {
        let mut rng = RngState::new(2);
        let x = random(&mut rng, 20, 2);
        let k = KernelSpec::rbf(1.3).unwrap();
        assert_eq!(mmd2_biased(&k, &x, &x).unwrap(), 0.0);
        let y = random(&mut rng, 25, 2);
        let v = mmd2_biased(&k, &x, &y).unwrap();
        assert!(v > 0.0);
        let rev: Vec<usize> = (0..20).rev().collect();
        let perm = x.select_rows(&rev);
        assert_abs_diff_eq!(mmd2_biased(&k, &perm, &y).unwrap(), v, epsilon = 1e-14);
    }

    #[test]
    fn mmd_singletons() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![2.0, -1.0]]).unwrap();
        let sigma: f64 = 1.5;
        let expected = 2.0 * (1.0 - (-8.0 / (2.0 * sigma * sigma)).exp());
        let got = mmd2_biased(&KernelSpec::rbf(sigma).unwrap(), &x, &y).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-15);
    }

    #[test]
    fn mmd_distinguishes_small_multisets() {
        // Exhaustive over 2-point multisets drawn from {0, 1, 2}.
        let k = KernelSpec::rbf(1.0).unwrap();
        let sets: Vec<[f64; 2]> = vec![[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [1.0, 1.0], [1.0, 2.0], [2.0, 2.0]];
        for a in &sets {
            for b in &sets {
                let v = mmd2_biased(&k, &Matrix::column(a), &Matrix::column(b)).unwrap();
                if a == b {
                    assert!(v.abs() < 1e-15);
                } else {
                    assert!(v > 1e-6, "{a:?} {b:?} {v}");
                }
            }
        }
    }

    #[test]
    fn unbiased_self_comparison_is_nonpositive() {
        let mut rng = RngState::new(4);
        let k = KernelSpec::rbf(1.0).unwrap();
        for _ in 0..20 {
            let x = random(&mut rng, 15, 2);
            assert!(mmd2_unbiased(&k, &x, &x).unwrap() <= 0.0);
        }
        assert!(mmd2_unbiased(&k, &random(&mut rng, 1, 2), &random(&mut rng, 5, 2)).is_err());
    }

    #[test]
    fn graph_mmd_matches_direct() {
        let mut rng = RngState::new(5);
        let x = random(&mut rng, 12, 2);
        let y = random(&mut rng, 9, 2);
        for k in [KernelSpec::rbf(0.8).unwrap(), KernelSpec::Polynomial { degree: 2, offset: 1.0 }] {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let yv = g.constant(y.clone());
            let m = mmd2_biased_graph(&mut g, &k, xv, yv).unwrap();
            assert_abs_diff_eq!(g.scalar_value(m).unwrap(), mmd2_biased(&k, &x, &y).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn median_heuristic_cases() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(median_heuristic(&a, &b).unwrap().sigma, 2.0);
        let mut rng = RngState::new(6);
        let x = random(&mut rng, 40, 2);
        let y = random(&mut rng, 30, 2);
        let s1 = median_heuristic(&x, &y).unwrap().sigma;
        let c = 3.5;
        let s2 = median_heuristic(&x.map(|v| c * v), &y.map(|v| c * v)).unwrap().sigma;
        assert_abs_diff_eq!(s2, c * s1, epsilon = 1e-12);
        let same = Matrix::filled(5, 2, 1.0);
        let bw = median_heuristic(&same, &same).unwrap();
        assert!(bw.degenerate);
        assert_eq!(bw.sigma, MIN_BANDWIDTH);
        assert!(median_heuristic(&a, &Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn kernel_parsing() {
        assert_eq!("rbf:median".parse::<KernelChoice>().unwrap(), KernelChoice::RbfMedian);
        assert_eq!(
            "rbf:0.5".parse::<KernelChoice>().unwrap(),
            KernelChoice::Fixed(KernelSpec::Rbf { sigma: 0.5 })
        );
        assert_eq!(
            "poly:3:1".parse::<KernelChoice>().unwrap().to_string(),
            "poly:3:1"
        );
        assert!("rbf:-1".parse::<KernelChoice>().is_err());
        assert!("laplace:1".parse::<KernelChoice>().is_err());
    }
}
