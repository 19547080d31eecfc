//! f-divergences through their variational (Fenchel-dual) form.
//!
//! For convex `f` with conjugate `f†(t) = sup_u (u t − f(u))`,
//!
//! ```text
//! D_f[p ‖ q] = E_q[f(p/q)] ≥ sup_t E_p[t(x)] − E_q[f†(t(x))]
//! ```
//!
//! with the optimum at `t* = f′(r*)`. Writing `t = f′(r)` gives the ratio
//! loss `E_p[−f′(r)] + E_q[f†(f′(r))]` and the generator loss
//! `E_q[−f†(f′(r))]`.
//!
//! | spec          | f(u)                          | f′(u)            | f†(t)              | t domain |
//! |---------------|-------------------------------|------------------|--------------------|----------|
//! | KL            | u log u                       | 1 + log u        | e^(t−1)            | ℝ        |
//! | ReverseKL     | −log u                        | −1/u             | −1 − log(−t)       | t < 0    |
//! | GAN           | u log u − (u+1) log(u+1)      | log(u/(u+1))     | −log(1 − e^t)      | t < 0    |
//! | PearsonChi2   | (u − 1)²                      | 2(u − 1)         | t²/4 + t           | t ≥ −2   |
//! | Squared       | ½(u − 1)²                     | u − 1            | t²/2 + t           | t ≥ −1   |
//!
//! `Squared` is not a classical named divergence; it is the bridge that
//! makes the Bregman / least-squares ratio fitting correspondence
//! executable. The GAN `f` is unnormalised: `f(1) = −log 4`, so its
//! divergence is `2·JS − log 4`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{mean, require_nonempty, require_positive, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FDivSpec {
    KL,
    ReverseKL,
    GAN,
    PearsonChi2,
    Squared,
}

/// Interval of valid conjugate arguments `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjDomain {
    pub lo: f64,
    pub lo_inclusive: bool,
    pub hi: f64,
    pub hi_inclusive: bool,
}

impl ConjDomain {
    const REAL: ConjDomain = ConjDomain {
        lo: f64::NEG_INFINITY,
        lo_inclusive: false,
        hi: f64::INFINITY,
        hi_inclusive: false,
    };

    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_inclusive { t >= self.lo } else { t > self.lo };
        let below = if self.hi_inclusive { t <= self.hi } else { t < self.hi };
        above && below && t.is_finite()
    }
}

impl fmt::Display for ConjDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_inclusive { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_inclusive { ']' } else { ')' }
        )
    }
}

impl FDivSpec {
    pub const ALL: [FDivSpec; 5] = [
        FDivSpec::KL,
        FDivSpec::ReverseKL,
        FDivSpec::GAN,
        FDivSpec::PearsonChi2,
        FDivSpec::Squared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FDivSpec::KL => "kl",
            FDivSpec::ReverseKL => "reverse_kl",
            FDivSpec::GAN => "gan",
            FDivSpec::PearsonChi2 => "pearson_chi2",
            FDivSpec::Squared => "squared",
        }
    }

    pub fn f(self, u: f64) -> f64 {
        match self {
            FDivSpec::KL => xlogx(u),
            FDivSpec::ReverseKL => -u.ln(),
            FDivSpec::GAN => xlogx(u) - xlogx(u + 1.0),
            FDivSpec::PearsonChi2 => (u - 1.0).powi(2),
            FDivSpec::Squared => 0.5 * (u - 1.0).powi(2),
        }
    }

    pub fn f_prime(self, u: f64) -> f64 {
        match self {
            FDivSpec::KL => 1.0 + u.ln(),
            FDivSpec::ReverseKL => -1.0 / u,
            FDivSpec::GAN => -(1.0 / u).ln_1p(),
            FDivSpec::PearsonChi2 => 2.0 * (u - 1.0),
            FDivSpec::Squared => u - 1.0,
        }
    }

    /// Fenchel conjugate `f†(t)`; only meaningful inside [`Self::conj_domain`].
    pub fn f_conj(self, t: f64) -> f64 {
        match self {
            FDivSpec::KL => (t - 1.0).exp(),
            FDivSpec::ReverseKL => -1.0 - (-t).ln(),
            FDivSpec::GAN => -(-t.exp_m1()).ln(),
            FDivSpec::PearsonChi2 => 0.25 * t * t + t,
            FDivSpec::Squared => 0.5 * t * t + t,
        }
    }

    pub fn conj_domain(self) -> ConjDomain {
        let below_zero = ConjDomain {
            hi: 0.0,
            ..ConjDomain::REAL
        };
        match self {
            FDivSpec::KL => ConjDomain::REAL,
            FDivSpec::ReverseKL | FDivSpec::GAN => below_zero,
            FDivSpec::PearsonChi2 => ConjDomain {
                lo: -2.0,
                lo_inclusive: true,
                ..ConjDomain::REAL
            },
            FDivSpec::Squared => ConjDomain {
                lo: -1.0,
                lo_inclusive: true,
                ..ConjDomain::REAL
            },
        }
    }

    pub fn check_domain(self, t: &[f64], what: &str) -> Result<()> {
        let dom = self.conj_domain();
        match t.iter().position(|&v| !dom.contains(v)) {
            Some(i) => Err(Error::Domain(format!(
                "{}: {what}[{i}] = {} outside conjugate domain {dom}",
                self.name(),
                t[i]
            ))),
            None => Ok(()),
        }
    }

    /// Element-wise `f(u)` on the tape.
    pub fn graph_f(self, g: &mut Graph, u: Var) -> Result<Var> {
        match self {
            FDivSpec::KL => graph_xlogx(g, u),
            FDivSpec::ReverseKL => {
                let l = g.log(u)?;
                g.neg(l)
            }
            FDivSpec::GAN => {
                let a = graph_xlogx(g, u)?;
                let u1 = g.offset(u, 1.0)?;
                let b = graph_xlogx(g, u1)?;
                g.sub(a, b)
            }
            FDivSpec::PearsonChi2 => {
                let d = g.offset(u, -1.0)?;
                g.square(d)
            }
            FDivSpec::Squared => {
                let d = g.offset(u, -1.0)?;
                let s = g.square(d)?;
                g.scale(s, 0.5)
            }
        }
    }

    /// Element-wise `f′(u)` on the tape.
    pub fn graph_f_prime(self, g: &mut Graph, u: Var) -> Result<Var> {
        match self {
            FDivSpec::KL => {
                let l = g.log(u)?;
                g.offset(l, 1.0)
            }
            FDivSpec::ReverseKL => {
                let one = g.scalar(-1.0);
                g.div(one, u)
            }
            FDivSpec::GAN => {
                let lu = g.log(u)?;
                let u1 = g.offset(u, 1.0)?;
                let lu1 = g.log(u1)?;
                g.sub(lu, lu1)
            }
            FDivSpec::PearsonChi2 => {
                let d = g.offset(u, -1.0)?;
                g.scale(d, 2.0)
            }
            FDivSpec::Squared => g.offset(u, -1.0),
        }
    }

    /// Element-wise `f†(t)` on the tape; `t` outside the conjugate domain is
    /// a domain error.
    pub fn graph_f_conj(self, g: &mut Graph, t: Var) -> Result<Var> {
        self.check_domain(g.value(t).as_slice(), "t")?;
        match self {
            FDivSpec::KL => {
                let s = g.offset(t, -1.0)?;
                g.exp(s)
            }
            FDivSpec::ReverseKL => {
                let n = g.neg(t)?;
                let l = g.log(n)?;
                g.rsub(-1.0, l)
            }
            FDivSpec::GAN => {
                let e = g.exp(t)?;
                let c = g.rsub(1.0, e)?;
                let l = g.log(c)?;
                g.neg(l)
            }
            FDivSpec::PearsonChi2 => {
                let s = g.square(t)?;
                let s = g.scale(s, 0.25)?;
                g.add(s, t)
            }
            FDivSpec::Squared => {
                let s = g.square(t)?;
                let s = g.scale(s, 0.5)?;
                g.add(s, t)
            }
        }
    }
}

impl fmt::Display for FDivSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FDivSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FDivSpec::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown f-divergence `{s}`")))
    }
}

fn xlogx(u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u * u.ln()
    }
}

fn graph_xlogx(g: &mut Graph, u: Var) -> Result<Var> {
    let l = g.log(u)?;
    g.mul(u, l)
}

fn map(values: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    values.iter().map(|&v| f(v)).collect()
}

/// `mean(t_real) − mean(f†(t_gen))`, a lower bound on `D_f[p ‖ q]`.
pub fn variational_bound(spec: FDivSpec, t_real: &[f64], t_gen: &[f64]) -> Result<f64> {
    require_nonempty(t_real, "t_real")?;
    require_nonempty(t_gen, "t_gen")?;
    spec.check_domain(t_real, "t_real")?;
    spec.check_domain(t_gen, "t_gen")?;
    Ok(mean(t_real) - mean(&map(t_gen, |t| spec.f_conj(t))))
}

/// `t* = f′(r*)`, element-wise.
pub fn optimal_t(spec: FDivSpec, r_star: &[f64]) -> Result<Vec<f64>> {
    require_positive(r_star, "r_star")?;
    Ok(map(r_star, |r| spec.f_prime(r)))
}

/// Ratio loss `mean(−f′(r_real)) + mean(f†(f′(r_gen)))`.
pub fn fdiv_ratio_loss(spec: FDivSpec, r_real: &[f64], r_gen: &[f64]) -> Result<f64> {
    require_positive(r_real, "r_real")?;
    require_positive(r_gen, "r_gen")?;
    let real = mean(&map(r_real, |r| -spec.f_prime(r)));
    let gen = mean(&map(r_gen, |r| spec.f_conj(spec.f_prime(r))));
    Ok(real + gen)
}

/// Generator loss `mean(−f†(f′(r_gen)))`.
pub fn fdiv_generator_loss(spec: FDivSpec, r_gen: &[f64]) -> Result<f64> {
    require_positive(r_gen, "r_gen")?;
    Ok(mean(&map(r_gen, |r| -spec.f_conj(spec.f_prime(r)))))
}

/// `max |f†(f′(r)) − (r f′(r) − f(r))|` over `r_grid`.
pub fn conjugate_identity_check(spec: FDivSpec, r_grid: &[f64]) -> Result<f64> {
    require_positive(r_grid, "r_grid")?;
    Ok(r_grid
        .iter()
        .map(|&r| {
            let fp = spec.f_prime(r);
            (spec.f_conj(fp) - (r * fp - spec.f(r))).abs()
        })
        .fold(0.0, f64::max))
}

/// Tape version of [`fdiv_ratio_loss`] on ratio nodes.
pub fn fdiv_ratio_loss_graph(g: &mut Graph, spec: FDivSpec, r_real: Var, r_gen: Var) -> Result<Var> {
    let tp = spec.graph_f_prime(g, r_real)?;
    let tp = g.mean(tp)?;
    let tq = spec.graph_f_prime(g, r_gen)?;
    let cq = spec.graph_f_conj(g, tq)?;
    let cq = g.mean(cq)?;
    g.sub(cq, tp)
}

/// Tape version of [`fdiv_generator_loss`].
pub fn fdiv_generator_loss_graph(g: &mut Graph, spec: FDivSpec, r_gen: Var) -> Result<Var> {
    let t = spec.graph_f_prime(g, r_gen)?;
    let c = spec.graph_f_conj(g, t)?;
    let m = g.mean(c)?;
    g.neg(m)
}

/// `Σ_i q_i f(p_i / q_i)` on a discrete support.
pub fn fdiv_discrete(spec: FDivSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    require_positive(q, "q")?;
    Ok(p.iter().zip(q).map(|(&pi, &qi)| qi * spec.f(pi / qi)).sum())
}

/// `n` points log-spaced over `[lo, hi]`, endpoints included.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::rng::RngState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn f_vanishes_at_one() {
        for spec in FDivSpec::ALL {
            let expected = if spec == FDivSpec::GAN { -(4f64.ln()) } else { 0.0 };
            assert_abs_diff_eq!(spec.f(1.0), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn f_is_convex_on_grid() {
        let grid = logspace(1e-3, 1e3, 400);
        for spec in FDivSpec::ALL {
            for w in grid.windows(2) {
                let (a, b) = (w[0], w[1]);
                let mid = spec.f(0.5 * (a + b));
                let chord = 0.5 * (spec.f(a) + spec.f(b));
                assert!(mid <= chord + 1e-12 * chord.abs().max(1.0), "{spec} at {a},{b}");
            }
        }
    }

    #[test]
    fn optimal_t_values() {
        assert_eq!(optimal_t(FDivSpec::KL, &[1.0]).unwrap(), vec![1.0]);
        assert_abs_diff_eq!(optimal_t(FDivSpec::GAN, &[1.0]).unwrap()[0], -LN_2, epsilon = 1e-15);
        assert_eq!(optimal_t(FDivSpec::PearsonChi2, &[2.0]).unwrap(), vec![2.0]);
        assert!(optimal_t(FDivSpec::KL, &[0.0]).is_err());
    }

    #[test]
    fn conjugate_identity_points() {
        assert_eq!(conjugate_identity_check(FDivSpec::KL, &[1.0]).unwrap(), 0.0);
        assert_eq!(FDivSpec::PearsonChi2.f_conj(2.0), 3.0);
        assert_eq!(conjugate_identity_check(FDivSpec::PearsonChi2, &[2.0]).unwrap(), 0.0);
        let grid = logspace(1e-3, 1e3, 1000);
        for spec in FDivSpec::ALL {
            assert!(conjugate_identity_check(spec, &grid).unwrap() < 1e-9, "{spec}");
        }
    }

    #[test]
    fn conjugate_is_a_supremum() {
        // f†(t) ≥ u t − f(u) for every u, with equality at u = (f′)⁻¹(t).
        let us = logspace(1e-3, 1e3, 300);
        for spec in FDivSpec::ALL {
            for &r in &[0.1, 0.7, 1.0, 3.0, 20.0] {
                let t = spec.f_prime(r);
                let sup = us.iter().map(|&u| u * t - spec.f(u)).fold(f64::NEG_INFINITY, f64::max);
                assert!(spec.f_conj(t) >= sup - 1e-9, "{spec} r={r}");
            }
        }
    }

    #[test]
    fn ratio_loss_at_one() {
        assert_abs_diff_eq!(fdiv_ratio_loss(FDivSpec::KL, &[1.0; 3], &[1.0; 3]).unwrap(), 0.0, epsilon = 1e-15);
        assert!(fdiv_ratio_loss(FDivSpec::KL, &[1.0, -1.0], &[1.0]).is_err());
    }

    #[test]
    fn generator_loss_at_one() {
        assert_abs_diff_eq!(fdiv_generator_loss(FDivSpec::KL, &[1.0; 4]).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(fdiv_generator_loss(FDivSpec::GAN, &[1.0; 4]).unwrap(), -LN_2, epsilon = 1e-15);
        for spec in FDivSpec::ALL {
            let expected = -(spec.f_prime(1.0) - spec.f(1.0));
            assert_abs_diff_eq!(fdiv_generator_loss(spec, &[1.0]).unwrap(), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn bound_at_identity_is_f_of_one() {
        for spec in FDivSpec::ALL {
            let t = [spec.f_prime(1.0); 5];
            assert_abs_diff_eq!(variational_bound(spec, &t, &t).unwrap(), spec.f(1.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn domain_violations_error() {
        let err = variational_bound(FDivSpec::GAN, &[0.1], &[0.5]).unwrap_err();
        assert!(err.to_string().contains("gan"), "{err}");
        assert!(variational_bound(FDivSpec::ReverseKL, &[-1.0], &[0.0]).is_err());
        assert!(variational_bound(FDivSpec::PearsonChi2, &[0.0], &[-2.5]).is_err());
        let mut g = Graph::new();
        let t = g.constant(Matrix::column(&[0.5]));
        assert!(FDivSpec::GAN.graph_f_conj(&mut g, t).is_err());
    }

    #[test]
    fn graph_forms_match_scalar_forms() {
        let mut rng = RngState::new(2);
        let r: Vec<f64> = (0..40).map(|_| rng.uniform_range(0.05, 5.0)).collect();
        for spec in FDivSpec::ALL {
            let mut g = Graph::new();
            let u = g.constant(Matrix::column(&r));
            let f = spec.graph_f(&mut g, u).unwrap();
            let fp = spec.graph_f_prime(&mut g, u).unwrap();
            let fc = spec.graph_f_conj(&mut g, fp).unwrap();
            for (i, &ri) in r.iter().enumerate() {
                assert_abs_diff_eq!(g.value(f).as_slice()[i], spec.f(ri), epsilon = 1e-12);
                assert_abs_diff_eq!(g.value(fp).as_slice()[i], spec.f_prime(ri), epsilon = 1e-12);
                assert_abs_diff_eq!(g.value(fc).as_slice()[i], spec.f_conj(spec.f_prime(ri)), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn names_roundtrip() {
        for s in FDivSpec::ALL {
            assert_eq!(s.name().parse::<FDivSpec>().unwrap(), s);
        }
        assert!("js".parse::<FDivSpec>().is_err());
    }
}
