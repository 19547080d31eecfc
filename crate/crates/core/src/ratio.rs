//! Direct density-ratio fitting.
//!
//! Least-squares importance fitting (LSIF), the KL importance estimation
//! procedure (KLIEP) and the general Bregman ratio-matching family. For a
//! convex `f`, the Bregman divergence between the true ratio `r*` and an
//! estimate `r` under `q` decomposes as
//!
//! ```text
//! B_f(r* ‖ r) = E_q[r f′(r) − f(r)] − E_p[f′(r)] + D_f[p ‖ q]
//! ```
//!
//! so the first two terms form the ratio loss. It coincides with the
//! f-divergence ratio loss because `f†(f′(r)) = r f′(r) − f(r)`.
//!
//! The Bregman generator loss `E_q[r f′(r)]` is only valid under the
//! near-optimal-ratio approximation `p ≈ r q`; see
//! [`RatioFamily::generator_needs_near_optimal_ratio`].

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{mean, require_nonempty, require_positive, Error, Result};
use crate::fdiv::FDivSpec;
use crate::models::{Head, RatioNet};

/// Ratio-fitting objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RatioFamily {
    Lsif,
    Kliep,
    Bregman(FDivSpec),
}

impl RatioFamily {
    /// Whether a generator loss can be derived from this family. KLIEP keeps
    /// an `E_p[log q]` term that is unavailable for implicit models, so it
    /// is a ratio loss only.
    pub fn generator_loss_supported(self) -> bool {
        !matches!(self, RatioFamily::Kliep)
    }

    /// Whether the generator loss assumes `p ≈ r_φ q_θ`.
    pub fn generator_needs_near_optimal_ratio(self) -> bool {
        matches!(self, RatioFamily::Bregman(_))
    }
}

impl fmt::Display for RatioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioFamily::Lsif => f.write_str("lsif"),
            RatioFamily::Kliep => f.write_str("kliep"),
            RatioFamily::Bregman(spec) => write!(f, "bregman:{spec}"),
        }
    }
}

impl FromStr for RatioFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsif" => Ok(RatioFamily::Lsif),
            "kliep" => Ok(RatioFamily::Kliep),
            _ => match s.strip_prefix("bregman:") {
                Some(f) => Ok(RatioFamily::Bregman(f.parse()?)),
                None => Err(Error::Usage(format!("unknown ratio family `{s}`"))),
            },
        }
    }
}

/// A ratio network with a positive head, paired with the family it is fit by.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub net: RatioNet,
    pub family: RatioFamily,
}

impl RatioEstimate {
    pub fn new(net: RatioNet, family: RatioFamily) -> Result<Self> {
        if net.head != Head::Positive {
            return Err(Error::Usage(format!(
                "ratio matching needs a positive head, got {:?}",
                net.head
            )));
        }
        Ok(Self { net, family })
    }
}

/// LSIF loss `½·mean(r_gen²) − mean(r_real)`.
pub fn lsif_loss(r_real: &[f64], r_gen: &[f64]) -> Result<f64> {
    require_nonempty(r_real, "r_real")?;
    require_nonempty(r_gen, "r_gen")?;
    if let Some(r) = r_real.iter().chain(r_gen).find(|r| !(**r >= 0.0)) {
        return Err(Error::Domain(format!("ratio {r} is negative")));
    }
    let sq: Vec<f64> = r_gen.iter().map(|r| r * r).collect();
    Ok(0.5 * mean(&sq) - mean(r_real))
}

/// KLIEP loss `mean(−log r_real) + mean(r_gen − 1)`.
pub fn kliep_loss(r_real: &[f64], r_gen: &[f64]) -> Result<f64> {
    require_positive(r_real, "r_real")?;
    require_positive(r_gen, "r_gen")?;
    let logs: Vec<f64> = r_real.iter().map(|r| -r.ln()).collect();
    Ok(mean(&logs) + mean(r_gen) - 1.0)
}

/// Bregman ratio loss `mean(r_gen f′(r_gen) − f(r_gen)) − mean(f′(r_real))`.
pub fn bregman_ratio_loss(spec: FDivSpec, r_real: &[f64], r_gen: &[f64]) -> Result<f64> {
    require_positive(r_real, "r_real")?;
    require_positive(r_gen, "r_gen")?;
    let gen: Vec<f64> = r_gen.iter().map(|&r| r * spec.f_prime(r) - spec.f(r)).collect();
    let real: Vec<f64> = r_real.iter().map(|&r| spec.f_prime(r)).collect();
    Ok(mean(&gen) - mean(&real))
}

/// Bregman generator loss `mean(r_gen f′(r_gen))`.
pub fn bregman_generator_loss(spec: FDivSpec, r_gen: &[f64]) -> Result<f64> {
    require_positive(r_gen, "r_gen")?;
    let v: Vec<f64> = r_gen.iter().map(|&r| r * spec.f_prime(r)).collect();
    Ok(mean(&v))
}

/// `Σ_i w_i (f(r*_i) − f(r̂_i) − f′(r̂_i)(r*_i − r̂_i))` on a discrete support
/// with `q`-probabilities `weights`.
pub fn bregman_divergence_direct(spec: FDivSpec, r_star: &[f64], r_hat: &[f64], weights: &[f64]) -> Result<f64> {
    if r_star.len() != r_hat.len() || r_star.len() != weights.len() {
        return Err(Error::Dimension {
            expected: r_star.len(),
            got: r_hat.len().min(weights.len()),
        });
    }
    require_positive(r_star, "r_star")?;
    require_positive(r_hat, "r_hat")?;
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Usage(format!("weights must be a probability vector, sum = {total}")));
    }
    Ok(r_star
        .iter()
        .zip(r_hat)
        .zip(weights)
        .map(|((&a, &b), &w)| w * (spec.f(a) - spec.f(b) - spec.f_prime(b) * (a - b)))
        .sum())
}

pub fn lsif_loss_graph(g: &mut Graph, r_real: Var, r_gen: Var) -> Result<Var> {
    let sq = g.square(r_gen)?;
    let sq = g.mean(sq)?;
    let sq = g.scale(sq, 0.5)?;
    let m = g.mean(r_real)?;
    g.sub(sq, m)
}

pub fn kliep_loss_graph(g: &mut Graph, r_real: Var, r_gen: Var) -> Result<Var> {
    let l = g.log(r_real)?;
    let l = g.mean(l)?;
    let m = g.mean(r_gen)?;
    let d = g.sub(m, l)?;
    g.offset(d, -1.0)
}

pub fn bregman_ratio_loss_graph(g: &mut Graph, spec: FDivSpec, r_real: Var, r_gen: Var) -> Result<Var> {
    let fp = spec.graph_f_prime(g, r_gen)?;
    let rfp = g.mul(r_gen, fp)?;
    let f = spec.graph_f(g, r_gen)?;
    let gen = g.sub(rfp, f)?;
    let gen = g.mean(gen)?;
    let real = spec.graph_f_prime(g, r_real)?;
    let real = g.mean(real)?;
    g.sub(gen, real)
}

pub fn bregman_generator_loss_graph(g: &mut Graph, spec: FDivSpec, r_gen: Var) -> Result<Var> {
    let fp = spec.graph_f_prime(g, r_gen)?;
    let rfp = g.mul(r_gen, fp)?;
    g.mean(rfp)
}

/// Ratio loss of `family` on ratio values.
pub fn family_ratio_loss(family: RatioFamily, r_real: &[f64], r_gen: &[f64]) -> Result<f64> {
    match family {
        RatioFamily::Lsif => lsif_loss(r_real, r_gen),
        RatioFamily::Kliep => kliep_loss(r_real, r_gen),
        RatioFamily::Bregman(spec) => bregman_ratio_loss(spec, r_real, r_gen),
    }
}

/// Generator loss of `family` on ratio values; see [`family_generator_loss_graph`].
pub fn family_generator_loss(family: RatioFamily, r_gen: &[f64]) -> Result<f64> {
    match family {
        RatioFamily::Lsif => bregman_generator_loss(FDivSpec::Squared, r_gen),
        RatioFamily::Kliep => Err(Error::Usage(
            "kliep is a ratio loss only: its generator objective needs log q, which implicit models do not provide".into(),
        )),
        RatioFamily::Bregman(spec) => bregman_generator_loss(spec, r_gen),
    }
}

/// Ratio loss of `family` on the tape.
pub fn family_ratio_loss_graph(g: &mut Graph, family: RatioFamily, r_real: Var, r_gen: Var) -> Result<Var> {
    match family {
        RatioFamily::Lsif => lsif_loss_graph(g, r_real, r_gen),
        RatioFamily::Kliep => kliep_loss_graph(g, r_real, r_gen),
        RatioFamily::Bregman(spec) => bregman_ratio_loss_graph(g, spec, r_real, r_gen),
    }
}

/// Generator loss of `family` on the tape. LSIF uses the Bregman form with
/// the squared `f`.
pub fn family_generator_loss_graph(g: &mut Graph, family: RatioFamily, r_gen: Var) -> Result<Var> {
    match family {
        RatioFamily::Lsif => bregman_generator_loss_graph(g, FDivSpec::Squared, r_gen),
        RatioFamily::Kliep => Err(Error::Usage(
            "kliep is a ratio loss only: its generator objective needs log q, which implicit models do not provide".into(),
        )),
        RatioFamily::Bregman(spec) => bregman_generator_loss_graph(g, spec, r_gen),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiv::fdiv_ratio_loss;
    use crate::matrix::Matrix;
    use crate::rng::RngState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::E;

    fn batch(rng: &mut RngState, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_range(-3.0, 3.0).exp()).collect()
    }

    #[test]
    fn lsif_values() {
        assert_eq!(lsif_loss(&[1.0; 3], &[1.0; 5]).unwrap(), -0.5);
        assert_abs_diff_eq!(lsif_loss(&[1e-300; 3], &[1e-300; 3]).unwrap(), 0.0);
        assert!(lsif_loss(&[], &[1.0]).is_err());
    }

    #[test]
    fn kliep_values() {
        assert_eq!(kliep_loss(&[1.0; 3], &[1.0; 5]).unwrap(), 0.0);
        assert_abs_diff_eq!(kliep_loss(&[E; 3], &[1.0; 5]).unwrap(), -1.0, epsilon = 1e-15);
        assert!(kliep_loss(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn bregman_at_one_vanishes() {
        for spec in FDivSpec::ALL {
            assert_abs_diff_eq!(bregman_ratio_loss(spec, &[1.0; 2], &[1.0; 3]).unwrap(), -spec.f(1.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn bregman_matches_fdiv_ratio_loss() {
        let mut rng = RngState::new(1);
        for _ in 0..50 {
            let (a, b) = (batch(&mut rng, 20), batch(&mut rng, 30));
            for spec in FDivSpec::ALL {
                let l1 = bregman_ratio_loss(spec, &a, &b).unwrap();
                let l2 = fdiv_ratio_loss(spec, &a, &b).unwrap();
                assert_abs_diff_eq!(l1, l2, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn squared_bregman_is_lsif_plus_half() {
        let mut rng = RngState::new(2);
        for _ in 0..50 {
            let (a, b) = (batch(&mut rng, 10), batch(&mut rng, 12));
            let d = bregman_ratio_loss(FDivSpec::Squared, &a, &b).unwrap() - lsif_loss(&a, &b).unwrap();
            assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn generator_loss_values() {
        assert_eq!(bregman_generator_loss(FDivSpec::KL, &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(bregman_generator_loss(FDivSpec::PearsonChi2, &[1.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn bregman_direct_cases() {
        let w = [0.2, 0.3, 0.5];
        let r = [0.5, 1.2, 2.0];
        let h = [0.7, 1.0, 1.5];
        for spec in FDivSpec::ALL {
            assert_abs_diff_eq!(bregman_divergence_direct(spec, &r, &r, &w).unwrap(), 0.0, epsilon = 1e-15);
            assert!(bregman_divergence_direct(spec, &r, &h, &w).unwrap() >= 0.0);
        }
        let sq: f64 = w.iter().zip(r.iter().zip(&h)).map(|(w, (a, b))| 0.5 * w * (a - b) * (a - b)).sum();
        assert_abs_diff_eq!(bregman_divergence_direct(FDivSpec::Squared, &r, &h, &w).unwrap(), sq, epsilon = 1e-15);
        assert!(bregman_divergence_direct(FDivSpec::KL, &r, &h, &[0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn graph_forms_match() {
        let mut rng = RngState::new(3);
        let (a, b) = (batch(&mut rng, 15), batch(&mut rng, 25));
        let families = [
            RatioFamily::Lsif,
            RatioFamily::Kliep,
            RatioFamily::Bregman(FDivSpec::KL),
            RatioFamily::Bregman(FDivSpec::GAN),
        ];
        for fam in families {
            let mut g = Graph::new();
            let ra = g.constant(Matrix::column(&a));
            let rb = g.constant(Matrix::column(&b));
            let l = family_ratio_loss_graph(&mut g, fam, ra, rb).unwrap();
            let expected = match fam {
                RatioFamily::Lsif => lsif_loss(&a, &b),
                RatioFamily::Kliep => kliep_loss(&a, &b),
                RatioFamily::Bregman(s) => bregman_ratio_loss(s, &a, &b),
            }
            .unwrap();
            assert_abs_diff_eq!(g.scalar_value(l).unwrap(), expected, epsilon = 1e-12);
        }
        let mut g = Graph::new();
        let rb = g.constant(Matrix::column(&b));
        assert!(family_generator_loss_graph(&mut g, RatioFamily::Kliep, rb).is_err());
    }

    #[test]
    fn family_names() {
        for s in ["lsif", "kliep", "bregman:kl", "bregman:pearson_chi2"] {
            assert_eq!(s.parse::<RatioFamily>().unwrap().to_string(), s);
        }
        assert!("bregman:nope".parse::<RatioFamily>().is_err());
        assert!(RatioFamily::Bregman(FDivSpec::KL).generator_needs_near_optimal_ratio());
        assert!(!RatioFamily::Kliep.generator_loss_supported());
    }

    #[test]
    fn estimate_requires_positive_head() {
        let mut rng = RngState::new(4);
        let net = RatioNet::new(1, &[4], Head::Probability, &mut rng).unwrap();
        assert!(RatioEstimate::new(net, RatioFamily::Lsif).is_err());
    }
}
