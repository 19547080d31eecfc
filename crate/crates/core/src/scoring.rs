//! Class-probability-estimation losses.
//!
//! Real samples carry label `y = 1`, generated samples `y = 0`, and the
//! discriminator `D(x) = p(y = 1 | x)`. Every rule is a pair of per-class
//! losses; the ratio loss weights them by the class balance `π`:
//!
//! ```text
//! L(D) = π · mean(loss_pos(D(X_p))) + (1 − π) · mean(loss_neg(D(X_q)))
//! ```
//!
//! | rule              | loss_pos(D)            | loss_neg(D)            |
//! |-------------------|------------------------|------------------------|
//! | Bernoulli         | −log D                 | −log(1 − D)            |
//! | Brier             | (1 − D)²               | D²                     |
//! | Exponential       | ((1 − D)/D)^½          | (D/(1 − D))^½          |
//! | Misclassification | 𝟙[D ≤ ½]               | 𝟙[D > ½]               |
//! | Hinge             | max(0, 1 − logit D)    | max(0, 1 + logit D)    |
//! | Spherical         | −αD                    | −α(1 − D)              |
//!
//! with `α = (1 − 2D + 2D²)^−½`. Misclassification has zero gradient almost
//! everywhere and is exposed for evaluation only.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{mean, require_nonempty, Error, Result};
use crate::models::ClampCounter;
#[cfg(test)]
use crate::models::D_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoringRule {
    Bernoulli,
    Brier,
    Exponential,
    Misclassification,
    Hinge,
    Spherical,
}

impl ScoringRule {
    pub const ALL: [ScoringRule; 6] = [
        ScoringRule::Bernoulli,
        ScoringRule::Brier,
        ScoringRule::Exponential,
        ScoringRule::Misclassification,
        ScoringRule::Hinge,
        ScoringRule::Spherical,
    ];

    /// Rules usable as training losses.
    pub const DIFFERENTIABLE: [ScoringRule; 5] = [
        ScoringRule::Bernoulli,
        ScoringRule::Brier,
        ScoringRule::Exponential,
        ScoringRule::Hinge,
        ScoringRule::Spherical,
    ];

    /// Config-file name.
    pub fn name(self) -> &'static str {
        match self {
            ScoringRule::Bernoulli => "bernoulli",
            ScoringRule::Brier => "brier",
            ScoringRule::Exponential => "exponential",
            ScoringRule::Misclassification => "misclassification",
            ScoringRule::Hinge => "hinge",
            ScoringRule::Spherical => "spherical",
        }
    }

    pub fn is_differentiable(self) -> bool {
        self != ScoringRule::Misclassification
    }

    pub fn loss_pos(self, d: f64) -> f64 {
        match self {
            ScoringRule::Bernoulli => -d.ln(),
            ScoringRule::Brier => (1.0 - d).powi(2),
            ScoringRule::Exponential => ((1.0 - d) / d).sqrt(),
            ScoringRule::Misclassification => f64::from(u8::from(d <= 0.5)),
            ScoringRule::Hinge => (1.0 - logit(d)).max(0.0),
            ScoringRule::Spherical => -spherical_alpha(d) * d,
        }
    }

    pub fn loss_neg(self, d: f64) -> f64 {
        match self {
            ScoringRule::Bernoulli => -(-d).ln_1p(),
            ScoringRule::Brier => d * d,
            ScoringRule::Exponential => (d / (1.0 - d)).sqrt(),
            ScoringRule::Misclassification => f64::from(u8::from(d > 0.5)),
            ScoringRule::Hinge => (1.0 + logit(d)).max(0.0),
            ScoringRule::Spherical => -spherical_alpha(d) * (1.0 - d),
        }
    }

    /// `η·loss_pos(D) + (1 − η)·loss_neg(D)`: the expected loss when the
    /// true class probability is `η`.
    pub fn expected_loss(self, eta: f64, d: f64) -> f64 {
        eta * self.loss_pos(d) + (1.0 - eta) * self.loss_neg(d)
    }

    fn require_differentiable(self) -> Result<()> {
        if self.is_differentiable() {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "`{}` has zero gradient almost everywhere and is evaluation-only",
                self.name()
            )))
        }
    }

    /// Element-wise `loss_pos` on the tape.
    pub fn graph_loss_pos(self, g: &mut Graph, d: Var) -> Result<Var> {
        self.require_differentiable()?;
        match self {
            ScoringRule::Bernoulli => {
                let l = g.log(d)?;
                g.neg(l)
            }
            ScoringRule::Brier => {
                let c = g.rsub(1.0, d)?;
                g.square(c)
            }
            ScoringRule::Exponential => {
                let c = g.rsub(1.0, d)?;
                let q = g.div(c, d)?;
                g.sqrt(q)
            }
            ScoringRule::Hinge => {
                let l = graph_logit(g, d)?;
                let m = g.rsub(1.0, l)?;
                g.max0(m)
            }
            ScoringRule::Spherical => {
                let a = graph_spherical_alpha(g, d)?;
                let ad = g.mul(a, d)?;
                g.neg(ad)
            }
            ScoringRule::Misclassification => unreachable!(),
        }
    }

    /// Element-wise `loss_neg` on the tape.
    pub fn graph_loss_neg(self, g: &mut Graph, d: Var) -> Result<Var> {
        self.require_differentiable()?;
        match self {
            ScoringRule::Bernoulli => {
                let c = g.rsub(1.0, d)?;
                let l = g.log(c)?;
                g.neg(l)
            }
            ScoringRule::Brier => g.square(d),
            ScoringRule::Exponential => {
                let c = g.rsub(1.0, d)?;
                let q = g.div(d, c)?;
                g.sqrt(q)
            }
            ScoringRule::Hinge => {
                let l = graph_logit(g, d)?;
                let m = g.offset(l, 1.0)?;
                g.max0(m)
            }
            ScoringRule::Spherical => {
                let a = graph_spherical_alpha(g, d)?;
                let c = g.rsub(1.0, d)?;
                let ac = g.mul(a, c)?;
                g.neg(ac)
            }
            ScoringRule::Misclassification => unreachable!(),
        }
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoringRule::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Usage(format!("unknown scoring rule `{s}`")))
    }
}

fn logit(d: f64) -> f64 {
    d.ln() - (-d).ln_1p()
}

fn spherical_alpha(d: f64) -> f64 {
    (1.0 - 2.0 * d + 2.0 * d * d).sqrt().recip()
}

fn graph_logit(g: &mut Graph, d: Var) -> Result<Var> {
    let ld = g.log(d)?;
    let c = g.rsub(1.0, d)?;
    let lc = g.log(c)?;
    g.sub(ld, lc)
}

fn graph_spherical_alpha(g: &mut Graph, d: Var) -> Result<Var> {
    // 1 − 2D + 2D² = D² + (1 − D)²
    let d2 = g.square(d)?;
    let c = g.rsub(1.0, d)?;
    let c2 = g.square(c)?;
    let s = g.add(d2, c2)?;
    let norm = g.sqrt(s)?;
    let one = g.scalar(1.0);
    g.div(one, norm)
}

/// Marginal probability `π` of the real class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassBalance(f64);

impl ClassBalance {
    pub fn new(pi: f64) -> Result<Self> {
        if pi > 0.0 && pi < 1.0 {
            Ok(Self(pi))
        } else {
            Err(Error::Usage(format!("class balance requires 0 < π < 1, got {pi}")))
        }
    }

    pub fn balanced() -> Self {
        Self(0.5)
    }

    /// `π` from sample counts via `(1 − π)/π ≈ n′/n`, i.e. `π = n/(n + n′)`.
    pub fn from_counts(n_real: usize, n_gen: usize) -> Result<Self> {
        Self::new(n_real as f64 / (n_real + n_gen) as f64)
    }

    pub fn pi(self) -> f64 {
        self.0
    }
}

impl Default for ClassBalance {
    fn default() -> Self {
        Self::balanced()
    }
}

fn clamp_all(values: &[f64], what: &str, counter: &mut ClampCounter) -> Result<Vec<f64>> {
    require_nonempty(values, what)?;
    values
        .iter()
        .map(|&d| {
            if (0.0..=1.0).contains(&d) {
                Ok(counter.clamp_disc(d))
            } else {
                Err(Error::Domain(format!("{what}: D = {d} outside [0, 1]")))
            }
        })
        .collect()
}

/// CPE ratio loss `π·mean(loss_pos(D_real)) + (1−π)·mean(loss_neg(D_gen))`.
pub fn ratio_loss_cpe(rule: ScoringRule, d_real: &[f64], d_gen: &[f64], bal: ClassBalance) -> Result<f64> {
    let mut counter = ClampCounter::default();
    let real = clamp_all(d_real, "D_real", &mut counter)?;
    let gen = clamp_all(d_gen, "D_gen", &mut counter)?;
    let pos = real.iter().map(|&d| rule.loss_pos(d)).sum::<f64>() / real.len() as f64;
    let neg = gen.iter().map(|&d| rule.loss_neg(d)).sum::<f64>() / gen.len() as f64;
    Ok(bal.pi() * pos + (1.0 - bal.pi()) * neg)
}

/// Tape version of [`ratio_loss_cpe`]; `d_real`, `d_gen` are already clamped.
pub fn ratio_loss_cpe_graph(g: &mut Graph, rule: ScoringRule, d_real: Var, d_gen: Var, bal: ClassBalance) -> Result<Var> {
    let lp = rule.graph_loss_pos(g, d_real)?;
    let lp = g.mean(lp)?;
    let ln = rule.graph_loss_neg(g, d_gen)?;
    let ln = g.mean(ln)?;
    let a = g.scale(lp, bal.pi())?;
    let b = g.scale(ln, 1.0 - bal.pi())?;
    g.add(a, b)
}

/// Generator objectives built from the discriminator on generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneratorVariant {
    /// `mean(log(1 − D))`
    Minimax,
    /// `mean(−log D)`
    Nonsaturating,
    /// `mean(−log(D/(1 − D)))`, i.e. `−log r`
    LogRatio,
}

impl GeneratorVariant {
    pub const ALL: [GeneratorVariant; 3] = [
        GeneratorVariant::Minimax,
        GeneratorVariant::Nonsaturating,
        GeneratorVariant::LogRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeneratorVariant::Minimax => "minimax",
            GeneratorVariant::Nonsaturating => "nonsaturating",
            GeneratorVariant::LogRatio => "log_ratio",
        }
    }

    fn per_sample(self, d: f64) -> f64 {
        match self {
            GeneratorVariant::Minimax => (-d).ln_1p(),
            GeneratorVariant::Nonsaturating => -d.ln(),
            GeneratorVariant::LogRatio => -logit(d),
        }
    }
}

impl FromStr for GeneratorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown generator variant `{s}`")))
    }
}

/// CPE generator loss on discriminator values of generated samples.
/// Values are clamped into `[D_MIN, D_MAX]` first.
pub fn generator_loss_cpe(variant: GeneratorVariant, d_gen: &[f64]) -> Result<f64> {
    let mut counter = ClampCounter::default();
    let d = clamp_all(d_gen, "D_gen", &mut counter)?;
    Ok(mean(&d.iter().map(|&x| variant.per_sample(x)).collect::<Vec<_>>()))
}

/// Tape version of [`generator_loss_cpe`] on a clamped discriminator node.
pub fn generator_loss_cpe_graph(g: &mut Graph, variant: GeneratorVariant, d_gen: Var) -> Result<Var> {
    let per = match variant {
        GeneratorVariant::Minimax => {
            let c = g.rsub(1.0, d_gen)?;
            g.log(c)?
        }
        GeneratorVariant::Nonsaturating => {
            let l = g.log(d_gen)?;
            g.neg(l)?
        }
        GeneratorVariant::LogRatio => {
            let l = graph_logit(g, d_gen)?;
            g.neg(l)?
        }
    };
    g.mean(per)
}

/// Grid resolution used by [`properness_check`] when searching over `D`.
pub const PROPERNESS_GRID_STEP: f64 = 1e-4;
/// Allowed distance between the expected-loss minimiser and `η`.
pub const PROPERNESS_TOLERANCE: f64 = 1e-3;

/// Grid minimiser over `D ∈ (0, 1)` of the expected loss at class
/// probability `eta`.
pub fn expected_loss_minimiser(rule: ScoringRule, eta: f64) -> f64 {
    let steps = (1.0 / PROPERNESS_GRID_STEP).round() as usize;
    let mut best = (f64::INFINITY, 0.5);
    for k in 1..steps {
        let d = k as f64 * PROPERNESS_GRID_STEP;
        let l = rule.expected_loss(eta, d);
        if l < best.0 {
            best = (l, d);
        }
    }
    best.1
}

/// True when, for every `η` in `eta`, the expected loss is minimised at
/// `D = η` within [`PROPERNESS_TOLERANCE`].
pub fn properness_check(rule: ScoringRule, eta: &[f64]) -> Result<bool> {
    rule.require_differentiable()?;
    Ok(eta
        .iter()
        .all(|&e| (expected_loss_minimiser(rule, e) - e).abs() <= PROPERNESS_TOLERANCE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::rng::RngState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{LN_2, SQRT_2};

    const HALF: [f64; 4] = [0.5; 4];

    #[test]
    fn ratio_losses_at_half() {
        let b = ClassBalance::balanced();
        let expect = [
            (ScoringRule::Bernoulli, LN_2),
            (ScoringRule::Brier, 0.25),
            (ScoringRule::Exponential, 1.0),
            (ScoringRule::Spherical, -SQRT_2 / 2.0),
            (ScoringRule::Misclassification, 0.5),
            (ScoringRule::Hinge, 1.0),
        ];
        for (rule, v) in expect {
            assert_abs_diff_eq!(ratio_loss_cpe(rule, &HALF, &HALF, b).unwrap(), v, epsilon = 1e-15);
        }
        assert!(ratio_loss_cpe(ScoringRule::Brier, &[], &HALF, b).is_err());
    }

    #[test]
    fn generator_losses_at_half() {
        assert_abs_diff_eq!(generator_loss_cpe(GeneratorVariant::Minimax, &HALF).unwrap(), -LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(generator_loss_cpe(GeneratorVariant::Nonsaturating, &HALF).unwrap(), LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(generator_loss_cpe(GeneratorVariant::LogRatio, &HALF).unwrap(), 0.0, epsilon = 1e-15);
        assert!(generator_loss_cpe(GeneratorVariant::Minimax, &[]).is_err());
    }

    #[test]
    fn log_ratio_saturates_under_clamp() {
        let v = generator_loss_cpe(GeneratorVariant::LogRatio, &[1.0, 1.0]).unwrap();
        assert!(v.is_finite() && v < 0.0);
        assert_abs_diff_eq!(v, -(D_MAX / (1.0 - D_MAX)).ln(), epsilon = 1e-6);
    }

    #[test]
    fn log_ratio_identity() {
        let mut rng = RngState::new(3);
        let d: Vec<f64> = (0..200).map(|_| rng.uniform_range(0.01, 0.99)).collect();
        let lr = generator_loss_cpe(GeneratorVariant::LogRatio, &d).unwrap();
        let ns = generator_loss_cpe(GeneratorVariant::Nonsaturating, &d).unwrap();
        let mm = generator_loss_cpe(GeneratorVariant::Minimax, &d).unwrap();
        assert_abs_diff_eq!(lr, ns + mm, epsilon = 1e-12);
    }

    #[test]
    fn properness() {
        assert!(properness_check(ScoringRule::Bernoulli, &[0.3]).unwrap());
        assert!(properness_check(ScoringRule::Brier, &[0.5]).unwrap());
        assert!(properness_check(ScoringRule::Spherical, &[0.8]).unwrap());
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        for rule in [ScoringRule::Bernoulli, ScoringRule::Brier, ScoringRule::Exponential, ScoringRule::Spherical] {
            assert!(properness_check(rule, &grid).unwrap(), "{rule}");
        }
        assert_abs_diff_eq!(expected_loss_minimiser(ScoringRule::Bernoulli, 0.3), 0.3, epsilon = 1e-3);
        assert_eq!(expected_loss_minimiser(ScoringRule::Brier, 0.5), 0.5);
        // Hinge minimisers sit at logits ±1, not at η.
        assert!(!properness_check(ScoringRule::Hinge, &[0.3]).unwrap());
        assert!(properness_check(ScoringRule::Misclassification, &[0.3]).is_err());
    }

    #[test]
    fn affine_in_pi() {
        let mut rng = RngState::new(5);
        let real: Vec<f64> = (0..50).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let gen: Vec<f64> = (0..70).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        for rule in ScoringRule::ALL {
            let at = |pi: f64| ratio_loss_cpe(rule, &real, &gen, ClassBalance::new(pi).unwrap()).unwrap();
            let (a, b, c) = (at(0.2), at(0.5), at(0.8));
            assert_abs_diff_eq!(b, 0.5 * (a + c), epsilon = 1e-12);
        }
    }

    #[test]
    fn label_symmetry() {
        let mut rng = RngState::new(6);
        let real: Vec<f64> = (0..40).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let gen: Vec<f64> = (0..30).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let flip = |v: &[f64]| v.iter().map(|d| 1.0 - d).collect::<Vec<_>>();
        for rule in ScoringRule::ALL {
            let pi = 0.3;
            let a = ratio_loss_cpe(rule, &real, &gen, ClassBalance::new(pi).unwrap()).unwrap();
            let b = ratio_loss_cpe(rule, &flip(&gen), &flip(&real), ClassBalance::new(1.0 - pi).unwrap()).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn graph_losses_match_scalar_losses() {
        let mut rng = RngState::new(8);
        let real: Vec<f64> = (0..25).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let gen: Vec<f64> = (0..35).map(|_| rng.uniform_range(0.05, 0.95)).collect();
        let bal = ClassBalance::new(0.4).unwrap();
        for rule in ScoringRule::DIFFERENTIABLE {
            let mut g = Graph::new();
            let r = g.constant(Matrix::column(&real));
            let q = g.constant(Matrix::column(&gen));
            let l = ratio_loss_cpe_graph(&mut g, rule, r, q, bal).unwrap();
            assert_abs_diff_eq!(
                g.scalar_value(l).unwrap(),
                ratio_loss_cpe(rule, &real, &gen, bal).unwrap(),
                epsilon = 1e-12
            );
        }
        for v in GeneratorVariant::ALL {
            let mut g = Graph::new();
            let q = g.constant(Matrix::column(&gen));
            let l = generator_loss_cpe_graph(&mut g, v, q).unwrap();
            assert_abs_diff_eq!(g.scalar_value(l).unwrap(), generator_loss_cpe(v, &gen).unwrap(), epsilon = 1e-12);
        }
        let mut g = Graph::new();
        let q = g.constant(Matrix::column(&gen));
        assert!(ScoringRule::Misclassification.graph_loss_pos(&mut g, q).is_err());
    }

    #[test]
    fn auto_pi_from_counts() {
        let b = ClassBalance::from_counts(300, 100).unwrap();
        assert_abs_diff_eq!((1.0 - b.pi()) / b.pi(), 100.0 / 300.0, epsilon = 1e-15);
        assert!(ClassBalance::new(1.5).is_err());
        assert!(ClassBalance::new(0.0).is_err());
    }

    #[test]
    fn names_roundtrip() {
        for r in ScoringRule::ALL {
            assert_eq!(r.name().parse::<ScoringRule>().unwrap(), r);
        }
        assert_eq!("Bernoulli".parse::<ScoringRule>().unwrap(), ScoringRule::Bernoulli);
    }
}
