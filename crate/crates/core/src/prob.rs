//! Reference densities with closed-form log densities, samplers and the
//! quadrature used as ground truth where no closed form exists.
//!
//! Fixtures are diagonal Gaussians and finite mixtures of them. The
//! generated-data density of an implicit model is never evaluated; these
//! specs only stand in for the data distribution and for fixed reference
//! distributions in ratio-estimation experiments.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Usage("gaussian spec needs dim >= 1".into()));
        }
        if mean.len() != var.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Usage(format!("variance {v} must be finite and > 0")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Usage("mean must be finite".into()));
        }
        Ok(Self { mean, var })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// 1-D `N(mean, var)`.
    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], vec![var])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mi), vi) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - mi;
            acc += d * d / vi + vi.ln() + LN_2PI;
        }
        -0.5 * acc
    }

    fn draw(&self, rng: &mut RngState, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.mean).zip(&self.var) {
            *o = m + v.sqrt() * rng.normal();
        }
    }
}

/// Finite mixture of diagonal Gaussians sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    components: Vec<(f64, GaussianSpec)>,
}

impl MixtureSpec {
    pub fn new(components: Vec<(f64, GaussianSpec)>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Usage("mixture needs at least one component".into()))?;
        let dim = first.1.dim();
        let mut total = 0.0;
        for (w, c) in &components {
            if !(*w > 0.0 && *w <= 1.0) {
                return Err(Error::Usage(format!("mixture weight {w} not in (0, 1]")));
            }
            if c.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: c.dim(),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Usage(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    /// `modes` equal-weight isotropic components spaced evenly on a circle.
    pub fn ring(modes: usize, radius: f64, std: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::Usage("ring needs at least one mode".into()));
        }
        let w = 1.0 / modes as f64;
        let comps = (0..modes)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / modes as f64;
                GaussianSpec::new(
                    vec![radius * angle.cos(), radius * angle.sin()],
                    vec![std * std, std * std],
                )
                .map(|g| (w, g))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn components(&self) -> &[(f64, GaussianSpec)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn means(&self) -> Vec<&[f64]> {
        self.components.iter().map(|(_, c)| c.mean()).collect()
    }
}

/// Either a single Gaussian or a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum Density {
    Gaussian(GaussianSpec),
    Mixture(MixtureSpec),
}

impl From<GaussianSpec> for Density {
    fn from(g: GaussianSpec) -> Self {
        Density::Gaussian(g)
    }
}

impl From<MixtureSpec> for Density {
    fn from(m: MixtureSpec) -> Self {
        Density::Mixture(m)
    }
}

/// Where a batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Real,
    Generated,
    Latent,
}

/// `n × d` sample matrix plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Matrix,
    pub source: Source,
    /// Seed of the stream that produced the batch.
    pub seed_trace: u64,
}

impl SampleBatch {
    pub fn new(points: Matrix, source: Source, seed_trace: u64) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::Usage("sample batch needs n >= 1".into()));
        }
        if !points.all_finite() {
            return Err(Error::NonFinite("sample batch contains non-finite rows".into()));
        }
        Ok(Self {
            points,
            source,
            seed_trace,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }
}

impl Density {
    pub fn dim(&self) -> usize {
        match self {
            Density::Gaussian(g) => g.dim(),
            Density::Mixture(m) => m.dim(),
        }
    }

    /// Draws `n` i.i.d. points. Mixture draws pick a component by weight and
    /// then sample it.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::Usage("sample size must be >= 1".into()));
        }
        let d = self.dim();
        let mut points = Matrix::zeros(n, d);
        for i in 0..n {
            let row = points.row_mut(i);
            match self {
                Density::Gaussian(g) => g.draw(rng, row),
                Density::Mixture(m) => {
                    let u = rng.uniform();
                    let mut acc = 0.0;
                    let mut chosen = &m.components[m.components.len() - 1].1;
                    for (w, c) in &m.components {
                        acc += w;
                        if u < acc {
                            chosen = c;
                            break;
                        }
                    }
                    chosen.draw(rng, row);
                }
            }
        }
        SampleBatch::new(points, Source::Real, rng.seed())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Density::Gaussian(g) => g.log_density_unchecked(x),
            Density::Mixture(m) => {
                let terms: Vec<f64> = m
                    .components
                    .iter()
                    .map(|(w, c)| w.ln() + c.log_density_unchecked(x))
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    /// Axis-aligned box holding essentially all of the mass: each
    /// coordinate spans `mean ± 10σ` over all components.
    pub fn support_box(&self) -> Vec<(f64, f64)> {
        let comps: Vec<&GaussianSpec> = match self {
            Density::Gaussian(g) => vec![g],
            Density::Mixture(m) => m.components.iter().map(|(_, c)| c).collect(),
        };
        (0..self.dim())
            .map(|k| {
                comps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let s = 10.0 * c.var[k].sqrt();
                    (lo.min(c.mean[k] - s), hi.max(c.mean[k] + s))
                })
            })
            .collect()
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `log p(x) − log q(x)`, the log of the density ratio `p/q`.
pub fn analytic_log_ratio(p: &Density, q: &Density, x: &[f64]) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(p.log_density(x)? - q.log_density(x)?)
}

/// Closed-form `KL(p ‖ q)` for diagonal Gaussians.
pub fn analytic_kl(p: &Density, q: &Density) -> Result<f64> {
    let (Density::Gaussian(p), Density::Gaussian(q)) = (p, q) else {
        return Err(Error::Unsupported(
            "closed-form KL needs two Gaussian specs; use quadrature_kl for mixtures".into(),
        ));
    };
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut kl = 0.0;
    for k in 0..p.dim() {
        let (vp, vq) = (p.var[k], q.var[k]);
        let d = p.mean[k] - q.mean[k];
        kl += 0.5 * ((vq / vp).ln() + (vp + d * d) / vq - 1.0);
    }
    Ok(kl)
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `∫ weight(x) g(x) dx` over the support box of `weight` by a tensor
/// Simpson grid. Supports dimension 1 and 2.
pub fn integrate_against(
    weight: &Density,
    g: impl Fn(&[f64]) -> f64,
    panels: usize,
) -> Result<f64> {
    let bounds = weight.support_box();
    match bounds.as_slice() {
        [(a, b)] => Ok(simpson(
            |x| {
                let pt = [x];
                weight.log_density_unchecked(&pt).exp() * g(&pt)
            },
            *a,
            *b,
            panels,
        )),
        [(a0, b0), (a1, b1)] => Ok(simpson(
            |x| {
                simpson(
                    |y| {
                        let pt = [x, y];
                        let w = weight.log_density_unchecked(&pt).exp();
                        if w == 0.0 {
                            0.0
                        } else {
                            w * g(&pt)
                        }
                    },
                    *a1,
                    *b1,
                    panels,
                )
            },
            *a0,
            *b0,
            panels,
        )),
        _ => Err(Error::Unsupported(format!(
            "quadrature only in 1 or 2 dimensions, got {}",
            bounds.len()
        ))),
    }
}

/// `KL(p ‖ q)` by quadrature. Ground truth for mixtures.
pub fn quadrature_kl(p: &Density, q: &Density) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let panels = if p.dim() == 1 { 20_000 } else { 600 };
    integrate_against(
        p,
        |x| p.log_density_unchecked(x) - q.log_density_unchecked(x),
        panels,
    )
}

/// Pearson χ²(p ‖ q) = E_p[p/q] − 1 by quadrature.
pub fn quadrature_pearson(p: &Density, q: &Density) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let panels = if p.dim() == 1 { 20_000 } else { 600 };
    let e = integrate_against(
        p,
        |x| (p.log_density_unchecked(x) - q.log_density_unchecked(x)).exp(),
        panels,
    )?;
    Ok(e - 1.0)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * (2.0 * PI).ln()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn n(mean: f64, var: f64) -> Density {
        GaussianSpec::univariate(mean, var).unwrap().into()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GaussianSpec::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianSpec::new(vec![0.0, 1.0], vec![1.0]).is_err());
        let g = GaussianSpec::standard(1);
        assert!(MixtureSpec::new(vec![(0.5, g.clone()), (0.4, g.clone())]).is_err());
        assert!(MixtureSpec::new(vec![(0.5, g.clone()), (0.5, GaussianSpec::standard(2))]).is_err());
        assert!(n(0.0, 1.0).sample(0, &mut RngState::new(1)).is_err());
    }

    #[test]
    fn standard_normal_log_density_at_zero() {
        assert_abs_diff_eq!(n(0.0, 1.0).log_density(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        assert!(n(0.0, 1.0).log_density(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_points_have_equal_density() {
        let d = n(2.0, 3.0);
        for a in [0.1, 1.0, 4.5] {
            assert_eq!(d.log_density(&[2.0 + a]).unwrap(), d.log_density(&[2.0 - a]).unwrap());
        }
    }

    #[test]
    fn mixture_log_density_matches_direct_terms() {
        let m: Density = MixtureSpec::new(vec![
            (0.5, GaussianSpec::univariate(-1.0, 1.0).unwrap()),
            (0.5, GaussianSpec::univariate(1.0, 1.0).unwrap()),
        ])
        .unwrap()
        .into();
        let direct = (0.5 * (std_normal_pdf(-1.0) + std_normal_pdf(1.0))).ln();
        assert_abs_diff_eq!(m.log_density(&[0.0]).unwrap(), direct, epsilon = 1e-14);
    }

    #[test]
    fn log_ratio_cases() {
        let p = n(0.0, 1.0);
        let q = n(1.0, 1.0);
        for x in [-3.0, -0.2, 0.0, 1.7, 4.0] {
            assert_eq!(analytic_log_ratio(&p, &p, &[x]).unwrap(), 0.0);
            // Expanding the two quadratics: log p/q = ½ − x.
            assert_abs_diff_eq!(analytic_log_ratio(&p, &q, &[x]).unwrap(), 0.5 - x, epsilon = 1e-12);
            assert_eq!(
                analytic_log_ratio(&p, &q, &[x]).unwrap(),
                -analytic_log_ratio(&q, &p, &[x]).unwrap()
            );
        }
        assert_abs_diff_eq!(analytic_log_ratio(&p, &q, &[0.5]).unwrap(), 0.0, epsilon = 1e-15);
        assert!(analytic_log_ratio(&p, &GaussianSpec::standard(2).into(), &[0.0]).is_err());
    }

    #[test]
    fn kl_closed_form_agrees_with_quadrature() {
        let cases = [
            (n(0.0, 1.0), n(0.0, 1.0), 0.0),
            (n(0.0, 1.0), n(1.0, 1.0), 0.5),
            (n(0.0, 1.0), n(0.0, 4.0), 2f64.ln() + 0.125 - 0.5),
        ];
        for (p, q, expected) in cases {
            let closed = analytic_kl(&p, &q).unwrap();
            assert_abs_diff_eq!(closed, expected, epsilon = 1e-12);
            assert_abs_diff_eq!(quadrature_kl(&p, &q).unwrap(), closed, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(analytic_kl(&n(0.0, 1.0), &n(0.0, 4.0)).unwrap(), 0.318_147, epsilon = 1e-6);
    }

    #[test]
    fn kl_two_dim_quadrature() {
        let p: Density = GaussianSpec::new(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap().into();
        let q: Density = GaussianSpec::new(vec![0.5, 0.0], vec![2.0, 1.0]).unwrap().into();
        assert_abs_diff_eq!(quadrature_kl(&p, &q).unwrap(), analytic_kl(&p, &q).unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn mixture_kl_is_unsupported_in_closed_form() {
        let m: Density = MixtureSpec::ring(4, 1.0, 0.3).unwrap().into();
        assert!(matches!(
            analytic_kl(&m, &GaussianSpec::standard(2).into()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn densities_integrate_to_one() {
        let fixtures: Vec<Density> = vec![
            n(0.0, 1.0),
            n(5.0, 1.0),
            n(1.0, 1.0),
            n(0.0, 4.0),
            MixtureSpec::new(vec![
                (0.5, GaussianSpec::univariate(-1.0, 1.0).unwrap()),
                (0.5, GaussianSpec::univariate(1.0, 1.0).unwrap()),
            ])
            .unwrap()
            .into(),
        ];
        for d in &fixtures {
            let mass = integrate_against(d, |_| 1.0, 4000).unwrap();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-4);
        }
        let ring: Density = MixtureSpec::ring(8, 2.0, 0.3).unwrap().into();
        assert_abs_diff_eq!(integrate_against(&ring, |_| 1.0, 800).unwrap(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn sample_moments() {
        for (mean, seed) in [(0.0, 11u64), (5.0, 12)] {
            let batch = n(mean, 1.0).sample(100_000, &mut RngState::new(seed)).unwrap();
            assert!(batch.points.all_finite());
            let m = batch.points.col_means()[0];
            assert!((m - mean).abs() < 0.02, "sample mean {m}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let d: Density = MixtureSpec::ring(8, 2.0, 0.05).unwrap().into();
        let a = d.sample(500, &mut RngState::new(3)).unwrap();
        let b = d.sample(500, &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        let bits_a: Vec<u64> = a.points.as_slice().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.points.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn monte_carlo_log_ratio_converges_to_kl() {
        let p = n(0.0, 1.0);
        let q = n(1.0, 1.0);
        let batch = p.sample(100_000, &mut RngState::new(5)).unwrap();
        let vals: Vec<f64> = batch
            .points
            .iter_rows()
            .map(|x| analytic_log_ratio(&p, &q, x).unwrap())
            .collect();
        let m = crate::error::mean(&vals);
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let se = (var / vals.len() as f64).sqrt();
        assert!((m - analytic_kl(&p, &q).unwrap()).abs() < 3.0 * se);
    }
}
