//! Diagnostics: ratio recovery, variational bound accuracy, mode coverage
//! and loss-landscape curves over `log r`.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fdiv::FDivSpec;
use crate::matrix::Matrix;
use crate::models::RatioNet;
use crate::prob::{analytic_kl, analytic_log_ratio, quadrature_kl, quadrature_pearson, Density, MixtureSpec};
use crate::rng::RngState;

/// A component counts as covered when at least this fraction of points lies
/// within the coverage radius of its mean.
pub const COVERAGE_FRACTION: f64 = 0.01;
/// Default coverage radius in component standard deviations.
pub const COVERAGE_RADIUS_STDS: f64 = 2.0;

/// `n` evenly spaced 1-D points on `[lo, hi]`, as an `n × 1` matrix.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Matrix {
    if n == 1 {
        return Matrix::column(&[lo]);
    }
    let pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    Matrix::column(&pts)
}

/// Mean absolute error between `log_ratio` and the analytic log ratio over
/// the rows of `grid`.
pub fn log_ratio_error(log_ratio: &[f64], p: &Density, q: &Density, grid: &Matrix) -> Result<f64> {
    if log_ratio.len() != grid.rows() || grid.rows() == 0 {
        return Err(Error::Dimension {
            expected: grid.rows(),
            got: log_ratio.len(),
        });
    }
    let mut acc = 0.0;
    for (x, l) in grid.iter_rows().zip(log_ratio) {
        acc += (l - analytic_log_ratio(p, q, x)?).abs();
    }
    Ok(acc / grid.rows() as f64)
}

/// [`log_ratio_error`] for a trained network.
pub fn ratio_recovery_error(net: &RatioNet, p: &Density, q: &Density, grid: &Matrix) -> Result<f64> {
    log_ratio_error(&net.eval_log_ratio(grid)?, p, q, grid)
}

/// Variational bound against the true divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceGap {
    pub bound: f64,
    /// Monte Carlo standard error of `bound`.
    pub se: f64,
    pub analytic: f64,
    /// `analytic − bound`.
    pub gap: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Ground-truth `D_f(p ‖ q)` where one is available.
pub fn analytic_divergence(spec: FDivSpec, p: &Density, q: &Density) -> Result<f64> {
    match spec {
        FDivSpec::KL => analytic_kl(p, q).or_else(|_| quadrature_kl(p, q)),
        FDivSpec::PearsonChi2 => quadrature_pearson(p, q),
        other => Err(Error::Unsupported(format!(
            "no divergence oracle for `{other}`; use kl or pearson_chi2"
        ))),
    }
}

/// Bound `E_p[t] − E_q[f†(t)]` at `t = f′(r)` with `r = exp(log_ratio(x))`,
/// on `n` fresh samples from each of `p` and `q`.
pub fn divergence_gap_with(
    spec: FDivSpec,
    log_ratio: impl Fn(&Matrix) -> Result<Vec<f64>>,
    p: &Density,
    q: &Density,
    n: usize,
    rng: &mut RngState,
) -> Result<DivergenceGap> {
    let analytic = analytic_divergence(spec, p, q)?;
    if n < 2 {
        return Err(Error::Usage("divergence gap needs n >= 2".into()));
    }
    let t_of = |l: f64| match spec {
        FDivSpec::KL => 1.0 + l,
        _ => spec.f_prime(l.exp()),
    };
    let xp = p.sample(n, rng)?.points;
    let xq = q.sample(n, rng)?.points;
    let tp: Vec<f64> = log_ratio(&xp)?.into_iter().map(t_of).collect();
    let cq: Vec<f64> = log_ratio(&xq)?.into_iter().map(|l| spec.f_conj(t_of(l))).collect();
    let (mp, vp) = mean_var(&tp);
    let (mq, vq) = mean_var(&cq);
    let bound = mp - mq;
    if !bound.is_finite() {
        return Err(Error::NonFinite(format!("variational bound for `{spec}`")));
    }
    Ok(DivergenceGap {
        bound,
        se: (vp / n as f64 + vq / n as f64).sqrt(),
        analytic,
        gap: analytic - bound,
    })
}

/// [`divergence_gap_with`] using a trained network's log ratio.
pub fn divergence_gap(
    spec: FDivSpec,
    net: &RatioNet,
    p: &Density,
    q: &Density,
    n: usize,
    rng: &mut RngState,
) -> Result<DivergenceGap> {
    divergence_gap_with(spec, |x| net.eval_log_ratio(x), p, q, n, rng)
}

/// Mode-coverage summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeCoverage {
    pub covered: usize,
    /// Points whose nearest component mean is component `k`.
    pub histogram: Vec<usize>,
}

/// Counts components with at least [`COVERAGE_FRACTION`] of `points` within
/// `radius` of their mean.
pub fn mode_coverage(points: &Matrix, mix: &MixtureSpec, radius: f64) -> Result<ModeCoverage> {
    if !(radius > 0.0) {
        return Err(Error::Usage(format!("coverage radius must be > 0, got {radius}")));
    }
    if points.cols() != mix.dim() {
        return Err(Error::Dimension {
            expected: mix.dim(),
            got: points.cols(),
        });
    }
    let means = mix.means();
    let mut within = vec![0usize; means.len()];
    let mut histogram = vec![0usize; means.len()];
    for x in points.iter_rows() {
        let mut best = (f64::INFINITY, 0);
        for (k, m) in means.iter().enumerate() {
            let d2: f64 = x.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2.sqrt() <= radius {
                within[k] += 1;
            }
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        histogram[best.1] += 1;
    }
    let need = COVERAGE_FRACTION * points.rows() as f64;
    let covered = within.iter().filter(|&&c| c > 0 && c as f64 >= need).count();
    Ok(ModeCoverage { covered, histogram })
}

/// A curve drawn in [`emit_f_curves`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    F(FDivSpec),
    /// Generator objective `log(1 − D) = −log(1 + r)`.
    Minimax,
    /// Generator objective `−log D = −log(r / (1 + r))`.
    Nonsaturating,
}

impl Curve {
    pub fn name(&self) -> String {
        match self {
            Curve::F(s) => s.to_string(),
            Curve::Minimax => "minimax".into(),
            Curve::Nonsaturating => "nonsaturating".into(),
        }
    }

    /// Value shifted to vanish at `r = 1`, and its derivative in `log r`.
    pub fn eval(&self, log_r: f64) -> (f64, f64) {
        let r = log_r.exp();
        match self {
            Curve::F(s) => (s.f(r) - s.f(1.0), r * s.f_prime(r)),
            Curve::Minimax => (-(r.ln_1p()) + 2f64.ln(), -r / (1.0 + r)),
            Curve::Nonsaturating => ((1.0 / r).ln_1p() - 2f64.ln(), -1.0 / (1.0 + r)),
        }
    }
}

impl FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(Curve::Minimax),
            "nonsaturating" => Ok(Curve::Nonsaturating),
            _ => Ok(Curve::F(s.parse()?)),
        }
    }
}

/// Long-format table of `(curve, log r, value, slope)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub grid: Vec<f64>,
    pub curves: Vec<Curve>,
    /// `values[c][i]` = (value, slope) of curve `c` at `grid[i]`.
    pub values: Vec<Vec<(f64, f64)>>,
}

/// 201 points on `[−5, 5]`, step 0.05, hitting integers exactly.
pub fn default_log_r_grid() -> Vec<f64> {
    (0..=200).map(|k| (k as f64 - 100.0) / 20.0).collect()
}

/// Curves for `specs` plus the minimax and nonsaturating generator
/// objectives, on a strictly increasing `log r` grid.
pub fn emit_f_curves(specs: &[FDivSpec], grid: &[f64]) -> Result<CurveTable> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Usage("curve grid must be non-empty and strictly increasing".into()));
    }
    let mut curves: Vec<Curve> = specs.iter().map(|&s| Curve::F(s)).collect();
    curves.push(Curve::Minimax);
    curves.push(Curve::Nonsaturating);
    let mut values = Vec::with_capacity(curves.len());
    for c in &curves {
        let col: Vec<(f64, f64)> = grid.iter().map(|&l| c.eval(l)).collect();
        if let Some(i) = col.iter().position(|(v, s)| !v.is_finite() || !s.is_finite()) {
            return Err(Error::NonFinite(format!("curve `{}` at log r = {}", c.name(), grid[i])));
        }
        values.push(col);
    }
    Ok(CurveTable {
        grid: grid.to_vec(),
        curves,
        values,
    })
}

impl CurveTable {
    /// `(value, slope)` of the named curve at a grid point.
    pub fn lookup(&self, curve: &str, log_r: f64) -> Option<(f64, f64)> {
        let c = self.curves.iter().position(|c| c.name() == curve)?;
        let i = self.grid.iter().position(|&g| g == log_r)?;
        Some(self.values[c][i])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["curve", "log_r", "value", "slope"])?;
        for (c, col) in self.curves.iter().zip(&self.values) {
            let name = c.name();
            for (l, (v, s)) in self.grid.iter().zip(col) {
                out.write_record([name.clone(), l.to_string(), v.to_string(), s.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Two-panel line plot (value and slope against `log r`).
    pub fn to_svg(&self) -> String {
        const W: f64 = 420.0;
        const H: f64 = 300.0;
        const PAD: f64 = 40.0;
        const COLORS: [&str; 8] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
        ];
        let (x0, x1) = (self.grid[0], self.grid[self.grid.len() - 1]);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
            2.0 * W,
            H + 30.0
        );
        for (panel, title) in ["value", "slope"].iter().enumerate() {
            let ox = panel as f64 * W;
            let pick = |v: &(f64, f64)| if panel == 0 { v.0 } else { v.1 };
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for col in &self.values {
                for v in col {
                    lo = lo.min(pick(v));
                    hi = hi.max(pick(v));
                }
            }
            // Clip the y-range so steep curves do not flatten the rest.
            lo = lo.max(-5.0);
            hi = hi.min(5.0);
            if hi <= lo {
                hi = lo + 1.0;
            }
            let sx = |x: f64| ox + PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
            let sy = |y: f64| H - PAD - (y.clamp(lo, hi) - lo) / (hi - lo) * (H - 2.0 * PAD);
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
                ox + PAD,
                PAD,
                W - 2.0 * PAD,
                H - 2.0 * PAD
            );
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{title} vs log r</text>"#, ox + PAD, PAD - 8.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{x0}</text>"#, ox + PAD, H - PAD + 14.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{x1}</text>"#, ox + W - PAD, H - PAD + 14.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{hi:.2}</text>"#, ox + PAD - 4.0, PAD + 4.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{lo:.2}</text>"#, ox + PAD - 4.0, H - PAD);
            for (k, col) in self.values.iter().enumerate() {
                let pts: Vec<String> = self
                    .grid
                    .iter()
                    .zip(col)
                    .map(|(&x, v)| format!("{:.2},{:.2}", sx(x), sy(pick(v))))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    COLORS[k % COLORS.len()],
                    pts.join(" ")
                );
            }
        }
        for (k, c) in self.curves.iter().enumerate() {
            let x = 10.0 + k as f64 * 100.0;
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{:.1}" fill="{}">{}</text>"#,
                H + 20.0,
                COLORS[k % COLORS.len()],
                c.name()
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}
