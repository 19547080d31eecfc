//! Benchmark suite: gradient checks over every differentiable loss, exact
//! identities between loss families, and the desk-scale training fixtures.
//!
//! Each `check_*` function measures one criterion and compares it against
//! the bench constants below.

use std::path::Path;
use std::time::Instant;

use crate::autodiff::{finite_diff_check, Binding, Graph, Var};
use crate::cli::{run_command, Command};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{default_log_r_grid, divergence_gap, emit_f_curves, mode_coverage, ratio_recovery_error, uniform_grid};
use crate::fdiv::{conjugate_identity_check, fdiv_generator_loss_graph, fdiv_ratio_loss, fdiv_ratio_loss_graph, logspace, FDivSpec};
use crate::matrix::Matrix;
use crate::models::{ratio_to_disc, GeneratorNet, Head, RatioNet, RatioOutput};
use crate::moments::{median_heuristic, mmd2_biased, mmd2_biased_graph, mmd2_unbiased, moment_loss_graph, KernelSpec, TestStatistic};
use crate::prob::{Density, GaussianSpec, MixtureSpec};
use crate::ratio::{
    bregman_generator_loss_graph, bregman_ratio_loss, bregman_ratio_loss_graph, kliep_loss_graph, lsif_loss,
    lsif_loss_graph,
};
use crate::rng::RngState;
use crate::scoring::{generator_loss_cpe_graph, ratio_loss_cpe, ratio_loss_cpe_graph, ClassBalance, GeneratorVariant, ScoringRule};
use crate::trainer::{train, DataSource, GeneratorLoss, GeneratorModel, OptimizerKind, RatioLoss, TrainConfig, TrainReport};

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const CONJUGATE_TOLERANCE: f64 = 1e-9;
pub const BREGMAN_TOLERANCE: f64 = 1e-9;
pub const EXACT_TOLERANCE: f64 = 1e-12;
pub const RECOVERY_MAE: f64 = 0.1;
pub const BOUND_RELATIVE: f64 = 0.1;
pub const CURVE_TOLERANCE: f64 = 1e-6;
pub const RING_MMD: f64 = 0.05;
pub const RING_MIN_COVERED: usize = 6;
pub const FIXED_POINT_BAND: f64 = 0.05;

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    fn new(id: u8, name: &'static str, pass: bool, detail: String, started: Instant) -> Self {
        Self {
            id,
            name,
            pass,
            detail,
            seconds: started.elapsed().as_secs_f64(),
        }
    }
}

fn normal_matrix(rng: &mut RngState, n: usize, d: usize, shift: f64) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal() + shift).collect()).expect("shape")
}

/// Which parameters a gradient-check case differentiates.
#[derive(Debug, Clone, Copy)]
enum Side {
    /// Ratio-network parameters, with the given head.
    Ratio(Head),
    /// Generator parameters, through a fixed ratio network with this head
    /// (or none for moment losses).
    Generator(Option<Head>),
}

type RatioCase = fn(&mut Graph, RatioOutput, RatioOutput) -> Result<Var>;
type GenCase = fn(&mut Graph, Option<RatioOutput>, Var, Var) -> Result<Var>;

enum CaseFn {
    Ratio(RatioCase),
    Gen(GenCase),
}

/// A differentiable loss in the gradient-check registry.
pub struct GradcheckCase {
    pub name: String,
    side: Side,
    f: CaseFn,
}

fn cpe_ratio(rule: ScoringRule) -> RatioCase {
    macro_rules! rule_case {
        ($r:expr) => {
            |g, a, b| {
                let (da, db) = (a.disc(g)?, b.disc(g)?);
                ratio_loss_cpe_graph(g, $r, da, db, ClassBalance::new(0.4)?)
            }
        };
    }
    match rule {
        ScoringRule::Bernoulli => rule_case!(ScoringRule::Bernoulli),
        ScoringRule::Brier => rule_case!(ScoringRule::Brier),
        ScoringRule::Exponential => rule_case!(ScoringRule::Exponential),
        ScoringRule::Hinge => rule_case!(ScoringRule::Hinge),
        ScoringRule::Spherical => rule_case!(ScoringRule::Spherical),
        ScoringRule::Misclassification => unreachable!("not differentiable"),
    }
}

macro_rules! per_spec {
    ($spec:expr, |$s:ident| $body:expr) => {
        match $spec {
            FDivSpec::KL => {
                const $s: FDivSpec = FDivSpec::KL;
                $body
            }
            FDivSpec::ReverseKL => {
                const $s: FDivSpec = FDivSpec::ReverseKL;
                $body
            }
            FDivSpec::GAN => {
                const $s: FDivSpec = FDivSpec::GAN;
                $body
            }
            FDivSpec::PearsonChi2 => {
                const $s: FDivSpec = FDivSpec::PearsonChi2;
                $body
            }
            FDivSpec::Squared => {
                const $s: FDivSpec = FDivSpec::Squared;
                $body
            }
        }
    };
}

/// All registered differentiable losses.
pub fn gradcheck_cases() -> Vec<GradcheckCase> {
    let mut cases = Vec::new();
    let mut push = |name: String, side: Side, f: CaseFn| cases.push(GradcheckCase { name, side, f });
    for rule in ScoringRule::DIFFERENTIABLE {
        push(format!("ratio:{rule}"), Side::Ratio(Head::Probability), CaseFn::Ratio(cpe_ratio(rule)));
    }
    for v in GeneratorVariant::ALL {
        let f: GenCase = match v {
            GeneratorVariant::Minimax => |g, o, _, _| {
                let d = o.expect("ratio").disc(g)?;
                generator_loss_cpe_graph(g, GeneratorVariant::Minimax, d)
            },
            GeneratorVariant::Nonsaturating => |g, o, _, _| {
                let d = o.expect("ratio").disc(g)?;
                generator_loss_cpe_graph(g, GeneratorVariant::Nonsaturating, d)
            },
            GeneratorVariant::LogRatio => |g, o, _, _| {
                let d = o.expect("ratio").disc(g)?;
                generator_loss_cpe_graph(g, GeneratorVariant::LogRatio, d)
            },
        };
        push(format!("gen:{}", v.name()), Side::Generator(Some(Head::Probability)), CaseFn::Gen(f));
    }
    for spec in FDivSpec::ALL {
        let fr: RatioCase = per_spec!(spec, |S| |g, a, b| {
            let (ra, rb) = (a.ratio(g)?, b.ratio(g)?);
            fdiv_ratio_loss_graph(g, S, ra, rb)
        });
        let fg: GenCase = per_spec!(spec, |S| |g, o, _, _| {
            let r = o.expect("ratio").ratio(g)?;
            fdiv_generator_loss_graph(g, S, r)
        });
        push(format!("ratio:fdiv:{spec}"), Side::Ratio(Head::Unconstrained), CaseFn::Ratio(fr));
        push(format!("gen:fdiv:{spec}"), Side::Generator(Some(Head::Unconstrained)), CaseFn::Gen(fg));
    }
    push(
        "ratio:lsif".into(),
        Side::Ratio(Head::Positive),
        CaseFn::Ratio(|g, a, b| {
            let (ra, rb) = (a.ratio(g)?, b.ratio(g)?);
            lsif_loss_graph(g, ra, rb)
        }),
    );
    push(
        "ratio:kliep".into(),
        Side::Ratio(Head::Positive),
        CaseFn::Ratio(|g, a, b| {
            let (ra, rb) = (a.ratio(g)?, b.ratio(g)?);
            kliep_loss_graph(g, ra, rb)
        }),
    );
    for spec in FDivSpec::ALL {
        let fr: RatioCase = per_spec!(spec, |S| |g, a, b| {
            let (ra, rb) = (a.ratio(g)?, b.ratio(g)?);
            bregman_ratio_loss_graph(g, S, ra, rb)
        });
        let fg: GenCase = per_spec!(spec, |S| |g, o, _, _| {
            let r = o.expect("ratio").ratio(g)?;
            bregman_generator_loss_graph(g, S, r)
        });
        push(format!("ratio:bregman:{spec}"), Side::Ratio(Head::Positive), CaseFn::Ratio(fr));
        push(format!("gen:bregman:{spec}"), Side::Generator(Some(Head::Positive)), CaseFn::Gen(fg));
    }
    push(
        "gen:moments:3".into(),
        Side::Generator(None),
        CaseFn::Gen(|g, _, real, fake| moment_loss_graph(g, &TestStatistic::RawMoments { order: 3 }, real, fake)),
    );
    push(
        "gen:mmd:rbf".into(),
        Side::Generator(None),
        CaseFn::Gen(|g, _, real, fake| mmd2_biased_graph(g, &KernelSpec::Rbf { sigma: 1.2 }, real, fake)),
    );
    push(
        "gen:mmd:poly".into(),
        Side::Generator(None),
        CaseFn::Gen(|g, _, real, fake| {
            mmd2_biased_graph(g, &KernelSpec::Polynomial { degree: 2, offset: 1.0 }, real, fake)
        }),
    );
    cases
}

impl GradcheckCase {
    /// Worst relative error for one random fixture.
    pub fn check(&self, seed: u64) -> Result<f64> {
        let mut rng = RngState::new(seed);
        let n = 12;
        let real = normal_matrix(&mut rng, n, 2, 0.0);
        match (&self.f, self.side) {
            (CaseFn::Ratio(f), Side::Ratio(head)) => {
                let fake = normal_matrix(&mut rng, n, 2, 0.7);
                let net = RatioNet::new(2, &[6], head, &mut rng)?;
                let r = finite_diff_check(
                    |g: &mut Graph, b: Binding| {
                        let (xr, xf) = (g.constant(real.clone()), g.constant(fake.clone()));
                        let or = net.forward(g, b, xr)?;
                        let of = net.forward(g, b, xf)?;
                        f(g, or, of)
                    },
                    net.params(),
                    GRADCHECK_STEP,
                )?;
                Ok(r.max_rel_error)
            }
            (CaseFn::Gen(f), Side::Generator(head)) => {
                let gen = GeneratorNet::new(2, &[6], 2, &mut rng)?;
                let z = normal_matrix(&mut rng, n, 2, 0.0);
                let ratio = match head {
                    Some(h) => Some(RatioNet::new(2, &[6], h, &mut rng)?),
                    None => None,
                };
                let r = finite_diff_check(
                    |g: &mut Graph, b: Binding| {
                        let zv = g.constant(z.clone());
                        let x = gen.forward(g, b, zv)?;
                        let xr = g.constant(real.clone());
                        let out = match &ratio {
                            Some(net) => {
                                let br = g.bind(net.params());
                                Some(net.forward(g, br, x)?)
                            }
                            None => None,
                        };
                        f(g, out, xr, x)
                    },
                    gen.params(),
                    GRADCHECK_STEP,
                )?;
                Ok(r.max_rel_error)
            }
            _ => unreachable!("case kinds are paired with their side"),
        }
    }
}

/// Worst gradient-check error of one registered loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub loss: String,
    pub seeds: usize,
    pub worst: f64,
    pub pass: bool,
}

pub fn run_gradchecks(base_seed: u64, seeds: usize) -> Result<Vec<GradcheckRow>> {
    gradcheck_cases()
        .iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            for s in 0..seeds as u64 {
                worst = worst.max(case.check(base_seed.wrapping_add(s))?);
            }
            Ok(GradcheckRow {
                loss: case.name.clone(),
                seeds,
                worst,
                pass: worst < GRADCHECK_TOLERANCE,
            })
        })
        .collect()
}

pub fn check_gradients() -> CriterionResult {
    let t = Instant::now();
    let (pass, detail) = match run_gradchecks(0, 100) {
        Ok(rows) => {
            let worst = rows.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).expect("non-empty registry");
            (
                rows.iter().all(|r| r.pass),
                format!("{} losses x 100 seeds, worst {:.2e} ({})", rows.len(), worst.worst, worst.loss),
            )
        }
        Err(e) => (false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    CriterionResult::new(1, "gradient correctness", pass && secs < 60.0, detail, t)
}

pub fn check_conjugate_identity() -> CriterionResult {
    let t = Instant::now();
    let grid = logspace(1e-3, 1e3, 1000);
    let worst = FDivSpec::ALL
        .iter()
        .map(|&s| conjugate_identity_check(s, &grid).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    CriterionResult::new(
        2,
        "conjugate identity",
        worst < CONJUGATE_TOLERANCE,
        format!("max error {worst:.2e}"),
        t,
    )
}

fn random_ratios(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-4.0, 4.0).exp()).collect()
}

pub fn check_bregman_equivalence() -> CriterionResult {
    let t = Instant::now();
    let mut rng = RngState::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (rp, rq) = (random_ratios(&mut rng, 32), random_ratios(&mut rng, 32));
        for spec in FDivSpec::ALL {
            let a = bregman_ratio_loss(spec, &rp, &rq);
            let b = fdiv_ratio_loss(spec, &rp, &rq);
            worst = match (a, b) {
                (Ok(a), Ok(b)) => worst.max((a - b).abs()),
                _ => f64::INFINITY,
            };
        }
    }
    CriterionResult::new(
        3,
        "bregman equals f-divergence ratio loss",
        worst < BREGMAN_TOLERANCE,
        format!("1000 batches x 5 specs, max difference {worst:.2e}"),
        t,
    )
}

pub fn check_lsif_bridge() -> CriterionResult {
    let t = Instant::now();
    let mut rng = RngState::new(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (rp, rq) = (random_ratios(&mut rng, 32), random_ratios(&mut rng, 32));
        match (bregman_ratio_loss(FDivSpec::Squared, &rp, &rq), lsif_loss(&rp, &rq)) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b - 0.5).abs()),
            _ => worst = f64::INFINITY,
        }
    }
    CriterionResult::new(
        4,
        "lsif bridge",
        worst < EXACT_TOLERANCE,
        format!("max |B_sq - LSIF - 1/2| = {worst:.2e}"),
        t,
    )
}

pub fn check_gan_recovery() -> CriterionResult {
    let t = Instant::now();
    let mut rng = RngState::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (rp, rq) = (random_ratios(&mut rng, 32), random_ratios(&mut rng, 32));
        let to_d = |r: &[f64]| r.iter().map(|&x| ratio_to_disc(x)).collect::<Result<Vec<_>>>();
        let cpe = to_d(&rp)
            .and_then(|dp| Ok((dp, to_d(&rq)?)))
            .and_then(|(dp, dq)| ratio_loss_cpe(ScoringRule::Bernoulli, &dp, &dq, ClassBalance::balanced()));
        match (fdiv_ratio_loss(FDivSpec::GAN, &rp, &rq), cpe) {
            (Ok(a), Ok(b)) => worst = worst.max((a - 2.0 * b).abs()),
            _ => worst = f64::INFINITY,
        }
    }
    CriterionResult::new(
        5,
        "gan recovery",
        worst < EXACT_TOLERANCE,
        format!("max |L_gan - 2 L_bernoulli| = {worst:.2e}"),
        t,
    )
}

/// The one-dimensional ratio-recovery fixture: `p = N(0, 1)`, `q = N(1, 1)`.
pub fn recovery_pair() -> (Density, Density) {
    (
        GaussianSpec::univariate(0.0, 1.0).expect("valid").into(),
        GaussianSpec::univariate(1.0, 1.0).expect("valid").into(),
    )
}

/// Trains a logistic ratio estimator on 10⁴ samples from each side with
/// 2000 ratio steps.
pub fn train_recovery_net(seed: u64) -> Result<RatioNet> {
    let (p, q) = recovery_pair();
    let mut rng = RngState::new(seed);
    let xp = p.sample(10_000, &mut rng)?.points;
    let xq = q.sample(10_000, &mut rng)?.points;
    let net = RatioNet::new(1, &[16], Head::Probability, &mut rng)?;
    let mut cfg = TrainConfig::new(
        RatioLoss::Cpe(ScoringRule::Bernoulli),
        GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating),
    );
    cfg.iterations = 2000;
    cfg.batch_size = 512;
    cfg.optimizer = OptimizerKind::adam(3e-3);
    cfg.seed = seed;
    cfg.log_every = 2000;
    let out = train(
        cfg,
        DataSource::Dataset(xp),
        GeneratorModel::Fixed(DataSource::Dataset(xq)),
        Some(net),
    )?;
    Ok(out.ratio.expect("ratio loss configured"))
}

pub fn check_ratio_recovery(net: &Result<RatioNet>, train_seconds: f64) -> CriterionResult {
    let t = Instant::now();
    let (p, q) = recovery_pair();
    let grid = uniform_grid(-2.0, 3.0, 501);
    let (pass, detail) = match net.as_ref().map_err(Clone::clone).and_then(|n| ratio_recovery_error(n, &p, &q, &grid)) {
        Ok(mae) => (
            mae < RECOVERY_MAE && train_seconds < 60.0,
            format!("MAE {mae:.4} on [-2, 3]"),
        ),
        Err(e) => (false, e.to_string()),
    };
    let mut r = CriterionResult::new(6, "ratio recovery", pass, detail, t);
    r.seconds += train_seconds;
    r
}

pub fn check_divergence_bound(net: &Result<RatioNet>) -> CriterionResult {
    let t = Instant::now();
    let (p, q) = recovery_pair();
    let mut rng = RngState::new(7);
    let res = net
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|n| divergence_gap(FDivSpec::KL, n, &p, &q, 100_000, &mut rng));
    let (pass, detail) = match res {
        Ok(g) => (
            (g.bound - g.analytic).abs() <= BOUND_RELATIVE * g.analytic,
            format!("bound {:.4} vs KL {:.4} (se {:.4})", g.bound, g.analytic, g.se),
        ),
        Err(e) => (false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    CriterionResult::new(7, "divergence bound", pass && secs < 30.0, detail, t)
}

pub fn check_flatness() -> CriterionResult {
    let t = Instant::now();
    let res = emit_f_curves(&FDivSpec::ALL, &default_log_r_grid()).and_then(|table| {
        let get = |c: &str| {
            table
                .lookup(c, -3.0)
                .map(|v| v.1.abs())
                .ok_or_else(|| Error::Usage(format!("curve {c} missing")))
        };
        Ok((get("kl")?, get("nonsaturating")?, get("reverse_kl")?))
    });
    let (pass, detail) = match res {
        Ok((kl, ns, rkl)) => {
            let target_kl = 2.0 * (-3f64).exp();
            let target_ns = 1.0 / (1.0 + (-3f64).exp());
            let close = (kl - target_kl).abs() < CURVE_TOLERANCE
                && (ns - target_ns).abs() < CURVE_TOLERANCE
                && (rkl - 1.0).abs() < CURVE_TOLERANCE;
            (
                close && kl < ns && kl < rkl,
                format!("|slope| at log r = -3: kl {kl:.6}, nonsaturating {ns:.6}, reverse_kl {rkl:.6}"),
            )
        }
        Err(e) => (false, e.to_string()),
    };
    CriterionResult::new(8, "flatness ordering", pass, detail, t)
}

/// Training recipe for the ring fixture.
pub fn ring_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(
        RatioLoss::Cpe(ScoringRule::Bernoulli),
        GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating),
    );
    cfg.iterations = 5000;
    cfg.batch_size = 256;
    cfg.optimizer = OptimizerKind::Adam {
        lr: 1e-3,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    cfg.instance_noise = 0.1;
    cfg.seed = seed;
    cfg.log_every = 500;
    cfg
}

pub fn ring_fixture() -> MixtureSpec {
    MixtureSpec::ring(8, 2.0, 0.05).expect("valid ring")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RingOutcome {
    pub mmd2: f64,
    pub covered: usize,
    pub histogram: Vec<usize>,
    pub report: TrainReport,
}

/// Trains on the ring and scores the generator on 2000 held-out points.
pub fn run_ring(seed: u64) -> Result<RingOutcome> {
    let ring = ring_fixture();
    let density: Density = ring.clone().into();
    let mut rng = RngState::new(seed);
    let gen = GeneratorModel::Net(GeneratorNet::desk_default(&mut rng));
    let ratio = RatioNet::desk_default(Head::Probability, &mut rng);
    let out = train(ring_config(seed), DataSource::Density(density.clone()), gen, Some(ratio))?;
    let mut eval_rng = rng.split(99);
    let heldout = density.sample(2000, &mut eval_rng)?.points;
    let fake = out.generator.sample(2000, &mut eval_rng)?;
    let sigma = median_heuristic(&heldout, &fake)?.sigma;
    let mmd2 = mmd2_unbiased(&KernelSpec::rbf(sigma)?, &heldout, &fake)?;
    let cov = mode_coverage(&fake, &ring, 2.0 * 0.05)?;
    Ok(RingOutcome {
        mmd2,
        covered: cov.covered,
        histogram: cov.histogram,
        report: out.report,
    })
}

pub fn check_ring() -> CriterionResult {
    let t = Instant::now();
    let (pass, detail) = match run_ring(11) {
        Ok(r) => (
            r.mmd2 < RING_MMD && r.covered >= RING_MIN_COVERED,
            format!("mmd2_unbiased {:.5}, covered {}/8 {:?}", r.mmd2, r.covered, r.histogram),
        ),
        Err(e) => (false, e.to_string()),
    };
    let secs = t.elapsed().as_secs_f64();
    CriterionResult::new(9, "ring training", pass && secs < 600.0, detail, t)
}

/// Bernoulli ratio training with the generator replaced by the data source.
pub fn run_fixed_point(seed: u64) -> Result<TrainReport> {
    let data = DataSource::Density(GaussianSpec::standard(2).into());
    let mut rng = RngState::new(seed);
    let ratio = RatioNet::desk_default(Head::Probability, &mut rng);
    let mut cfg = TrainConfig::new(
        RatioLoss::Cpe(ScoringRule::Bernoulli),
        GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating),
    );
    cfg.iterations = 500;
    cfg.log_every = 1;
    cfg.seed = seed;
    Ok(train(cfg, data.clone(), GeneratorModel::Fixed(data), Some(ratio))?.report)
}

pub fn check_fixed_point() -> CriterionResult {
    let t = Instant::now();
    let ln2 = 2f64.ln();
    let (pass, detail) = match run_fixed_point(12) {
        Ok(rep) => {
            let loss_dev = rep.records.iter().map(|r| (r.ratio_loss - ln2).abs()).fold(0.0, f64::max);
            let d_dev = rep
                .records
                .iter()
                .map(|r| (r.mean_d_real - 0.5).abs().max((r.mean_d_gen - 0.5).abs()))
                .fold(0.0, f64::max);
            (
                rep.records.len() == 500 && loss_dev <= FIXED_POINT_BAND && d_dev <= FIXED_POINT_BAND,
                format!("max |loss - log 2| {loss_dev:.4}, max |D - 1/2| {d_dev:.4} over 500 iterations"),
            )
        }
        Err(e) => (false, e.to_string()),
    };
    CriterionResult::new(10, "indistinguishability fixed point", pass, detail, t)
}

fn determinism_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.iterations = 60;
    cfg.train.log_every = 10;
    cfg.train.eval_n = 200;
    cfg.train.gradcheck_seeds = 2;
    cfg.train.seed = 5;
    cfg.model.ref_mean = vec![1.0, 0.0];
    cfg.output.divergence_n = 2000;
    cfg.output.grid_n = 11;
    cfg
}

/// Runs every non-benchmark command twice into `scratch` and compares the
/// CSV outputs byte for byte.
pub fn check_determinism(scratch: &Path) -> CriterionResult {
    let t = Instant::now();
    let mut res: Result<Vec<String>> = Ok(Vec::new());
    for cmd in [Command::Train, Command::EstimateRatio, Command::Curves, Command::Gradcheck] {
        let mut cfg = determinism_config();
        if cmd == Command::EstimateRatio {
            cfg.model.generator = crate::config::GeneratorKind::Reference;
        }
        let outcome = (|| {
            let a = scratch.join(format!("{}-1", cmd.name()));
            let b = scratch.join(format!("{}-2", cmd.name()));
            run_command(cmd, &cfg, Path::new("."), &a)?;
            run_command(cmd, &cfg, Path::new("."), &b)?;
            let mut files: Vec<String> = Vec::new();
            for entry in std::fs::read_dir(&a)? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".csv") {
                    let (x, y) = (std::fs::read(a.join(&name))?, std::fs::read(b.join(&name))?);
                    if x != y {
                        return Err(Error::Usage(format!("{} differs between runs", name)));
                    }
                    files.push(format!("{}/{name}", cmd.name()));
                }
            }
            Ok(files)
        })();
        res = match (res, outcome) {
            (Ok(mut acc), Ok(f)) => {
                acc.extend(f);
                Ok(acc)
            }
            (Err(e), _) | (_, Err(e)) => Err(e),
        };
    }
    let (pass, detail) = match res {
        Ok(mut files) => {
            files.sort();
            (!files.is_empty(), format!("identical: {}", files.join(", ")))
        }
        Err(e) => (false, e.to_string()),
    };
    CriterionResult::new(11, "determinism", pass, detail, t)
}

/// Mean and standard error of the unbiased MMD² over same-distribution
/// resamples.
pub fn unbiased_null_mean(resamples: usize, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = RngState::new(seed);
    let density: Density = GaussianSpec::standard(2).into();
    let k = KernelSpec::rbf(1.0)?;
    let vals = (0..resamples)
        .map(|_| {
            let x = density.sample(n, &mut rng)?.points;
            let y = density.sample(n, &mut rng)?.points;
            mmd2_unbiased(&k, &x, &y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = vals.iter().sum::<f64>() / resamples as f64;
    let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples - 1) as f64;
    Ok((m, (var / resamples as f64).sqrt()))
}

pub fn check_mmd_sanity() -> CriterionResult {
    let t = Instant::now();
    let mut rng = RngState::new(13);
    let x = normal_matrix(&mut rng, 300, 2, 0.0);
    let res = mmd2_biased(&KernelSpec::rbf(1.0).expect("valid"), &x, &x)
        .and_then(|self_mmd| Ok((self_mmd, unbiased_null_mean(200, 500, 14)?)));
    let (pass, detail) = match res {
        Ok((self_mmd, (m, se))) => (
            self_mmd == 0.0 && m.abs() <= 3.0 * se,
            format!("biased(X, X) = {self_mmd}, unbiased null mean {m:.2e} (se {se:.2e})"),
        ),
        Err(e) => (false, e.to_string()),
    };
    CriterionResult::new(12, "mmd sanity", pass, detail, t)
}

/// Runs every criterion in order. `scratch` receives the determinism runs.
pub fn run_all(scratch: &Path) -> Vec<CriterionResult> {
    let mut out = vec![
        check_gradients(),
        check_conjugate_identity(),
        check_bregman_equivalence(),
        check_lsif_bridge(),
        check_gan_recovery(),
    ];
    let t = Instant::now();
    let net = train_recovery_net(6);
    let train_seconds = t.elapsed().as_secs_f64();
    out.push(check_ratio_recovery(&net, train_seconds));
    out.push(check_divergence_bound(&net));
    out.push(check_flatness());
    out.push(check_ring());
    out.push(check_fixed_point());
    out.push(check_determinism(scratch));
    out.push(check_mmd_sanity());
    out
}
