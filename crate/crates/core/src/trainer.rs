//! Alternating bi-level training.
//!
//! Each outer iteration runs `ratio_steps` descent steps on the ratio loss,
//! updating only the ratio parameters `φ`, then one descent step on the
//! generator loss, updating only the generator parameters `θ`. Any ratio
//! loss composes with any compatible generator loss.
//!
//! Report CSV columns, in order:
//!
//! | column          | meaning                                               |
//! |-----------------|-------------------------------------------------------|
//! | `iter`          | 1-based outer iteration                               |
//! | `ratio_loss`    | ratio loss of the last ratio step                     |
//! | `gen_loss`      | generator loss of the generator step                  |
//! | `mean_d_real`   | mean `D` on the last real batch                       |
//! | `mean_d_gen`    | mean `D` on the last generated batch                  |
//! | `clamp_count`   | cumulative clamp events                               |
//! | `mmd2_unbiased` | unbiased MMD² of fresh generated vs held-out real     |
//!
//! Empty cells mark values that do not apply to the run. Wall time is kept on
//! the in-memory records only, so report files are reproducible byte for byte.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::autodiff::{Graph, ParamVector, Var};
use crate::error::{Error, Result};
use crate::fdiv::{fdiv_generator_loss, fdiv_generator_loss_graph, fdiv_ratio_loss, fdiv_ratio_loss_graph, FDivSpec};
use crate::matrix::Matrix;
use crate::models::{GeneratorNet, Head, RatioNet, RatioOutput};
use crate::moments::{
    median_heuristic, mmd2_biased_graph, mmd2_unbiased, moment_loss_graph, KernelChoice, KernelSpec, TestStatistic,
};
use crate::prob::{Density, GaussianSpec, SampleBatch};
use crate::ratio::{
    family_generator_loss, family_generator_loss_graph, family_ratio_loss, family_ratio_loss_graph, RatioFamily,
};
use crate::rng::RngState;
use crate::scoring::{
    generator_loss_cpe, generator_loss_cpe_graph, ratio_loss_cpe, ratio_loss_cpe_graph, ClassBalance, GeneratorVariant,
    ScoringRule,
};

/// Points used to fix the training-kernel bandwidth at startup.
const KERNEL_CALIBRATION_N: usize = 500;

/// Where real samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Density(Density),
    /// Finite dataset; minibatches are drawn with replacement.
    Dataset(Matrix),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Density(d) => d.dim(),
            DataSource::Dataset(m) => m.cols(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        match self {
            DataSource::Density(d) => Ok(d.sample(n, rng)?.points),
            DataSource::Dataset(m) => {
                if m.rows() == 0 {
                    return Err(Error::Usage("dataset is empty".into()));
                }
                let idx: Vec<usize> = (0..n).map(|_| rng.index(m.rows())).collect();
                Ok(m.select_rows(&idx))
            }
        }
    }
}

impl From<Density> for DataSource {
    fn from(d: Density) -> Self {
        DataSource::Density(d)
    }
}

impl From<GaussianSpec> for DataSource {
    fn from(g: GaussianSpec) -> Self {
        DataSource::Density(g.into())
    }
}

/// The model side of the game.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorModel {
    Net(GeneratorNet),
    /// A fixed sampler. Generator steps are skipped.
    Fixed(DataSource),
}

impl GeneratorModel {
    pub fn data_dim(&self) -> usize {
        match self {
            GeneratorModel::Net(n) => n.data_dim(),
            GeneratorModel::Fixed(s) => s.dim(),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        match self {
            GeneratorModel::Net(net) => Ok(net.generate(&net.sample_latent(n, rng)?)?.points),
            GeneratorModel::Fixed(s) => s.sample(n, rng),
        }
    }
}

/// Loss fitting the ratio network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioLoss {
    /// No ratio network; only valid with a moment-matching generator loss.
    None,
    Cpe(ScoringRule),
    FDiv(FDivSpec),
    Family(RatioFamily),
}

impl RatioLoss {
    /// Loss value on network outputs: discriminator values for CPE rules,
    /// ratio values otherwise.
    pub fn evaluate(self, real: &[f64], gen: &[f64], pi: ClassBalance) -> Result<f64> {
        match self {
            RatioLoss::None => Err(Error::Usage("no ratio loss configured".into())),
            RatioLoss::Cpe(rule) => ratio_loss_cpe(rule, real, gen, pi),
            RatioLoss::FDiv(spec) => fdiv_ratio_loss(spec, real, gen),
            RatioLoss::Family(fam) => family_ratio_loss(fam, real, gen),
        }
    }

    /// Head the ratio network must carry for this loss.
    pub fn head(self) -> Option<Head> {
        match self {
            RatioLoss::None => None,
            RatioLoss::Cpe(_) => Some(Head::Probability),
            RatioLoss::FDiv(_) => Some(Head::Unconstrained),
            RatioLoss::Family(_) => Some(Head::Positive),
        }
    }

    pub fn registered_names() -> Vec<String> {
        let mut names = vec!["none".to_string()];
        names.extend(ScoringRule::DIFFERENTIABLE.iter().map(|r| r.name().to_string()));
        names.extend(FDivSpec::ALL.iter().map(|s| format!("fdiv:{s}")));
        names.push("lsif".into());
        names.push("kliep".into());
        names.extend(FDivSpec::ALL.iter().map(|s| format!("bregman:{s}")));
        names
    }
}

impl fmt::Display for RatioLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioLoss::None => f.write_str("none"),
            RatioLoss::Cpe(r) => r.fmt(f),
            RatioLoss::FDiv(s) => write!(f, "fdiv:{s}"),
            RatioLoss::Family(fam) => fam.fmt(f),
        }
    }
}

impl FromStr for RatioLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(RatioLoss::None);
        }
        if let Some(spec) = s.strip_prefix("fdiv:") {
            return Ok(RatioLoss::FDiv(spec.parse()?));
        }
        if let Ok(fam) = s.parse::<RatioFamily>() {
            return Ok(RatioLoss::Family(fam));
        }
        let rule: ScoringRule = s
            .parse()
            .map_err(|_| Error::Usage(format!("unknown ratio loss `{s}`")))?;
        if !rule.is_differentiable() {
            return Err(Error::Usage(format!(
                "`{s}` is evaluation-only and cannot be used as a training loss"
            )));
        }
        Ok(RatioLoss::Cpe(rule))
    }
}

/// Loss driving the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorLoss {
    Cpe(GeneratorVariant),
    FDiv(FDivSpec),
    Family(RatioFamily),
    /// Biased MMD² against the real batch.
    Mmd,
    /// Raw-moment matching up to the given order.
    Moments(usize),
}

impl GeneratorLoss {
    /// Loss value on network outputs at generated points, read as in
    /// [`RatioLoss::evaluate`]. Sample-based losses need both batches and
    /// are not available here.
    pub fn evaluate(self, gen: &[f64]) -> Result<f64> {
        match self {
            GeneratorLoss::Cpe(v) => generator_loss_cpe(v, gen),
            GeneratorLoss::FDiv(spec) => fdiv_generator_loss(spec, gen),
            GeneratorLoss::Family(fam) => family_generator_loss(fam, gen),
            GeneratorLoss::Mmd | GeneratorLoss::Moments(_) => Err(Error::Unsupported(format!(
                "`{self}` compares samples, not network outputs"
            ))),
        }
    }

    pub fn needs_ratio(self) -> bool {
        !matches!(self, GeneratorLoss::Mmd | GeneratorLoss::Moments(_))
    }

    pub fn registered_names() -> Vec<String> {
        let mut names: Vec<String> = GeneratorVariant::ALL.iter().map(|v| v.name().to_string()).collect();
        names.extend(FDivSpec::ALL.iter().map(|s| format!("fdiv:{s}")));
        names.push("lsif".into());
        names.extend(FDivSpec::ALL.iter().map(|s| format!("bregman:{s}")));
        names.push("mmd".into());
        names.push("moments:2".into());
        names
    }
}

impl fmt::Display for GeneratorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorLoss::Cpe(v) => f.write_str(v.name()),
            GeneratorLoss::FDiv(s) => write!(f, "fdiv:{s}"),
            GeneratorLoss::Family(fam) => fam.fmt(f),
            GeneratorLoss::Mmd => f.write_str("mmd"),
            GeneratorLoss::Moments(k) => write!(f, "moments:{k}"),
        }
    }
}

impl FromStr for GeneratorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mmd" {
            return Ok(GeneratorLoss::Mmd);
        }
        if let Some(k) = s.strip_prefix("moments:") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Usage(format!("bad moment order in `{s}`")))?;
            if k == 0 {
                return Err(Error::Usage("moment order must be >= 1".into()));
            }
            return Ok(GeneratorLoss::Moments(k));
        }
        if let Some(spec) = s.strip_prefix("fdiv:") {
            return Ok(GeneratorLoss::FDiv(spec.parse()?));
        }
        if let Ok(v) = s.parse::<GeneratorVariant>() {
            return Ok(GeneratorLoss::Cpe(v));
        }
        match s.parse::<RatioFamily>() {
            Ok(fam) => Ok(GeneratorLoss::Family(fam)),
            Err(_) => Err(Error::Usage(format!("unknown generator loss `{s}`"))),
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerKind::Sgd { lr } => lr > 0.0 && lr.is_finite(),
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && lr.is_finite() && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "invalid optimizer {self:?}: need lr > 0, 0 <= beta < 1, eps > 0"
            )))
        }
    }
}

/// Optimizer moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One update of `params` from `grads`.
pub fn optimizer_step(state: &mut OptimizerState, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
    if !params.same_layout(grads) || state.m.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.t += 1;
    match state.kind {
        OptimizerKind::Sgd { lr } => {
            for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam { lr, beta1, beta2, eps } => {
            let t = state.t as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                let g = grads.values()[i];
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mhat = state.m[i] / c1;
                let vhat = state.v[i] / c2;
                params.values_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

fn noise_matrix(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Matrix {
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Matrix::from_vec(rows, cols, data).expect("noise shape")
}

fn add_noise(points: &Matrix, std: f64, rng: &mut RngState) -> Matrix {
    if std == 0.0 {
        return points.clone();
    }
    let mut out = points.clone();
    for v in out.as_mut_slice() {
        *v += std * rng.normal();
    }
    out
}

/// Adds i.i.d. `N(0, std²)` noise to every coordinate. The trainer calls
/// this on real and generated batches alike, with independent draws.
pub fn add_instance_noise(batch: &SampleBatch, std: f64, rng: &mut RngState) -> Result<SampleBatch> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Usage(format!("instance noise std must be >= 0, got {std}")));
    }
    SampleBatch::new(add_noise(&batch.points, std, rng), batch.source, batch.seed_trace)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ratio_loss: RatioLoss,
    pub gen_loss: GeneratorLoss,
    pub ratio_steps: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub iterations: usize,
    pub pi: ClassBalance,
    /// Initial instance-noise std.
    pub instance_noise: f64,
    /// Decay the noise linearly to zero over the run.
    pub noise_decay: bool,
    /// Kernel for the MMD generator loss.
    pub kernel: KernelChoice,
    pub seed: u64,
    pub log_every: usize,
    /// Held-out sample size for the MMD column; 0 disables it.
    pub eval_n: usize,
}

impl TrainConfig {
    pub fn new(ratio_loss: RatioLoss, gen_loss: GeneratorLoss) -> Self {
        Self {
            ratio_loss,
            gen_loss,
            ratio_steps: 1,
            optimizer: OptimizerKind::adam(1e-3),
            batch_size: 256,
            iterations: 1000,
            pi: ClassBalance::balanced(),
            instance_noise: 0.0,
            noise_decay: true,
            kernel: KernelChoice::RbfMedian,
            seed: 0,
            log_every: 100,
            eval_n: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.iterations == 0 || self.batch_size == 0 || self.ratio_steps == 0 || self.log_every == 0 {
            return Err(Error::Usage(
                "iterations, batch_size, ratio_steps and log_every must be >= 1".into(),
            ));
        }
        if !(self.instance_noise >= 0.0) || !self.instance_noise.is_finite() {
            return Err(Error::Usage("instance noise std must be >= 0".into()));
        }
        if self.eval_n == 1 {
            return Err(Error::Usage("eval_n must be 0 or >= 2".into()));
        }
        if let GeneratorLoss::Family(RatioFamily::Kliep) = self.gen_loss {
            return Err(Error::Usage(
                "kliep cannot drive the generator: its objective needs log q, which implicit models lack".into(),
            ));
        }
        if self.gen_loss.needs_ratio() && self.ratio_loss == RatioLoss::None {
            return Err(Error::Usage(format!(
                "generator loss `{}` needs a ratio loss",
                self.gen_loss
            )));
        }
        Ok(())
    }

    /// Instance-noise std at 0-based iteration `it`.
    pub fn noise_at(&self, it: usize) -> f64 {
        if self.noise_decay {
            self.instance_noise * (1.0 - it as f64 / self.iterations as f64)
        } else {
            self.instance_noise
        }
    }
}

/// One logged row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub ratio_loss: f64,
    pub gen_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_gen: f64,
    pub clamp_count: u64,
    pub mmd2_unbiased: Option<f64>,
    pub wall_seconds: f64,
}

/// Trajectory of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub ratio_loss: RatioLoss,
    pub gen_loss: GeneratorLoss,
    pub records: Vec<TrainRecord>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "iter",
    "ratio_loss",
    "gen_loss",
    "mean_d_real",
    "mean_d_gen",
    "clamp_count",
    "mmd2_unbiased",
];

fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

impl TrainReport {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_COLUMNS)?;
        for r in &self.records {
            out.write_record([
                r.iter.to_string(),
                cell(r.ratio_loss),
                cell(r.gen_loss),
                cell(r.mean_d_real),
                cell(r.mean_d_gen),
                r.clamp_count.to_string(),
                r.mmd2_unbiased.map(cell).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Statistics of one ratio step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioStepStats {
    pub loss: f64,
    pub mean_d_real: f64,
    pub mean_d_gen: f64,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub generator: GeneratorModel,
    pub ratio: Option<RatioNet>,
}

/// Stepwise driver of the bi-level loop.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    data: DataSource,
    generator: GeneratorModel,
    ratio: Option<RatioNet>,
    opt_ratio: Option<OptimizerState>,
    opt_gen: Option<OptimizerState>,
    data_rng: RngState,
    gen_rng: RngState,
    noise_rng: RngState,
    eval_rng: RngState,
    kernel: Option<KernelSpec>,
    statistic: Option<TestStatistic>,
    heldout: Option<(Matrix, KernelSpec)>,
    clamp_count: u64,
    iter: usize,
}

fn mean_of(m: &Matrix) -> f64 {
    m.as_slice().iter().sum::<f64>() / m.len() as f64
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: DataSource, generator: GeneratorModel, ratio: Option<RatioNet>) -> Result<Self> {
        cfg.validate()?;
        let dim = data.dim();
        if generator.data_dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: generator.data_dim(),
            });
        }
        match (cfg.ratio_loss.head(), &ratio) {
            (Some(head), Some(net)) => {
                if net.head != head {
                    return Err(Error::Usage(format!(
                        "ratio loss `{}` needs a {head:?} head, network has {:?}",
                        cfg.ratio_loss, net.head
                    )));
                }
                if net.data_dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: net.data_dim(),
                    });
                }
            }
            (Some(_), None) => {
                return Err(Error::Usage(format!(
                    "ratio loss `{}` needs a ratio network",
                    cfg.ratio_loss
                )))
            }
            (None, _) => {}
        }
        if matches!(generator, GeneratorModel::Fixed(_)) && cfg.ratio_loss == RatioLoss::None {
            return Err(Error::Usage("nothing to train: fixed generator and no ratio loss".into()));
        }
        let ratio = if cfg.ratio_loss == RatioLoss::None { None } else { ratio };

        let mut root = RngState::new(cfg.seed);
        let mut data_rng = root.split(1);
        let mut gen_rng = root.split(2);
        let noise_rng = root.split(3);
        let mut eval_rng = root.split(4);

        let kernel = if cfg.gen_loss == GeneratorLoss::Mmd {
            let x = data.sample(KERNEL_CALIBRATION_N, &mut data_rng)?;
            let y = generator.sample(KERNEL_CALIBRATION_N, &mut gen_rng)?;
            Some(cfg.kernel.resolve(&x, &y)?)
        } else {
            None
        };
        let statistic = match cfg.gen_loss {
            GeneratorLoss::Moments(order) => Some(TestStatistic::RawMoments { order }),
            _ => None,
        };
        let heldout = if cfg.eval_n >= 2 {
            let x = data.sample(cfg.eval_n, &mut eval_rng)?;
            let bw = median_heuristic(&x, &Matrix::zeros(0, dim))?;
            Some((x, KernelSpec::rbf(bw.sigma)?))
        } else {
            None
        };
        let opt_ratio = ratio.as_ref().map(|r| OptimizerState::new(cfg.optimizer, r.params().len()));
        let opt_gen = match &generator {
            GeneratorModel::Net(n) => Some(OptimizerState::new(cfg.optimizer, n.params().len())),
            GeneratorModel::Fixed(_) => None,
        };
        Ok(Self {
            cfg,
            data,
            generator,
            ratio,
            opt_ratio,
            opt_gen,
            data_rng,
            gen_rng,
            noise_rng,
            eval_rng,
            kernel,
            statistic,
            heldout,
            clamp_count: 0,
            iter: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &GeneratorModel {
        &self.generator
    }

    pub fn ratio(&self) -> Option<&RatioNet> {
        self.ratio.as_ref()
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    fn diverged(&self, loss: String, detail: String) -> Error {
        Error::Diverged {
            iter: self.iter + 1,
            loss,
            clamp_count: self.clamp_count,
            detail,
        }
    }

    fn guard<T>(&self, loss: String, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::GraphDomain { .. } | Error::NonFinite(_) => self.diverged(loss, e.to_string()),
            other => other,
        })
    }

    fn ratio_loss_on(&self, g: &mut Graph, real: RatioOutput, gen: RatioOutput) -> Result<Var> {
        match self.cfg.ratio_loss {
            RatioLoss::None => Err(Error::Usage("no ratio loss configured".into())),
            RatioLoss::Cpe(rule) => {
                let dr = real.disc(g)?;
                let dg = gen.disc(g)?;
                ratio_loss_cpe_graph(g, rule, dr, dg, self.cfg.pi)
            }
            RatioLoss::FDiv(spec) => {
                let rr = real.ratio(g)?;
                let rg = gen.ratio(g)?;
                fdiv_ratio_loss_graph(g, spec, rr, rg)
            }
            RatioLoss::Family(fam) => {
                let rr = real.ratio(g)?;
                let rg = gen.ratio(g)?;
                family_ratio_loss_graph(g, fam, rr, rg)
            }
        }
    }

    /// One descent step on the ratio loss. Generator parameters are untouched.
    pub fn ratio_step(&mut self) -> Result<RatioStepStats> {
        let name = self.cfg.ratio_loss.to_string();
        let Some(net) = self.ratio.as_ref() else {
            return Err(Error::Usage("no ratio network to train".into()));
        };
        let n = self.cfg.batch_size;
        let std = self.cfg.noise_at(self.iter);
        let real = self.data.sample(n, &mut self.data_rng)?;
        let fake = self.generator.sample(n, &mut self.gen_rng)?;
        let real = add_noise(&real, std, &mut self.noise_rng);
        let fake = add_noise(&fake, std, &mut self.noise_rng);

        let mut g = Graph::new();
        let b = g.bind(net.params());
        let xr = g.constant(real);
        let xg = g.constant(fake);
        let built = (|| {
            let or = net.forward(&mut g, b, xr)?;
            let og = net.forward(&mut g, b, xg)?;
            let loss = self.ratio_loss_on(&mut g, or, og)?;
            let dr = or.disc(&mut g)?;
            let dg = og.disc(&mut g)?;
            Ok((loss, dr, dg))
        })();
        let (loss, dr, dg) = self.guard(name.clone(), built)?;
        let value = g.scalar_value(loss).expect("scalar loss");
        let stats = RatioStepStats {
            loss: value,
            mean_d_real: mean_of(g.value(dr)),
            mean_d_gen: mean_of(g.value(dg)),
        };
        let grads = self.guard(name.clone(), g.backward(loss))?;
        let pg = g.param_gradient(&grads, b);
        if !pg.values().iter().all(|v| v.is_finite()) {
            return Err(self.diverged(name, "non-finite ratio gradient".into()));
        }
        self.clamp_count += g.clamp_count();
        let net = self.ratio.as_mut().expect("checked above");
        optimizer_step(self.opt_ratio.as_mut().expect("paired with net"), net.params_mut(), &pg)?;
        Ok(stats)
    }

    /// Generator loss and its gradient with respect to `θ`, without updating.
    pub fn generator_gradient(&mut self) -> Result<(f64, ParamVector)> {
        let name = self.cfg.gen_loss.to_string();
        let GeneratorModel::Net(gen) = &self.generator else {
            return Err(Error::Usage("fixed generators have no parameters".into()));
        };
        let n = self.cfg.batch_size;
        let std = self.cfg.noise_at(self.iter);
        let z = gen.sample_latent(n, &mut self.gen_rng)?.points;
        let noise = if std > 0.0 {
            Some(noise_matrix(n, gen.data_dim(), std, &mut self.noise_rng))
        } else {
            None
        };
        let real = if self.cfg.gen_loss.needs_ratio() {
            None
        } else {
            Some(self.data.sample(n, &mut self.data_rng)?)
        };

        let mut g = Graph::new();
        let bg = g.bind(gen.params());
        let zv = g.constant(z);
        let built = (|| {
            let mut x = gen.forward(&mut g, bg, zv)?;
            if let Some(noise) = noise {
                let nv = g.constant(noise);
                x = g.add(x, nv)?;
            }
            let loss = match self.cfg.gen_loss {
                GeneratorLoss::Mmd | GeneratorLoss::Moments(_) => {
                    let xr = g.constant(real.expect("sampled above"));
                    match (&self.kernel, &self.statistic) {
                        (Some(k), _) => mmd2_biased_graph(&mut g, k, xr, x)?,
                        (_, Some(s)) => moment_loss_graph(&mut g, s, xr, x)?,
                        _ => unreachable!("kernel or statistic set at construction"),
                    }
                }
                other => {
                    let net = self.ratio.as_ref().expect("validated: loss needs ratio");
                    let br = g.bind(net.params());
                    let out = net.forward(&mut g, br, x)?;
                    match other {
                        GeneratorLoss::Cpe(v) => {
                            let d = out.disc(&mut g)?;
                            generator_loss_cpe_graph(&mut g, v, d)?
                        }
                        GeneratorLoss::FDiv(spec) => {
                            let r = out.ratio(&mut g)?;
                            fdiv_generator_loss_graph(&mut g, spec, r)?
                        }
                        GeneratorLoss::Family(fam) => {
                            let r = out.ratio(&mut g)?;
                            family_generator_loss_graph(&mut g, fam, r)?
                        }
                        _ => unreachable!(),
                    }
                }
            };
            Ok(loss)
        })();
        let loss = self.guard(name.clone(), built)?;
        let value = g.scalar_value(loss).expect("scalar loss");
        let grads = self.guard(name.clone(), g.backward(loss))?;
        let pg = g.param_gradient(&grads, bg);
        if !pg.values().iter().all(|v| v.is_finite()) {
            return Err(self.diverged(name, "non-finite generator gradient".into()));
        }
        self.clamp_count += g.clamp_count();
        Ok((value, pg))
    }

    /// One descent step on the generator loss. Ratio parameters are untouched.
    pub fn generator_step(&mut self) -> Result<f64> {
        let (value, pg) = self.generator_gradient()?;
        let GeneratorModel::Net(gen) = &mut self.generator else {
            unreachable!("generator_gradient rejects fixed generators")
        };
        optimizer_step(self.opt_gen.as_mut().expect("paired with net"), gen.params_mut(), &pg)?;
        Ok(value)
    }

    fn heldout_mmd(&mut self) -> Result<Option<f64>> {
        let Some((x, k)) = &self.heldout else { return Ok(None) };
        let y = self.generator.sample(x.rows(), &mut self.eval_rng)?;
        Ok(Some(mmd2_unbiased(k, x, &y)?))
    }

    /// Runs one outer iteration, returning a record if it is a logging one.
    pub fn iterate(&mut self, started: Instant) -> Result<Option<TrainRecord>> {
        let mut stats = RatioStepStats {
            loss: f64::NAN,
            mean_d_real: f64::NAN,
            mean_d_gen: f64::NAN,
        };
        if self.ratio.is_some() {
            for _ in 0..self.cfg.ratio_steps {
                stats = self.ratio_step()?;
            }
        }
        let gen_loss = match self.generator {
            GeneratorModel::Net(_) => self.generator_step()?,
            GeneratorModel::Fixed(_) => f64::NAN,
        };
        self.iter += 1;
        let done = self.iter;
        if !done.is_multiple_of(self.cfg.log_every) && done != self.cfg.iterations {
            return Ok(None);
        }
        let mmd = self.heldout_mmd()?;
        Ok(Some(TrainRecord {
            iter: done,
            ratio_loss: stats.loss,
            gen_loss,
            mean_d_real: stats.mean_d_real,
            mean_d_gen: stats.mean_d_gen,
            clamp_count: self.clamp_count,
            mmd2_unbiased: mmd,
            wall_seconds: started.elapsed().as_secs_f64(),
        }))
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let started = Instant::now();
        let mut records = Vec::new();
        while self.iter < self.cfg.iterations {
            if let Some(r) = self.iterate(started)? {
                records.push(r);
            }
        }
        Ok(TrainOutcome {
            report: TrainReport {
                ratio_loss: self.cfg.ratio_loss,
                gen_loss: self.cfg.gen_loss,
                records,
            },
            generator: self.generator,
            ratio: self.ratio,
        })
    }
}

/// Runs the full bi-level loop.
pub fn train(
    cfg: TrainConfig,
    data: DataSource,
    generator: GeneratorModel,
    ratio: Option<RatioNet>,
) -> Result<TrainOutcome> {
    Trainer::new(cfg, data, generator, ratio)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::{GaussianSpec, Source};
    use approx::assert_abs_diff_eq;

    fn params(values: Vec<f64>) -> ParamVector {
        let mut p = ParamVector::zeros([("p", 1, values.len())]);
        p.values_mut().copy_from_slice(&values);
        p
    }

    #[test]
    fn sgd_step() {
        let mut p = params(vec![1.0]);
        let mut st = OptimizerState::new(OptimizerKind::Sgd { lr: 0.1 }, 1);
        optimizer_step(&mut st, &mut p, &params(vec![2.0])).unwrap();
        assert_abs_diff_eq!(p.values()[0], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn adam_steps() {
        let mut p = params(vec![1.0, -2.0]);
        let mut st = OptimizerState::new(OptimizerKind::adam(0.01), 2);
        optimizer_step(&mut st, &mut p, &params(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.values(), &[1.0, -2.0]);

        let lr = 0.01;
        let mut p = params(vec![1.0]);
        let mut st = OptimizerState::new(OptimizerKind::adam(lr), 1);
        optimizer_step(&mut st, &mut p, &params(vec![3.0])).unwrap();
        // m̂ = c, v̂ = c², step = lr·c/(c + ε).
        assert_abs_diff_eq!(1.0 - p.values()[0], lr, epsilon = 1e-6);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn optimizer_rejects_layout_mismatch() {
        let mut p = params(vec![1.0, 2.0]);
        let mut st = OptimizerState::new(OptimizerKind::Sgd { lr: 0.1 }, 2);
        assert!(optimizer_step(&mut st, &mut p, &params(vec![1.0])).is_err());
    }

    #[test]
    fn instance_noise() {
        let mut rng = RngState::new(3);
        let pts = Matrix::from_vec(100_000, 2, (0..200_000).map(|_| 2.0 * rng.normal()).collect()).unwrap();
        let batch = SampleBatch::new(pts, Source::Real, 0).unwrap();
        assert_eq!(add_instance_noise(&batch, 0.0, &mut rng).unwrap(), batch);
        let noisy = add_instance_noise(&batch, 1.0, &mut rng).unwrap();
        for c in 0..2 {
            let var = |m: &Matrix| {
                let col: Vec<f64> = m.iter_rows().map(|r| r[c]).collect();
                let mu = col.iter().sum::<f64>() / col.len() as f64;
                col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (col.len() - 1) as f64
            };
            let inc = var(&noisy.points) - var(&batch.points);
            assert!((inc - 1.0).abs() < 0.03, "variance increase {inc}");
        }
        assert!(add_instance_noise(&batch, -1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_schedule_decays_linearly() {
        let mut cfg = TrainConfig::new(RatioLoss::Cpe(ScoringRule::Bernoulli), GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating));
        cfg.instance_noise = 0.4;
        cfg.iterations = 4;
        assert_eq!(cfg.noise_at(0), 0.4);
        assert_abs_diff_eq!(cfg.noise_at(2), 0.2, epsilon = 1e-15);
        cfg.noise_decay = false;
        assert_eq!(cfg.noise_at(3), 0.4);
    }

    #[test]
    fn value_level_losses_dispatch_by_name() {
        let (d, r) = ([0.3, 0.6], [0.5, 2.0]);
        let b = ClassBalance::balanced();
        let bern: RatioLoss = "bernoulli".parse().unwrap();
        assert_eq!(bern.evaluate(&d, &d, b).unwrap(), ratio_loss_cpe(ScoringRule::Bernoulli, &d, &d, b).unwrap());
        let kl: RatioLoss = "fdiv:kl".parse().unwrap();
        assert_eq!(kl.evaluate(&r, &r, b).unwrap(), fdiv_ratio_loss(FDivSpec::KL, &r, &r).unwrap());
        assert!(RatioLoss::None.evaluate(&r, &r, b).is_err());
        let lsif: GeneratorLoss = "lsif".parse().unwrap();
        // mean(r (r − 1)) over r = ½, 2.
        assert_eq!(lsif.evaluate(&r).unwrap(), 0.875);
        assert!(matches!(GeneratorLoss::Mmd.evaluate(&r), Err(Error::Unsupported(_))));
    }

    #[test]
    fn loss_names_roundtrip() {
        for n in RatioLoss::registered_names() {
            assert_eq!(n.parse::<RatioLoss>().unwrap().to_string(), n);
        }
        for n in GeneratorLoss::registered_names() {
            assert_eq!(n.parse::<GeneratorLoss>().unwrap().to_string(), n);
        }
        assert!("misclassification".parse::<RatioLoss>().is_err());
        assert!("moments:0".parse::<GeneratorLoss>().is_err());
        assert!("fdiv:hellinger".parse::<RatioLoss>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::new(RatioLoss::Family(RatioFamily::Kliep), GeneratorLoss::Family(RatioFamily::Kliep));
        assert!(cfg.validate().is_err());
        cfg.gen_loss = GeneratorLoss::Family(RatioFamily::Lsif);
        cfg.validate().unwrap();
        cfg.optimizer = OptimizerKind::Sgd { lr: 0.0 };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig::new(RatioLoss::None, GeneratorLoss::Cpe(GeneratorVariant::Minimax));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn head_mismatch_is_rejected() {
        let mut rng = RngState::new(1);
        let cfg = TrainConfig::new(RatioLoss::Family(RatioFamily::Lsif), GeneratorLoss::Family(RatioFamily::Lsif));
        let data = DataSource::Density(GaussianSpec::standard(2).into());
        let gen = GeneratorModel::Net(GeneratorNet::desk_default(&mut rng));
        let ratio = RatioNet::desk_default(Head::Probability, &mut rng);
        assert!(Trainer::new(cfg, data, gen, Some(ratio)).is_err());
    }

    #[test]
    fn diverged_run_reports_snapshot() {
        let mut rng = RngState::new(2);
        let mut cfg = TrainConfig::new(RatioLoss::Cpe(ScoringRule::Bernoulli), GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating));
        cfg.iterations = 5;
        let data = DataSource::Density(GaussianSpec::standard(2).into());
        let gen = GeneratorModel::Net(GeneratorNet::desk_default(&mut rng));
        let mut ratio = RatioNet::desk_default(Head::Probability, &mut rng);
        ratio.params_mut().values_mut()[0] = f64::NAN;
        match train(cfg, data, gen, Some(ratio)) {
            Err(Error::Diverged { iter, loss, .. }) => {
                assert!(iter >= 1);
                assert!(!loss.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
