//! Run configuration.
//!
//! One `section.key = value` per line; `#` starts a comment; later keys
//! override earlier ones. Sections are `data`, `model`, `loss`, `train` and
//! `output`. Every key has a default, so an empty document is valid.
//! Lists are comma-separated; lists of vectors (`data.means`, `data.vars`)
//! separate vectors with `;`.
//!
//! ```text
//! data.source = ring          # gaussian | mixture | ring | csv
//! loss.ratio = bernoulli
//! loss.generator = nonsaturating
//! train.iterations = 5000
//! ```

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{GeneratorNet, RatioNet};
use crate::moments::KernelChoice;
use crate::prob::{Density, GaussianSpec, MixtureSpec};
use crate::rng::RngState;
use crate::scoring::{ClassBalance, GeneratorVariant, ScoringRule};
use crate::trainer::{DataSource, GeneratorLoss, GeneratorModel, OptimizerKind, RatioLoss, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Gaussian,
    Mixture,
    Ring,
    Csv,
}

impl DataKind {
    fn name(self) -> &'static str {
        match self {
            DataKind::Gaussian => "gaussian",
            DataKind::Mixture => "mixture",
            DataKind::Ring => "ring",
            DataKind::Csv => "csv",
        }
    }
}

impl FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "gaussian" => DataKind::Gaussian,
            "mixture" => DataKind::Mixture,
            "ring" => DataKind::Ring,
            "csv" => DataKind::Csv,
            _ => return Err("expected gaussian, mixture, ring or csv".into()),
        })
    }
}

/// What plays the model side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// A trainable generator network.
    Net,
    /// The data source itself.
    Data,
    /// The fixed Gaussian `N(model.ref_mean, diag(model.ref_var))`.
    Reference,
}

impl GeneratorKind {
    fn name(self) -> &'static str {
        match self {
            GeneratorKind::Net => "net",
            GeneratorKind::Data => "data",
            GeneratorKind::Reference => "reference",
        }
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "net" => GeneratorKind::Net,
            "data" => GeneratorKind::Data,
            "reference" => GeneratorKind::Reference,
            _ => return Err("expected net, data or reference".into()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataKind,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    pub ring_modes: usize,
    pub ring_radius: f64,
    pub ring_std: f64,
    pub path: String,
    /// When > 0, a fixed dataset of this size is drawn once from the spec.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub generator: GeneratorKind,
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub ratio_hidden: Vec<usize>,
    pub ref_mean: Vec<f64>,
    pub ref_var: Vec<f64>,
    /// When > 0, the reference is a fixed dataset of this size.
    pub ref_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSection {
    pub ratio: RatioLoss,
    pub generator: GeneratorLoss,
    pub kernel: KernelChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub ratio_steps: usize,
    pub optimizer: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub pi: ClassBalance,
    pub instance_noise: f64,
    pub noise_decay: bool,
    pub seed: u64,
    pub log_every: usize,
    pub eval_n: usize,
    pub gradcheck_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub dir: String,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
    pub curve_lo: f64,
    pub curve_hi: f64,
    pub curve_n: usize,
    pub svg: bool,
    pub divergence_n: usize,
}

/// Parsed configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection {
                source: DataKind::Gaussian,
                mean: vec![0.0, 0.0],
                var: vec![1.0, 1.0],
                weights: vec![1.0],
                means: vec![vec![0.0, 0.0]],
                vars: vec![vec![1.0, 1.0]],
                ring_modes: 8,
                ring_radius: 2.0,
                ring_std: 0.05,
                path: String::new(),
                n: 0,
            },
            model: ModelSection {
                generator: GeneratorKind::Net,
                latent_dim: 2,
                gen_hidden: vec![32, 32],
                ratio_hidden: vec![32, 32],
                ref_mean: vec![1.0, 1.0],
                ref_var: vec![1.0, 1.0],
                ref_n: 0,
            },
            loss: LossSection {
                ratio: RatioLoss::Cpe(ScoringRule::Bernoulli),
                generator: GeneratorLoss::Cpe(GeneratorVariant::Nonsaturating),
                kernel: KernelChoice::RbfMedian,
            },
            train: TrainSection {
                iterations: 1000,
                batch_size: 256,
                ratio_steps: 1,
                optimizer: "adam".into(),
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                pi: ClassBalance::balanced(),
                instance_noise: 0.0,
                noise_decay: true,
                seed: 0,
                log_every: 100,
                eval_n: 0,
                gradcheck_seeds: 100,
            },
            output: OutputSection {
                dir: "out".into(),
                grid_lo: -2.0,
                grid_hi: 3.0,
                grid_n: 101,
                curve_lo: -5.0,
                curve_hi: 5.0,
                curve_n: 201,
                svg: true,
                divergence_n: 100_000,
            },
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("bad list element `{}`", s.trim())))
        .collect()
}

fn parse_nested(v: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    v.split(';').map(|s| parse_list(s.trim())).collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_nested(v: &[Vec<f64>]) -> String {
    v.iter().map(|x| join(x)).collect::<Vec<_>>().join(";")
}

fn scalar<T: FromStr>(v: &str, what: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got `{v}`"))
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = scalar(v, "a number")?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be > 0, got {v}"))
    }
}

fn nonneg(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = scalar(v, "a number")?;
    if x >= 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be >= 0, got {v}"))
    }
}

fn named<T: FromStr<Err = Error>>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|e: Error| e.to_string())
}

/// Every accepted key, in serialization order.
pub const KEYS: [&str; 46] = [
    "data.source",
    "data.mean",
    "data.var",
    "data.weights",
    "data.means",
    "data.vars",
    "data.ring_modes",
    "data.ring_radius",
    "data.ring_std",
    "data.path",
    "data.n",
    "model.generator",
    "model.latent_dim",
    "model.gen_hidden",
    "model.ratio_hidden",
    "model.ref_mean",
    "model.ref_var",
    "model.ref_n",
    "loss.ratio",
    "loss.generator",
    "loss.kernel",
    "train.iterations",
    "train.batch_size",
    "train.ratio_steps",
    "train.optimizer",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.pi",
    "train.instance_noise",
    "train.noise_decay",
    "train.seed",
    "train.log_every",
    "train.eval_n",
    "train.gradcheck_seeds",
    "output.dir",
    "output.grid_lo",
    "output.grid_hi",
    "output.grid_n",
    "output.curve_lo",
    "output.curve_hi",
    "output.curve_n",
    "output.svg",
    "output.divergence_n",
    "output.format",
];

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (d, m, l, t, o) = (
            &mut self.data,
            &mut self.model,
            &mut self.loss,
            &mut self.train,
            &mut self.output,
        );
        match key {
            "data.source" => d.source = v.parse()?,
            "data.mean" => d.mean = parse_list(v)?,
            "data.var" => d.var = parse_list(v)?,
            "data.weights" => d.weights = parse_list(v)?,
            "data.means" => d.means = parse_nested(v)?,
            "data.vars" => d.vars = parse_nested(v)?,
            "data.ring_modes" => d.ring_modes = scalar(v, "an integer")?,
            "data.ring_radius" => d.ring_radius = positive(v)?,
            "data.ring_std" => d.ring_std = positive(v)?,
            "data.path" => d.path = v.to_string(),
            "data.n" => d.n = scalar(v, "an integer")?,
            "model.generator" => m.generator = v.parse()?,
            "model.latent_dim" => m.latent_dim = scalar(v, "an integer")?,
            "model.gen_hidden" => m.gen_hidden = parse_list(v)?,
            "model.ratio_hidden" => m.ratio_hidden = parse_list(v)?,
            "model.ref_mean" => m.ref_mean = parse_list(v)?,
            "model.ref_var" => m.ref_var = parse_list(v)?,
            "model.ref_n" => m.ref_n = scalar(v, "an integer")?,
            "loss.ratio" => l.ratio = named(v)?,
            "loss.generator" => l.generator = named(v)?,
            "loss.kernel" => l.kernel = named(v)?,
            "train.iterations" => t.iterations = scalar(v, "an integer")?,
            "train.batch_size" => t.batch_size = scalar(v, "an integer")?,
            "train.ratio_steps" => t.ratio_steps = scalar(v, "an integer")?,
            "train.optimizer" => {
                if v != "adam" && v != "sgd" {
                    return Err("expected adam or sgd".into());
                }
                t.optimizer = v.to_string();
            }
            "train.lr" => t.lr = positive(v)?,
            "train.beta1" => t.beta1 = nonneg(v)?,
            "train.beta2" => t.beta2 = nonneg(v)?,
            "train.eps" => t.eps = positive(v)?,
            "train.pi" => t.pi = ClassBalance::new(scalar(v, "a number")?).map_err(|e| e.to_string())?,
            "train.instance_noise" => t.instance_noise = nonneg(v)?,
            "train.noise_decay" => t.noise_decay = scalar(v, "true or false")?,
            "train.seed" => t.seed = scalar(v, "an unsigned integer")?,
            "train.log_every" => t.log_every = scalar(v, "an integer")?,
            "train.eval_n" => t.eval_n = scalar(v, "an integer")?,
            "train.gradcheck_seeds" => t.gradcheck_seeds = scalar(v, "an integer")?,
            "output.dir" => o.dir = v.to_string(),
            "output.grid_lo" => o.grid_lo = scalar(v, "a number")?,
            "output.grid_hi" => o.grid_hi = scalar(v, "a number")?,
            "output.grid_n" => o.grid_n = scalar(v, "an integer")?,
            "output.curve_lo" => o.curve_lo = scalar(v, "a number")?,
            "output.curve_hi" => o.curve_hi = scalar(v, "a number")?,
            "output.curve_n" => o.curve_n = scalar(v, "an integer")?,
            "output.svg" => o.svg = scalar(v, "true or false")?,
            "output.divergence_n" => o.divergence_n = scalar(v, "an integer")?,
            "output.format" => {
                if v != "csv" {
                    return Err("only csv output is supported".into());
                }
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical document listing every key.
    pub fn serialize(&self) -> String {
        let (d, m, l, t, o) = (&self.data, &self.model, &self.loss, &self.train, &self.output);
        let pairs: Vec<(&str, String)> = vec![
            ("data.source", d.source.name().into()),
            ("data.mean", join(&d.mean)),
            ("data.var", join(&d.var)),
            ("data.weights", join(&d.weights)),
            ("data.means", join_nested(&d.means)),
            ("data.vars", join_nested(&d.vars)),
            ("data.ring_modes", d.ring_modes.to_string()),
            ("data.ring_radius", d.ring_radius.to_string()),
            ("data.ring_std", d.ring_std.to_string()),
            ("data.path", d.path.clone()),
            ("data.n", d.n.to_string()),
            ("model.generator", m.generator.name().into()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.gen_hidden", join(&m.gen_hidden)),
            ("model.ratio_hidden", join(&m.ratio_hidden)),
            ("model.ref_mean", join(&m.ref_mean)),
            ("model.ref_var", join(&m.ref_var)),
            ("model.ref_n", m.ref_n.to_string()),
            ("loss.ratio", l.ratio.to_string()),
            ("loss.generator", l.generator.to_string()),
            ("loss.kernel", l.kernel.to_string()),
            ("train.iterations", t.iterations.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.ratio_steps", t.ratio_steps.to_string()),
            ("train.optimizer", t.optimizer.clone()),
            ("train.lr", t.lr.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.pi", t.pi.pi().to_string()),
            ("train.instance_noise", t.instance_noise.to_string()),
            ("train.noise_decay", t.noise_decay.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.log_every", t.log_every.to_string()),
            ("train.eval_n", t.eval_n.to_string()),
            ("train.gradcheck_seeds", t.gradcheck_seeds.to_string()),
            ("output.dir", o.dir.clone()),
            ("output.grid_lo", o.grid_lo.to_string()),
            ("output.grid_hi", o.grid_hi.to_string()),
            ("output.grid_n", o.grid_n.to_string()),
            ("output.curve_lo", o.curve_lo.to_string()),
            ("output.curve_hi", o.curve_hi.to_string()),
            ("output.curve_n", o.curve_n.to_string()),
            ("output.svg", o.svg.to_string()),
            ("output.divergence_n", o.divergence_n.to_string()),
            ("output.format", "csv".into()),
        ];
        let mut out = String::new();
        let mut section = "";
        for (k, v) in pairs {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# [{s}]");
                section = s;
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn check(&self, lines: &HashMap<&'static str, usize>) -> Result<()> {
        let at = |key: &str| lines.get(key).copied().unwrap_or(0);
        let err = |key: &str, message: String| Error::Config { line: at(key), message };
        let d = &self.data;
        match d.source {
            DataKind::Csv if d.path.is_empty() => {
                return Err(err("data.source", "data.source = csv requires data.path".into()));
            }
            DataKind::Mixture if d.weights.len() != d.means.len() || d.means.len() != d.vars.len() => {
                return Err(err(
                    "data.weights",
                    format!(
                        "mixture needs one weight, mean and var per component (got {}, {}, {})",
                        d.weights.len(),
                        d.means.len(),
                        d.vars.len()
                    ),
                ));
            }
            _ => {}
        }
        if d.source != DataKind::Csv {
            self.density().map_err(|e| err("data.source", e.to_string()))?;
        }
        if self.model.generator == GeneratorKind::Reference {
            self.reference().map_err(|e| err("model.ref_mean", e.to_string()))?;
        }
        if self.model.latent_dim == 0 {
            return Err(err("model.latent_dim", "must be >= 1".into()));
        }
        self.train_config()
            .validate()
            .map_err(|e| err("loss.generator", e.to_string()))?;
        if self.output.grid_n == 0 || self.output.curve_n < 2 {
            return Err(err("output.grid_n", "grid sizes must be >= 1 (curves >= 2)".into()));
        }
        Ok(())
    }

    /// Fixture density of the data section. Errors for `csv` sources.
    pub fn density(&self) -> Result<Density> {
        let d = &self.data;
        Ok(match d.source {
            DataKind::Gaussian => GaussianSpec::new(d.mean.clone(), d.var.clone())?.into(),
            DataKind::Mixture => MixtureSpec::new(
                d.weights
                    .iter()
                    .zip(&d.means)
                    .zip(&d.vars)
                    .map(|((&w, m), v)| Ok((w, GaussianSpec::new(m.clone(), v.clone())?)))
                    .collect::<Result<Vec<_>>>()?,
            )?
            .into(),
            DataKind::Ring => MixtureSpec::ring(d.ring_modes, d.ring_radius, d.ring_std)?.into(),
            DataKind::Csv => {
                return Err(Error::Unsupported("csv data has no analytic density".into()));
            }
        })
    }

    pub fn reference(&self) -> Result<Density> {
        Ok(GaussianSpec::new(self.model.ref_mean.clone(), self.model.ref_var.clone())?.into())
    }

    /// Real-data source. Reads `data.path` relative to `base` for csv data.
    pub fn data_source(&self, base: &Path, rng: &mut RngState) -> Result<DataSource> {
        if self.data.source == DataKind::Csv {
            return Ok(DataSource::Dataset(load_csv(&base.join(&self.data.path))?));
        }
        let density = self.density()?;
        if self.data.n > 0 {
            Ok(DataSource::Dataset(density.sample(self.data.n, rng)?.points))
        } else {
            Ok(DataSource::Density(density))
        }
    }

    pub fn generator_model(&self, data: &DataSource, rng: &mut RngState) -> Result<GeneratorModel> {
        let m = &self.model;
        Ok(match m.generator {
            GeneratorKind::Net => {
                GeneratorModel::Net(GeneratorNet::new(m.latent_dim, &m.gen_hidden, data.dim(), rng)?)
            }
            GeneratorKind::Data => GeneratorModel::Fixed(data.clone()),
            GeneratorKind::Reference => {
                let density = self.reference()?;
                if m.ref_n > 0 {
                    GeneratorModel::Fixed(DataSource::Dataset(density.sample(m.ref_n, rng)?.points))
                } else {
                    GeneratorModel::Fixed(DataSource::Density(density))
                }
            }
        })
    }

    pub fn ratio_net(&self, dim: usize, rng: &mut RngState) -> Result<Option<RatioNet>> {
        match self.loss.ratio.head() {
            Some(head) => Ok(Some(RatioNet::new(dim, &self.model.ratio_hidden, head, rng)?)),
            None => Ok(None),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let optimizer = if t.optimizer == "sgd" {
            OptimizerKind::Sgd { lr: t.lr }
        } else {
            OptimizerKind::Adam {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            }
        };
        TrainConfig {
            ratio_loss: self.loss.ratio,
            gen_loss: self.loss.generator,
            ratio_steps: t.ratio_steps,
            optimizer,
            batch_size: t.batch_size,
            iterations: t.iterations,
            pi: t.pi,
            instance_noise: t.instance_noise,
            noise_decay: t.noise_decay,
            kernel: self.loss.kernel,
            seed: t.seed,
            log_every: t.log_every,
            eval_n: t.eval_n,
        }
    }
}

/// Parses a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<&'static str, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected `section.key = value`, got `{body}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(Error::Config {
                line,
                message: format!("unknown key `{key}`"),
            });
        };
        cfg.set(known, value).map_err(|message| Error::Config {
            line,
            message: format!("{key}: {message}"),
        })?;
        lines.insert(known, line);
    }
    cfg.check(&lines)?;
    Ok(cfg)
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_config(s)
    }
}

/// Reads real-valued rows. A first row that does not parse as numbers is
/// taken to be a header.
pub fn load_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("{}: non-numeric field", path.display()),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Io(format!("{}: no data rows", path.display())));
    }
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiv::FDivSpec;
    use crate::ratio::RatioFamily;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn selects_rules_and_overrides() {
        let c = parse_config("loss.ratio = brier\nloss.ratio = bernoulli # later wins\n").unwrap();
        assert_eq!(c.loss.ratio, RatioLoss::Cpe(ScoringRule::Bernoulli));
        let c = parse_config("loss.ratio = bregman:kl\nloss.generator = lsif").unwrap();
        assert_eq!(c.loss.ratio, RatioLoss::Family(RatioFamily::Bregman(FDivSpec::KL)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("# c\n\ntrain.pi = 1.5\n").unwrap_err();
        match e {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("0 < π < 1"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("train.bogus = 1"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse_config("\ntrain.iterations = ten"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(parse_config("just text"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(
            parse_config("data.source = csv"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("x = 1\nloss.generator = kliep"),
            Err(Error::Config { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("loss.ratio = lsif\nloss.generator = kliep"),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn serialization_roundtrip() {
        let text = "data.source = mixture\ndata.weights = 0.25,0.75\ndata.means = 0,0;1.5,-2\n\
                    data.vars = 1,1;0.5,0.5\nloss.kernel = poly:3:1\ntrain.seed = 18446744073709551615\n\
                    train.lr = 0.0003\noutput.svg = false\n";
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.serialize()).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.serialize(), c.serialize());
    }

    #[test]
    fn every_key_is_serialized() {
        let s = RunConfig::default().serialize();
        for k in KEYS {
            assert!(s.contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn csv_loading_detects_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "x,y\n1,2\n3.5,-4\n").unwrap();
        let m = load_csv(&p).unwrap();
        assert_eq!(m.shape(), (2, 2));
        std::fs::write(&p, "1,2\n3,4\n").unwrap();
        assert_eq!(load_csv(&p).unwrap().rows(), 2);
        std::fs::write(&p, "1,2\nfoo,4\n").unwrap();
        assert!(load_csv(&p).is_err());
    }
}
