//! Command implementations behind the `ratiobench` binary.
//!
//! Every command reads only its configuration and writes only into its
//! output directory:
//!
//! | command          | files                                                        |
//! |------------------|--------------------------------------------------------------|
//! | `train`          | `report.csv`, `generator.ckpt`, `ratio.ckpt`, `summary.txt`  |
//! | `estimate-ratio` | `report.csv`, `ratio.csv`, `ratio.ckpt`, `summary.txt`       |
//! | `curves`         | `curves.csv`, `curves.svg`, `summary.txt`                    |
//! | `gradcheck`      | `gradcheck.csv`, `summary.txt`                               |
//! | `benchmark`      | `benchmark.csv`, `summary.txt`, `determinism/`               |
//!
//! CSV files are reproducible byte for byte for a fixed seed; timings go to
//! `summary.txt` only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::bench::{run_all, run_gradchecks};
use crate::config::{DataKind, GeneratorKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{divergence_gap, emit_f_curves, mode_coverage, uniform_grid};
use crate::fdiv::FDivSpec;
use crate::models::Checkpoint;
use crate::prob::{analytic_log_ratio, Density};
use crate::rng::RngState;
use crate::trainer::{train, GeneratorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    EstimateRatio,
    Curves,
    Gradcheck,
    Benchmark,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Train,
        Command::EstimateRatio,
        Command::Curves,
        Command::Gradcheck,
        Command::Benchmark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::EstimateRatio => "estimate-ratio",
            Command::Curves => "curves",
            Command::Gradcheck => "gradcheck",
            Command::Benchmark => "benchmark",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown command `{s}`")))
    }
}

/// What a command reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    /// False when the command ran but its checks failed.
    pub success: bool,
    /// Human-readable lines, also written to `summary.txt`.
    pub lines: Vec<String>,
}

fn write_summary(out: &Path, cmd: Command, lines: &[String], started: Instant) -> Result<()> {
    let mut text = format!("command {}\n", cmd.name());
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    let _ = writeln!(text, "wall_seconds {:.3}", started.elapsed().as_secs_f64());
    fs::write(out.join("summary.txt"), text)?;
    Ok(())
}

/// Runs `cmd`. Relative data paths resolve against `base`; files go to `out`.
pub fn run_command(cmd: Command, cfg: &RunConfig, base: &Path, out: &Path) -> Result<CommandOutcome> {
    let started = Instant::now();
    fs::create_dir_all(out)?;
    let outcome = match cmd {
        Command::Train => cmd_train(cfg, base, out)?,
        Command::EstimateRatio => cmd_estimate(cfg, base, out)?,
        Command::Curves => cmd_curves(cfg, out)?,
        Command::Gradcheck => cmd_gradcheck(cfg, out)?,
        Command::Benchmark => cmd_benchmark(out)?,
    };
    write_summary(out, cmd, &outcome.lines, started)?;
    Ok(outcome)
}

fn coverage_radius(cfg: &RunConfig) -> Option<f64> {
    match cfg.data.source {
        DataKind::Ring => Some(2.0 * cfg.data.ring_std),
        DataKind::Mixture => {
            let max_var = cfg.data.vars.iter().flatten().copied().fold(0.0, f64::max);
            Some(2.0 * max_var.sqrt())
        }
        _ => None,
    }
}

fn cmd_train(cfg: &RunConfig, base: &Path, out: &Path) -> Result<CommandOutcome> {
    let mut root = RngState::new(cfg.train.seed);
    let mut build_rng = root.split(10);
    let data = cfg.data_source(base, &mut build_rng)?;
    let generator = cfg.generator_model(&data, &mut build_rng)?;
    let ratio = cfg.ratio_net(data.dim(), &mut build_rng)?;
    let res = train(cfg.train_config(), data, generator, ratio)?;

    fs::write(out.join("report.csv"), res.report.to_csv_string()?)?;
    if let GeneratorModel::Net(g) = &res.generator {
        fs::write(out.join("generator.ckpt"), Checkpoint::Generator(g.clone()).to_string())?;
    }
    if let Some(r) = &res.ratio {
        fs::write(out.join("ratio.ckpt"), Checkpoint::Ratio(r.clone()).to_string())?;
    }
    let mut lines = vec![
        format!("ratio_loss {}", cfg.loss.ratio),
        format!("generator_loss {}", cfg.loss.generator),
    ];
    if let Some(last) = res.report.last() {
        lines.push(format!("final_iter {}", last.iter));
        lines.push(format!("final_ratio_loss {}", last.ratio_loss));
        lines.push(format!("final_gen_loss {}", last.gen_loss));
        lines.push(format!("clamp_count {}", last.clamp_count));
        if let Some(m) = last.mmd2_unbiased {
            lines.push(format!("final_mmd2_unbiased {m}"));
        }
    }
    if let (Some(radius), Ok(Density::Mixture(mix))) = (coverage_radius(cfg), cfg.density()) {
        let mut eval_rng = root.split(20);
        let pts = res.generator.sample(2000, &mut eval_rng)?;
        let cov = mode_coverage(&pts, &mix, radius)?;
        lines.push(format!("modes_covered {}/{}", cov.covered, cov.histogram.len()));
        lines.push(format!(
            "mode_histogram {}",
            cov.histogram.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
        ));
    }
    Ok(CommandOutcome { success: true, lines })
}

fn cmd_estimate(cfg: &RunConfig, base: &Path, out: &Path) -> Result<CommandOutcome> {
    if cfg.model.generator == GeneratorKind::Net {
        return Err(Error::Usage(
            "estimate-ratio needs a fixed model side: set model.generator = reference or data".into(),
        ));
    }
    let mut root = RngState::new(cfg.train.seed);
    let mut build_rng = root.split(10);
    let data = cfg.data_source(base, &mut build_rng)?;
    let generator = cfg.generator_model(&data, &mut build_rng)?;
    let ratio = cfg.ratio_net(data.dim(), &mut build_rng)?;
    let res = train(cfg.train_config(), data.clone(), generator, ratio)?;
    let net = res
        .ratio
        .ok_or_else(|| Error::Usage("estimate-ratio needs a ratio loss".into()))?;
    fs::write(out.join("report.csv"), res.report.to_csv_string()?)?;
    fs::write(out.join("ratio.ckpt"), Checkpoint::Ratio(net.clone()).to_string())?;

    let p = cfg.density().ok();
    let q = match cfg.model.generator {
        GeneratorKind::Reference => cfg.reference().ok(),
        _ => p.clone(),
    };
    let mut eval_rng = root.split(20);
    let points = if data.dim() == 1 {
        uniform_grid(cfg.output.grid_lo, cfg.output.grid_hi, cfg.output.grid_n)
    } else {
        data.sample(cfg.output.grid_n, &mut eval_rng)?
    };
    let estimate = net.eval_log_ratio(&points)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..points.cols()).map(|j| format!("x{j}")).collect();
    header.push("log_r".into());
    header.push("log_r_true".into());
    w.write_record(&header)?;
    let mut abs_err = Vec::new();
    for (x, l) in points.iter_rows().zip(&estimate) {
        let truth = match (&p, &q) {
            (Some(p), Some(q)) => Some(analytic_log_ratio(p, q, x)?),
            _ => None,
        };
        if let Some(t) = truth {
            abs_err.push((l - t).abs());
        }
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(l.to_string());
        row.push(truth.map(|t| t.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    fs::write(out.join("ratio.csv"), w.into_inner().map_err(|e| Error::Io(e.to_string()))?)?;

    let mut lines = vec![format!("ratio_loss {}", cfg.loss.ratio)];
    if !abs_err.is_empty() {
        lines.push(format!("log_ratio_mae {}", abs_err.iter().sum::<f64>() / abs_err.len() as f64));
    }
    if let (Some(p), Some(q)) = (&p, &q) {
        if cfg.output.divergence_n >= 2 {
            match divergence_gap(FDivSpec::KL, &net, p, q, cfg.output.divergence_n, &mut eval_rng) {
                Ok(g) => {
                    lines.push(format!("kl_bound {}", g.bound));
                    lines.push(format!("kl_bound_se {}", g.se));
                    lines.push(format!("kl_analytic {}", g.analytic));
                }
                Err(Error::Unsupported(m)) => lines.push(format!("kl_bound unavailable: {m}")),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CommandOutcome { success: true, lines })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn cmd_curves(cfg: &RunConfig, out: &Path) -> Result<CommandOutcome> {
    let o = &cfg.output;
    let table = emit_f_curves(&FDivSpec::ALL, &linspace(o.curve_lo, o.curve_hi, o.curve_n))?;
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    fs::write(out.join("curves.csv"), buf)?;
    if o.svg {
        fs::write(out.join("curves.svg"), table.to_svg())?;
    }
    Ok(CommandOutcome {
        success: true,
        lines: vec![format!(
            "curves {} x {} grid points",
            table.curves.len(),
            table.grid.len()
        )],
    })
}

fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<CommandOutcome> {
    let rows = run_gradchecks(cfg.train.seed, cfg.train.gradcheck_seeds.max(1))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["loss", "seeds", "max_rel_error", "pass"])?;
    let mut lines = Vec::new();
    for r in &rows {
        w.write_record([r.loss.clone(), r.seeds.to_string(), r.worst.to_string(), r.pass.to_string()])?;
        lines.push(format!("{} {} {:.3e}", if r.pass { "PASS" } else { "FAIL" }, r.loss, r.worst));
    }
    fs::write(out.join("gradcheck.csv"), w.into_inner().map_err(|e| Error::Io(e.to_string()))?)?;
    Ok(CommandOutcome {
        success: rows.iter().all(|r| r.pass),
        lines,
    })
}

fn cmd_benchmark(out: &Path) -> Result<CommandOutcome> {
    let results = run_all(&out.join("determinism"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "criterion", "pass", "detail"])?;
    let mut lines = Vec::new();
    for r in &results {
        w.write_record([r.id.to_string(), r.name.to_string(), r.pass.to_string(), r.detail.clone()])?;
        lines.push(format!(
            "{:>2} {} {:<36} {:>7.1}s  {}",
            r.id,
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.detail
        ));
    }
    fs::write(out.join("benchmark.csv"), w.into_inner().map_err(|e| Error::Io(e.to_string()))?)?;
    Ok(CommandOutcome {
        success: results.iter().all(|r| r.pass),
        lines,
    })
}

/// Machine-readable single-line form of an error.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::Dimension { .. } | Error::Shape { .. } => "dimension",
        Error::GraphDomain { .. } | Error::Domain(_) => "domain",
        Error::Usage(_) => "usage",
        Error::Unsupported(_) => "unsupported",
        Error::NonFinite(_) => "non_finite",
        Error::Diverged { .. } => "diverged",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
    };
    let line = match e {
        Error::Config { line, .. } => format!("\tline={line}"),
        _ => String::new(),
    };
    format!("error\tkind={kind}{line}\tmessage={}", e.to_string().replace(['\n', '\t'], " "))
}

/// Loads a config file and runs a command, returning the process exit code.
pub fn main_with(cmd: Command, config: &Path, out: Option<&Path>, seed: Option<u64>) -> i32 {
    let res = (|| {
        let text = fs::read_to_string(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
        let mut cfg: RunConfig = text.parse()?;
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        let out_dir = match out {
            Some(o) => o.to_path_buf(),
            None => Path::new(&cfg.output.dir).to_path_buf(),
        };
        let base = config.parent().unwrap_or(Path::new("."));
        run_command(cmd, &cfg, base, &out_dir)
    })();
    match res {
        Ok(o) => {
            for l in &o.lines {
                println!("{l}");
            }
            if o.success {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            match e {
                Error::Config { .. } | Error::Usage(_) => 2,
                _ => 3,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_roundtrip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("serve".parse::<Command>().is_err());
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = Error::Config {
            line: 4,
            message: "bad\nthing".into(),
        };
        let l = error_line(&e);
        assert!(l.starts_with("error\tkind=config\tline=4\t"));
        assert!(!l.contains('\n'));
    }

    #[test]
    fn curves_command_writes_one_row_per_point_per_curve() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        run_command(Command::Curves, &cfg, Path::new("."), dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 7 * 201);
        assert!(dir.path().join("curves.svg").exists());
        assert!(dir.path().join("summary.txt").exists());
    }

    #[test]
    fn estimate_requires_fixed_model_side() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        assert!(matches!(
            run_command(Command::EstimateRatio, &cfg, Path::new("."), dir.path()),
            Err(Error::Usage(_))
        ));
    }
}
