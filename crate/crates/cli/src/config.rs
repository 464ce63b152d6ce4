//! Command-line flags, the TOML config file, and their resolution into one
//! validated [`ExperimentConfig`]. Precedence: flags, then the config file,
//! then built-in defaults (`DLN_OUT_DIR` supplies the default output
//! directory).

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use dln::flows::Scheme;
use dln::Field;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const OUT_DIR_ENV: &str = "DLN_OUT_DIR";

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Layer width.
    #[arg(long)]
    pub d: Option<usize>,
    /// Depth (number of layers).
    #[arg(long = "N", value_name = "N")]
    pub n: Option<usize>,
    /// `real` or `complex`.
    #[arg(long)]
    pub field: Option<Field>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: $DLN_OUT_DIR, else .]
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    /// Gradient flow of the ridge norm on the fiber.
    Reg,
    /// Gradient flow of ||G||^2 on the fiber.
    Ness,
    /// Ambient gradient flow of the loss.
    Learn,
    /// Loss plus weight decay kappa.
    Combined,
    /// Loss plus weight decay plus noise (Euler-Maruyama).
    Langevin,
    /// Weight decay plus noise (Euler-Maruyama).
    Ou,
}

impl FlowKind {
    pub fn name(self) -> &'static str {
        match self {
            FlowKind::Reg => "reg",
            FlowKind::Ness => "ness",
            FlowKind::Learn => "learn",
            FlowKind::Combined => "combined",
            FlowKind::Langevin => "langevin",
            FlowKind::Ou => "ou",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, FlowKind::Langevin | FlowKind::Ou)
    }

    pub fn uses_loss(self) -> bool {
        matches!(self, FlowKind::Learn | FlowKind::Combined | FlowKind::Langevin)
    }
}

#[derive(Args, Debug, Clone)]
pub struct FlowArgs {
    #[arg(value_enum)]
    pub kind: FlowKind,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Initial chain: `random`, `center`, comma-separated entries
    /// (W_N first, each layer row-major), or a chain JSON file.
    #[arg(long)]
    pub init: Option<String>,
    /// End-to-end matrix for `--init center`: `random`, entries, or a file.
    #[arg(long)]
    pub x: Option<String>,
    /// Loss target Y for E(X) = ||X - Y||^2 / 2: `random`, entries, or a file.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// `rk4` or `euler` (deterministic flows).
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Write a trace row every this many steps.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Stochastic flows: time before statistics are accumulated.
    #[arg(long)]
    pub burn_in: Option<f64>,
    /// Stochastic flows: accumulate statistics every this many steps.
    #[arg(long)]
    pub sample_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MinimizeKind {
    Ridge,
    Schatten,
}

#[derive(Args, Debug, Clone)]
pub struct MinimizeArgs {
    #[arg(value_enum)]
    pub kind: MinimizeKind,
    #[command(flatten)]
    pub common: CommonArgs,
    /// End-to-end matrix: `random`, comma-separated entries, or a file.
    #[arg(long)]
    pub x: Option<String>,
    /// Schatten exponent, 1 < p < inf.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct RealizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// State-space JSON file; a random system is drawn when absent.
    #[arg(long)]
    pub system: Option<PathBuf>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub inputs: Option<usize>,
    #[arg(long)]
    pub outputs: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    CorruptHOperator,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Random instances per pointwise check.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Restarts for the Kempf-Ness check.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Test hook: inject a known defect.
    #[arg(long, value_enum, hide = true)]
    pub fault: Option<FaultArg>,
}

/// Layout of the config file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub d: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub field: Option<Field>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub flow: FlowSection,
    pub integrator: IntegratorSection,
    pub stochastic: StochasticSection,
    pub minimize: MinimizeSection,
    pub realize: RealizeSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub init: Option<String>,
    pub x: Option<String>,
    pub target: Option<String>,
    pub kappa: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub scheme: Option<Scheme>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticSection {
    pub burn_in: Option<f64>,
    pub sample_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeSection {
    pub x: Option<String>,
    pub p: Option<f64>,
    pub restarts: Option<usize>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealizeSection {
    pub system: Option<PathBuf>,
    pub states: Option<usize>,
    pub inputs: Option<usize>,
    pub outputs: Option<usize>,
    pub restarts: Option<usize>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub samples: Option<usize>,
    pub trials: Option<usize>,
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::invalid("config", format!("{}: {}", path.display(), e.message())))
}

/// Where a matrix or chain comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Random,
    Center,
    Entries(Vec<f64>),
    File(PathBuf),
}

impl Source {
    pub fn parse(field: &str, s: &str, allow_center: bool) -> Result<Self> {
        let s = s.trim();
        match s {
            "random" => return Ok(Source::Random),
            "center" if allow_center => return Ok(Source::Center),
            _ => {}
        }
        let looks_numeric = s.chars().next().is_some_and(|c| c.is_ascii_digit() || "+-.".contains(c));
        if looks_numeric {
            let values = s
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CliError::invalid(field, format!("`{s}`: {e}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::invalid(field, "entries must be finite"));
            }
            return Ok(Source::Entries(values));
        }
        Ok(Source::File(PathBuf::from(s)))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(CliError::invalid(field, "must be at least 1"))
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub d: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub field: Field,
    pub seed: u64,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Common {
    fn resolve(args: &CommonArgs, file: &FileConfig) -> Result<Self> {
        let out_dir = args
            .out_dir
            .clone()
            .or_else(|| file.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        let common = Common {
            d: args.d.or(file.d),
            n: args.n.or(file.n),
            field: pick(args.field, file.field, Field::Real),
            seed: pick(args.seed, file.seed, 0),
            out_dir,
        };
        if let Some(d) = common.d {
            at_least_one("d", d)?;
        }
        if let Some(n) = common.n {
            if n < 2 {
                return Err(CliError::invalid("N", format!("depth must be at least 2, got {n}")));
            }
        }
        Ok(common)
    }

    pub fn d(&self) -> Result<usize> {
        self.d.ok_or_else(|| CliError::missing("d"))
    }

    pub fn n(&self) -> Result<usize> {
        self.n.ok_or_else(|| CliError::missing("N"))
    }
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub common: Common,
    #[serde(flatten)]
    pub task: Task,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Task {
    Flow(FlowConfig),
    Minimize(MinimizeConfig),
    Realize(RealizeConfig),
    Verify(VerifyConfig),
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub init: Source,
    pub x: Source,
    pub target: Option<Source>,
    pub kappa: Option<f64>,
    pub beta: Option<f64>,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub stride: usize,
    pub burn_in: Option<f64>,
    pub sample_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimizeConfig {
    pub kind: MinimizeKind,
    pub x: Source,
    pub p: Option<f64>,
    pub restarts: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RealizeConfig {
    pub system: Option<PathBuf>,
    pub states: Option<usize>,
    pub inputs: usize,
    pub outputs: usize,
    pub restarts: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    pub samples: usize,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<&'static str>,
}

impl ExperimentConfig {
    pub fn flow(args: &FlowArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let common = Common::resolve(&args.common, &file)?;
        common.d()?;
        common.n()?;
        let kind = args.kind;
        let f = &file.flow;
        let init = Source::parse("init", &pick(args.init.clone(), f.init.clone(), "random".into()), true)?;
        let x = Source::parse("x", &pick(args.x.clone(), f.x.clone(), "random".into()), false)?;
        let target = if kind.uses_loss() {
            Some(Source::parse("target", &pick(args.target.clone(), f.target.clone(), "random".into()), false)?)
        } else {
            None
        };
        let kappa = match kind {
            FlowKind::Combined => {
                let k = pick(args.kappa, f.kappa, 1.0);
                if !(k >= 0.0 && k.is_finite()) {
                    return Err(CliError::invalid("kappa", format!("must be non-negative, got {k}")));
                }
                Some(k)
            }
            FlowKind::Langevin | FlowKind::Ou => Some(positive("kappa", pick(args.kappa, f.kappa, 1.0))?),
            _ => None,
        };
        let beta = if kind.stochastic() {
            let b = pick(args.beta, f.beta, 1.0);
            if b.is_nan() || b <= 0.0 {
                return Err(CliError::invalid("beta", format!("must be positive, got {b}")));
            }
            Some(b)
        } else {
            None
        };
        let i = &file.integrator;
        let dt = positive("dt", pick(args.dt, i.dt, 1e-3))?;
        let t_end = pick(args.t_end, i.t_end, 1.0);
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(CliError::invalid("t_end", format!("must be non-negative, got {t_end}")));
        }
        let stride = at_least_one("stride", pick(args.stride, i.stride, 1))?;
        let s = &file.stochastic;
        let (burn_in, sample_every) = if kind.stochastic() {
            let b = pick(args.burn_in, s.burn_in, 0.0);
            if !(b >= 0.0 && b.is_finite()) {
                return Err(CliError::invalid("burn_in", format!("must be non-negative, got {b}")));
            }
            (Some(b), Some(at_least_one("sample_every", pick(args.sample_every, s.sample_every, 1))?))
        } else {
            (None, None)
        };
        Ok(ExperimentConfig {
            common,
            task: Task::Flow(FlowConfig {
                kind,
                init,
                x,
                target,
                kappa,
                beta,
                scheme: pick(args.scheme, i.scheme, Scheme::Rk4),
                dt,
                t_end,
                stride,
                burn_in,
                sample_every,
            }),
        })
    }

    pub fn minimize(args: &MinimizeArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let common = Common::resolve(&args.common, &file)?;
        common.d()?;
        common.n()?;
        let m = &file.minimize;
        let x = Source::parse("x", &pick(args.x.clone(), m.x.clone(), "random".into()), false)?;
        let p = match args.kind {
            MinimizeKind::Ridge => None,
            MinimizeKind::Schatten => {
                let p = args.p.or(m.p).ok_or_else(|| CliError::missing("p"))?;
                if !(p > 1.0 && p.is_finite()) {
                    return Err(CliError::invalid("p", format!("must lie in (1, inf), got {p}")));
                }
                Some(p)
            }
        };
        let init_scale = pick(args.init_scale, m.init_scale, 0.5);
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(CliError::invalid("init_scale", format!("must be non-negative, got {init_scale}")));
        }
        Ok(ExperimentConfig {
            common,
            task: Task::Minimize(MinimizeConfig {
                kind: args.kind,
                x,
                p,
                restarts: at_least_one("restarts", pick(args.restarts, m.restarts, 4))?,
                init_scale,
            }),
        })
    }

    pub fn realize(args: &RealizeArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let common = Common::resolve(&args.common, &file)?;
        let r = &file.realize;
        let system = args.system.clone().or_else(|| r.system.clone());
        let states = args.states.or(r.states);
        if system.is_none() {
            at_least_one("states", states.ok_or_else(|| CliError::missing("states"))?)?;
        }
        let init_scale = pick(args.init_scale, r.init_scale, 0.0);
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(CliError::invalid("init_scale", format!("must be non-negative, got {init_scale}")));
        }
        Ok(ExperimentConfig {
            common,
            task: Task::Realize(RealizeConfig {
                system,
                states,
                inputs: at_least_one("inputs", pick(args.inputs, r.inputs, 1))?,
                outputs: at_least_one("outputs", pick(args.outputs, r.outputs, 1))?,
                restarts: at_least_one("restarts", pick(args.restarts, r.restarts, 1))?,
                init_scale,
            }),
        })
    }

    pub fn verify(args: &VerifyArgs) -> Result<Self> {
        let file = load_file(args.common.config.as_deref())?;
        let mut common = Common::resolve(&args.common, &file)?;
        common.d.get_or_insert(2);
        common.n.get_or_insert(3);
        let v = &file.verify;
        Ok(ExperimentConfig {
            common,
            task: Task::Verify(VerifyConfig {
                samples: at_least_one("samples", pick(args.samples, v.samples, 20))?,
                trials: at_least_one("trials", pick(args.trials, v.trials, 8))?,
                fault: args.fault.map(|_| "corrupt_h_operator"),
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_parse() {
        assert_eq!(Source::parse("x", "random", false).unwrap(), Source::Random);
        assert_eq!(Source::parse("x", "2, 1", false).unwrap(), Source::Entries(vec![2.0, 1.0]));
        assert_eq!(Source::parse("x", "-0.5", false).unwrap(), Source::Entries(vec![-0.5]));
        assert_eq!(Source::parse("x", "x.json", false).unwrap(), Source::File("x.json".into()));
        assert_eq!(Source::parse("init", "center", true).unwrap(), Source::Center);
        assert!(Source::parse("x", "1,a", false).is_err());
    }

    #[test]
    fn file_config_rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("d = 2\nN = 3\n[integrator]\ndt = 0.01\n").is_ok());
        assert!(toml::from_str::<FileConfig>("depth = 3\n").is_err());
    }
}
