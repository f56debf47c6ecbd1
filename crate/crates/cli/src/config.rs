//! Run configuration: command-line flags over an optional JSON file over
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use zok::eval::{EvalOptions, GridSpec, ScalingMode};
use zok::{Error, KernelSpec, Result, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    Gaussian,
    Poly,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingArg {
    Train,
    Whole,
    None,
}

impl From<ScalingArg> for ScalingMode {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::Train => ScalingMode::Train,
            ScalingArg::Whole => ScalingMode::Whole,
            ScalingArg::None => ScalingMode::None,
        }
    }
}

/// Flags shared by every subcommand that reads a dataset. Each one also
/// has a same-named field in the JSON config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// JSON file with defaults for any of these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Inferred from the file extension when omitted
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelName>,
    /// Gaussian bandwidth, polynomial degree or sigmoid slope
    #[arg(long)]
    pub kernel_param: Option<f64>,
    /// Sigmoid offset (negative)
    #[arg(long, allow_negative_numbers = true)]
    pub sigmoid_theta: Option<f64>,
    #[arg(long = "C")]
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[arg(long)]
    pub sigma_admm: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Exponent range LO:HI of the power-of-two grid for C and the kernel
    /// parameter
    #[arg(long, allow_hyphen_values = true)]
    pub grid_log2_range: Option<String>,
    /// Comma-separated C values; overrides the log2 range for C
    #[arg(long)]
    pub grid_c: Option<String>,
    /// Comma-separated kernel parameter values; overrides the log2 range
    #[arg(long)]
    pub grid_kernel_param: Option<String>,
    /// Comma-separated sigma_admm values to search
    #[arg(long)]
    pub grid_sigma_admm: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    /// Count Gram matrix construction in the reported CPU time
    #[arg(long)]
    pub include_gram_time: Option<bool>,
    /// Comma-separated flip rates for the noise experiment
    #[arg(long)]
    pub rates: Option<String>,
    /// Re-tune hyperparameters at every noise rate
    #[arg(long)]
    pub retune: Option<bool>,
}

impl RunArgs {
    fn overlay(self, file: RunArgs) -> RunArgs {
        macro_rules! pick {
            ($($f:ident),*) => { RunArgs { config: self.config, $($f: self.$f.or(file.$f),)* } };
        }
        pick!(
            data,
            format,
            kernel,
            kernel_param,
            sigmoid_theta,
            c,
            sigma_admm,
            eta,
            max_iter,
            tol,
            folds,
            seed,
            noise_seed,
            grid_log2_range,
            grid_c,
            grid_kernel_param,
            grid_sigma_admm,
            jobs,
            out,
            scaling,
            include_gram_time,
            rates,
            retune
        )
    }
}

/// Fully resolved settings, embedded in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub format: DataFormat,
    pub kernel: KernelSpec,
    pub solver: SolverConfig,
    pub grid: GridSpec,
    pub folds: usize,
    pub seed: u64,
    pub noise_seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub scaling: ScalingMode,
    pub include_gram_time: bool,
    pub rates: Vec<f64>,
    pub retune: bool,
}

impl RunConfig {
    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            scaling: self.scaling,
            jobs: self.jobs,
            include_gram_time: self.include_gram_time,
        }
    }
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad {what} value {t:?}")))
        })
        .collect()
}

fn parse_range(raw: &str) -> Result<(i32, i32)> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| Error::Argument(format!("grid range {raw:?} is not LO:HI")))?;
    let p = |s: &str| {
        s.trim()
            .parse::<i32>()
            .map_err(|_| Error::Argument(format!("bad grid exponent {s:?}")))
    };
    Ok((p(lo)?, p(hi)?))
}

fn infer_format(path: &Path) -> DataFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
        _ => DataFormat::Libsvm,
    }
}

fn kernel_spec(name: KernelName, param: Option<f64>, theta: Option<f64>) -> Result<KernelSpec> {
    match name {
        KernelName::Gaussian => KernelSpec::gaussian(param.unwrap_or(1.0)),
        KernelName::Poly => {
            let d = param.unwrap_or(2.0);
            if d.fract() != 0.0 || d < 1.0 || d > u32::MAX as f64 {
                return Err(Error::Argument(format!("polynomial degree {d} is not a positive integer")));
            }
            KernelSpec::polynomial(d as u32)
        }
        KernelName::Sigmoid => KernelSpec::sigmoid(param.unwrap_or(2.0), theta.unwrap_or(-1.0)),
        KernelName::Linear => Ok(KernelSpec::linear()),
    }
}

pub fn resolve(cli: RunArgs) -> Result<RunConfig> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Argument(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<RunArgs>(&text)?
        }
        None => RunArgs::default(),
    };
    let a = cli.overlay(file);

    let data = a.data.ok_or_else(|| Error::Argument("--data is required".into()))?;
    if !data.is_file() {
        return Err(Error::Argument(format!("data file {} does not exist", data.display())));
    }
    let format = a.format.unwrap_or_else(|| infer_format(&data));
    let kernel = kernel_spec(a.kernel.unwrap_or(KernelName::Gaussian), a.kernel_param, a.sigmoid_theta)?;

    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        c: a.c.unwrap_or(defaults.c),
        sigma_admm: a.sigma_admm.unwrap_or(defaults.sigma_admm),
        eta: a.eta.unwrap_or(defaults.eta),
        max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        tol: a.tol.unwrap_or(defaults.tol),
        ..defaults
    };
    solver.validate()?;

    let (lo, hi) = match &a.grid_log2_range {
        Some(r) => parse_range(r)?,
        None => (-8, 8),
    };
    let mut grid = GridSpec::log2_range(lo, hi, solver.sigma_admm)?;
    if let Some(s) = &a.grid_c {
        grid.c_values = parse_list(s, "C")?;
    }
    if let Some(s) = &a.grid_kernel_param {
        grid.kernel_param_values = parse_list(s, "kernel parameter")?;
    }
    if let Some(s) = &a.grid_sigma_admm {
        grid.sigma_admm_values = parse_list(s, "sigma_admm")?;
    }
    grid.validate()?;

    let folds = a.folds.unwrap_or(10);
    if folds < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {folds}")));
    }
    let jobs = a.jobs.unwrap_or(1);
    if jobs == 0 {
        return Err(Error::Argument("--jobs must be at least 1".into()));
    }
    let rates = match &a.rates {
        Some(r) => parse_list(r, "rate")?,
        None => vec![0.05, 0.10],
    };

    Ok(RunConfig {
        data,
        format,
        kernel,
        solver,
        grid,
        folds,
        seed: a.seed.unwrap_or(0),
        noise_seed: a.noise_seed.unwrap_or(0),
        out: a.out.unwrap_or_else(|| PathBuf::from(".")),
        jobs,
        scaling: a.scaling.map(Into::into).unwrap_or_default(),
        include_gram_time: a.include_gram_time.unwrap_or(false),
        rates,
        retune: a.retune.unwrap_or(true),
    })
}
