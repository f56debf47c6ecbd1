//! Cross-validation, grid search, linear versus Gaussian comparison and
//! label-noise experiments.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::gram_cached;
use crate::data::{apply_scaling, fit_scaling, flip_labels, stratified_kfold, Dataset, FoldPlan, NoiseSpec};
use crate::error::{Error, Result};
use crate::kernel::{GramMatrix, Kernel, KernelSpec};
use crate::model::Metrics;
use crate::solver::{train_with_gram, Certificate, SolverConfig};

/// Where the `[-1, 1]` feature scaling is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// On each training split, applied to its test split.
    #[default]
    Train,
    /// Once on the whole dataset before splitting.
    Whole,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub scaling: ScalingMode,
    /// Worker threads for grid cells; 1 runs serially.
    pub jobs: usize,
    /// Count Gram construction in `cpu_seconds`.
    pub include_gram_time: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            scaling: ScalingMode::Train,
            jobs: 1,
            include_gram_time: false,
        }
    }
}

/// Candidate hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub c_values: Vec<f64>,
    /// Gaussian bandwidths, polynomial degrees or sigmoid slopes. Ignored
    /// for the linear kernel.
    pub kernel_param_values: Vec<f64>,
    pub sigma_admm_values: Vec<f64>,
}

impl GridSpec {
    /// Powers of two from `2^lo` to `2^hi` for both C and the kernel
    /// parameter, with a single `sigma_admm`.
    pub fn log2_range(lo: i32, hi: i32, sigma_admm: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::Argument(format!("empty log2 range {lo}..{hi}")));
        }
        let values: Vec<f64> = (lo..=hi).map(|e| 2f64.powi(e)).collect();
        let g = Self {
            c_values: values.clone(),
            kernel_param_values: values,
            sigma_admm_values: vec![sigma_admm],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn single(c: f64, kernel_param: f64, sigma_admm: f64) -> Self {
        Self {
            c_values: vec![c],
            kernel_param_values: vec![kernel_param],
            sigma_admm_values: vec![sigma_admm],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("C", &self.c_values),
            ("kernel parameter", &self.kernel_param_values),
            ("sigma_admm", &self.sigma_admm_values),
        ] {
            if list.is_empty() {
                return Err(Error::Argument(format!("grid has no {name} values")));
            }
            if let Some(v) = list.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Argument(format!("grid {name} value {v} is not positive")));
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.c_values.len() * self.kernel_param_values.len() * self.sigma_admm_values.len()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::log2_range(-8, 8, 1.0).expect("static range")
    }
}

/// The kernel's tunable parameter, if it has one.
pub fn kernel_param(spec: &KernelSpec) -> Option<f64> {
    match spec.kernel {
        Kernel::Gaussian { bandwidth } => Some(bandwidth),
        Kernel::Polynomial { degree } => Some(degree as f64),
        Kernel::Sigmoid { beta, .. } => Some(beta),
        Kernel::Linear => None,
    }
}

/// `spec` with its tunable parameter replaced by `p`.
pub fn with_kernel_param(spec: &KernelSpec, p: f64) -> Result<KernelSpec> {
    let kernel = match spec.kernel {
        Kernel::Gaussian { .. } => Kernel::Gaussian { bandwidth: p },
        Kernel::Polynomial { .. } => {
            if p.fract() != 0.0 || p < 1.0 {
                return Err(Error::Argument(format!("polynomial degree {p} is not a positive integer")));
            }
            Kernel::Polynomial { degree: p as u32 }
        }
        Kernel::Sigmoid { theta, .. } => Kernel::Sigmoid { beta: p, theta },
        Kernel::Linear => Kernel::Linear,
    };
    KernelSpec::new(kernel, spec.augment_bias)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub c: f64,
    pub kernel_param: Option<f64>,
    pub sigma_admm: f64,
}

/// Cross-validated scores of one hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: String,
    pub kernel: KernelSpec,
    pub best_params: Params,
    pub fold_count: usize,
    /// Folds that were scored, aligned with `per_fold` and `certificates`.
    pub folds: Vec<usize>,
    /// Folds whose training split had a single class.
    pub skipped_folds: Vec<usize>,
    pub per_fold: Vec<Metrics>,
    pub certificates: Vec<Certificate>,
    pub mean_acc: f64,
    pub mean_nsv: f64,
    pub mean_cpu: f64,
    pub noise_rate: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

struct FoldData {
    fold: usize,
    train: Dataset,
    test: Dataset,
}

fn prepare_folds(d: &Dataset, plan: &FoldPlan, scaling: ScalingMode) -> Result<(Vec<FoldData>, Vec<usize>)> {
    if plan.assignments.len() != d.len() {
        return Err(Error::Argument(format!(
            "fold plan covers {} samples, dataset has {}",
            plan.assignments.len(),
            d.len()
        )));
    }
    let base = match scaling {
        ScalingMode::Whole => apply_scaling(d, &fit_scaling(d))?,
        _ => d.clone(),
    };
    let mut folds = Vec::new();
    let mut skipped = Vec::new();
    for f in 0..plan.fold_count {
        let test_idx = plan.test_indices(f);
        let train = base.subset(&plan.train_indices(f));
        let test = base.subset(&test_idx);
        if test_idx.is_empty() || train.check_trainable().is_err() {
            log::warn!("skipping fold {f}: training split is not two-class or test split is empty");
            skipped.push(f);
            continue;
        }
        let (train, test) = if scaling == ScalingMode::Train {
            let s = fit_scaling(&train);
            (apply_scaling(&train, &s)?, apply_scaling(&test, &s)?)
        } else {
            (train, test)
        };
        folds.push(FoldData { fold: f, train, test });
    }
    Ok((folds, skipped))
}

struct FoldGram {
    gram: GramMatrix,
    seconds: f64,
}

fn fold_grams(folds: &[FoldData], spec: &KernelSpec) -> Vec<FoldGram> {
    folds
        .iter()
        .map(|f| {
            let start = Instant::now();
            let gram = gram_cached(&f.train.features, spec);
            FoldGram {
                gram,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn run_cell(
    name: &str,
    spec: &KernelSpec,
    cfg: &SolverConfig,
    fold_count: usize,
    folds: &[FoldData],
    grams: &[FoldGram],
    skipped: &[usize],
    opts: &EvalOptions,
) -> Result<CvReport> {
    let mut per_fold = Vec::with_capacity(folds.len());
    let mut certificates = Vec::with_capacity(folds.len());
    for (f, g) in folds.iter().zip(grams) {
        let (model, cert, seconds) = train_with_gram(&f.train, &g.gram, cfg)?;
        let acc = model.accuracy(&f.test)?;
        per_fold.push(Metrics {
            acc,
            nsv: model.nsv(),
            cpu_seconds: seconds + if opts.include_gram_time { g.seconds } else { 0.0 },
        });
        certificates.push(cert);
    }
    Ok(CvReport {
        dataset: name.to_string(),
        kernel: *spec,
        best_params: Params {
            c: cfg.c,
            kernel_param: kernel_param(spec),
            sigma_admm: cfg.sigma_admm,
        },
        fold_count,
        folds: folds.iter().map(|f| f.fold).collect(),
        skipped_folds: skipped.to_vec(),
        mean_acc: mean(per_fold.iter().map(|m| m.acc)),
        mean_nsv: mean(per_fold.iter().map(|m| m.nsv as f64)),
        mean_cpu: mean(per_fold.iter().map(|m| m.cpu_seconds)),
        per_fold,
        certificates,
        noise_rate: None,
    })
}

/// k-fold cross-validation at fixed hyperparameters.
pub fn cross_validate(
    d: &Dataset,
    spec: &KernelSpec,
    cfg: &SolverConfig,
    plan: &FoldPlan,
    opts: &EvalOptions,
) -> Result<CvReport> {
    spec.validate()?;
    cfg.validate()?;
    let (folds, skipped) = prepare_folds(d, plan, opts.scaling)?;
    let grams = fold_grams(&folds, spec);
    run_cell(&d.name, spec, cfg, plan.fold_count, &folds, &grams, &skipped, opts)
}

/// Result of a grid search: the winning cell and every cell in grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: CvReport,
    pub all: Vec<CvReport>,
}

/// Higher accuracy, then fewer support vectors, then smaller C.
fn better(a: &CvReport, b: &CvReport) -> bool {
    if a.mean_acc != b.mean_acc {
        return a.mean_acc > b.mean_acc;
    }
    if a.mean_nsv != b.mean_nsv {
        return a.mean_nsv < b.mean_nsv;
    }
    a.best_params.c < b.best_params.c
}

/// Cross-validates every grid cell. The Gram matrix of each fold is built
/// once per kernel parameter and shared by all `(C, sigma_admm)` cells.
pub fn grid_search(
    d: &Dataset,
    spec: &KernelSpec,
    grid: &GridSpec,
    cfg: &SolverConfig,
    plan: &FoldPlan,
    opts: &EvalOptions,
) -> Result<GridOutcome> {
    grid.validate()?;
    cfg.validate()?;
    let (folds, skipped) = prepare_folds(d, plan, opts.scaling)?;
    let params: Vec<f64> = if spec.kernel == Kernel::Linear {
        vec![grid.kernel_param_values[0]]
    } else {
        grid.kernel_param_values.clone()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;

    let mut all = Vec::with_capacity(grid.cells());
    for p in params {
        let cell_spec = with_kernel_param(spec, p)?;
        let grams = fold_grams(&folds, &cell_spec);
        let cells: Vec<SolverConfig> = grid
            .c_values
            .iter()
            .flat_map(|&c| {
                grid.sigma_admm_values.iter().map(move |&s| SolverConfig {
                    c,
                    sigma_admm: s,
                    ..*cfg
                })
            })
            .collect();
        let reports: Vec<Result<CvReport>> = pool.install(|| {
            cells
                .par_iter()
                .map(|c| run_cell(&d.name, &cell_spec, c, plan.fold_count, &folds, &grams, &skipped, opts))
                .collect()
        });
        for r in reports {
            let r = r?;
            log::info!(
                "C={} param={:?} sigma={} acc={:.4} nsv={:.2}",
                r.best_params.c,
                r.best_params.kernel_param,
                r.best_params.sigma_admm,
                r.mean_acc,
                r.mean_nsv
            );
            all.push(r);
        }
    }
    let mut best = &all[0];
    for r in &all[1..] {
        if better(r, best) {
            best = r;
        }
    }
    Ok(GridOutcome {
        best: best.clone(),
        all,
    })
}

/// Grid searches with the linear kernel and with the Gaussian kernel on the
/// same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub linear: GridOutcome,
    pub gaussian: GridOutcome,
}

pub fn compare_linear_nonlinear(
    d: &Dataset,
    grid: &GridSpec,
    cfg: &SolverConfig,
    plan: &FoldPlan,
    opts: &EvalOptions,
) -> Result<Comparison> {
    let gaussian_spec = KernelSpec::gaussian(grid.kernel_param_values[0])?;
    Ok(Comparison {
        linear: grid_search(d, &KernelSpec::linear(), grid, cfg, plan, opts)?,
        gaussian: grid_search(d, &gaussian_spec, grid, cfg, plan, opts)?,
    })
}

/// Settings of a label-noise experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseOptions {
    pub folds: usize,
    pub fold_seed: u64,
    pub noise_seed: u64,
    /// Re-run the grid search at every rate; otherwise reuse the setting
    /// tuned on clean labels.
    pub retune: bool,
}

/// Flips labels on the whole set at each rate, then cross-validates.
pub fn noise_experiment(
    d: &Dataset,
    rates: &[f64],
    spec: &KernelSpec,
    grid: &GridSpec,
    cfg: &SolverConfig,
    noise: &NoiseOptions,
    opts: &EvalOptions,
) -> Result<Vec<CvReport>> {
    if let Some(r) = rates.iter().find(|r| !(0.0..0.5).contains(*r)) {
        return Err(Error::Argument(format!("noise rate {r} outside [0, 0.5)")));
    }
    let clean_best = if noise.retune {
        None
    } else {
        let plan = stratified_kfold(d, noise.folds, noise.fold_seed)?;
        Some(grid_search(d, spec, grid, cfg, &plan, opts)?.best)
    };
    let mut out = Vec::with_capacity(rates.len());
    for &rate in rates {
        let noisy = flip_labels(d, &NoiseSpec::new(rate, noise.noise_seed))?;
        let plan = stratified_kfold(&noisy, noise.folds, noise.fold_seed)?;
        let mut report = match &clean_best {
            None => grid_search(&noisy, spec, grid, cfg, &plan, opts)?.best,
            Some(b) => {
                let s = match b.best_params.kernel_param {
                    Some(p) => with_kernel_param(spec, p)?,
                    None => *spec,
                };
                let c = SolverConfig {
                    c: b.best_params.c,
                    sigma_admm: b.best_params.sigma_admm,
                    ..*cfg
                };
                cross_validate(&noisy, &s, &c, &plan, opts)?
            }
        };
        report.noise_rate = Some(rate);
        out.push(report);
    }
    Ok(out)
}

pub const CSV_HEADER: &str =
    "dataset,kernel,kernel_param,C,sigma_admm,noise_rate,fold,acc,nsv,converged,iterations,theta1,theta2";

fn kernel_name(spec: &KernelSpec) -> &'static str {
    match spec.kernel {
        Kernel::Gaussian { .. } => "gaussian",
        Kernel::Polynomial { .. } => "poly",
        Kernel::Sigmoid { .. } => "sigmoid",
        Kernel::Linear => "linear",
    }
}

/// One CSV row per scored fold. Timing is left out so reruns with the same
/// seeds produce identical bytes.
pub fn csv_rows(reports: &[CvReport]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let param = r.best_params.kernel_param.map(|p| p.to_string()).unwrap_or_default();
        let rate = r.noise_rate.map(|p| p.to_string()).unwrap_or_default();
        for ((fold, m), cert) in r.folds.iter().zip(&r.per_fold).zip(&r.certificates) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{:e},{:e}",
                r.dataset,
                kernel_name(&r.kernel),
                param,
                r.best_params.c,
                r.best_params.sigma_admm,
                rate,
                fold,
                m.acc,
                m.nsv,
                cert.converged,
                cert.iterations_used,
                cert.theta1,
                cert.theta2
            );
        }
    }
    out
}

/// `dataset  kernel  mACC  mNSV  mCPU` line in the style of a results table.
pub fn summary_line(r: &CvReport) -> String {
    let param = r
        .best_params
        .kernel_param
        .map(|p| format!(" p={p}"))
        .unwrap_or_default();
    let rate = r.noise_rate.map(|p| format!(" r={p}")).unwrap_or_default();
    format!(
        "{:<8} {:<8} C={}{} sigma={}{}  mACC={:.4}  mNSV={:.2}  mCPU={:.4}s",
        r.dataset,
        kernel_name(&r.kernel),
        r.best_params.c,
        param,
        r.best_params.sigma_admm,
        rate,
        r.mean_acc,
        r.mean_nsv,
        r.mean_cpu
    )
}
