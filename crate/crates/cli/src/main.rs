mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::{s, Array1, Array2};
use serde::Serialize;
use zok::data::{apply_scaling, fit_scaling, load_csv, load_libsvm, read_csv_table, read_libsvm, stratified_kfold};
use zok::eval::{
    compare_linear_nonlinear, cross_validate, csv_rows, grid_search, noise_experiment, summary_line, CvReport,
    NoiseOptions,
};
use zok::model::{accuracy_formula, sign_label};
use zok::solver::train;
use zok::{Dataset, Error, LabelColumn, Result, ScalingMode, TrainedModel};

use config::{resolve, DataFormat, RunArgs, RunConfig};

/// Kernel SVM with the 0/1 loss.
#[derive(Debug, Parser)]
#[command(name = "zok", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on the whole dataset; writes model.bin and certificate.json
    Train(RunArgs),
    /// Score a dataset with a saved model; writes predictions.csv
    Predict(PredictArgs),
    /// Cross-validate fixed hyperparameters
    Cv(RunArgs),
    /// Grid search over C, the kernel parameter and sigma_admm
    Grid(RunArgs),
    /// Grid searches with the linear and the Gaussian kernel
    Compare(RunArgs),
    /// Grid searches after flipping a fraction of the labels
    Noise(RunArgs),
}

#[derive(Debug, clap::Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Successful run whose solver hit the iteration cap somewhere.
const EXIT_UNCONVERGED: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => resolve(a).and_then(|c| cmd_train(&c)),
        Command::Predict(a) => cmd_predict(&a),
        Command::Cv(a) => resolve(a).and_then(|c| cmd_cv(&c)),
        Command::Grid(a) => resolve(a).and_then(|c| cmd_grid(&c)),
        Command::Compare(a) => resolve(a).and_then(|c| cmd_compare(&c)),
        Command::Noise(a) => resolve(a).and_then(|c| cmd_noise(&c)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_UNCONVERGED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.format {
        DataFormat::Csv => load_csv(&cfg.data, LabelColumn::Last),
        DataFormat::Libsvm => load_libsvm(&cfg.data),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<bool> {
    let raw = load(cfg)?;
    let scaling = match cfg.scaling {
        ScalingMode::None => None,
        _ => Some(fit_scaling(&raw)),
    };
    let d = match &scaling {
        Some(s) => apply_scaling(&raw, s)?,
        None => raw.clone(),
    };
    let (model, cert) = train(&d, &cfg.kernel, &cfg.solver)?;
    let model = match scaling {
        Some(s) => model.with_scaling(s),
        None => model,
    };
    fs::create_dir_all(&cfg.out)?;
    model.save(&cfg.out.join("model.bin"))?;
    write_json(&cfg.out.join("certificate.json"), &cert)?;
    println!(
        "trained on {} samples: nsv={} train_acc={:.4} converged={} iterations={} theta1={:.3e} theta2={:.3e}",
        raw.len(),
        model.nsv(),
        model.accuracy(&raw)?,
        cert.converged,
        cert.iterations_used,
        cert.theta1,
        cert.theta2
    );
    Ok(cert.converged)
}

/// Features and optional labels of a file to be scored by `model`.
fn read_inputs(path: &Path, format: DataFormat, dim: usize) -> Result<(Array2<f64>, Option<Array1<f64>>)> {
    match format {
        DataFormat::Csv => {
            let table = read_csv_table(path)?;
            let width = table.rows.ncols();
            if width == dim {
                Ok((table.rows, None))
            } else if width == dim + 1 {
                let d = load_csv(path, LabelColumn::Last).or_else(|e| match e {
                    // a single-class file is fine for scoring
                    Error::Validation(_) => labeled_csv_unchecked(&table.rows),
                    other => Err(other),
                })?;
                Ok((d.features, Some(d.labels)))
            } else {
                Err(Error::Argument(format!(
                    "model expects {dim} features, file has {width} columns"
                )))
            }
        }
        DataFormat::Libsvm => {
            let d = read_libsvm(path)?;
            if d.dim() > dim {
                return Err(Error::Argument(format!(
                    "model expects {dim} features, file uses {}",
                    d.dim()
                )));
            }
            let mut x = Array2::zeros((d.len(), dim));
            x.slice_mut(s![.., ..d.dim()]).assign(&d.features);
            Ok((x, Some(d.labels)))
        }
    }
}

fn labeled_csv_unchecked(rows: &Array2<f64>) -> Result<Dataset> {
    let w = rows.ncols();
    let labels = rows.column(w - 1).mapv(|v| if v == 1.0 { 1.0 } else if v == 0.0 { -1.0 } else { v });
    Dataset::new(rows.slice(s![.., ..w - 1]).to_owned(), labels, "input")
}

fn cmd_predict(a: &PredictArgs) -> Result<bool> {
    if !a.data.is_file() {
        return Err(Error::Argument(format!("data file {} does not exist", a.data.display())));
    }
    let model = TrainedModel::load(&a.model)?;
    let format = a.format.unwrap_or_else(|| {
        if a.data.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            DataFormat::Csv
        } else {
            DataFormat::Libsvm
        }
    });
    let (x, labels) = read_inputs(&a.data, format, model.dim())?;
    let f = model.decision_values(&x)?;
    let pred = f.mapv(sign_label);

    fs::create_dir_all(&a.out)?;
    let mut out = fs::File::create(a.out.join("predictions.csv"))?;
    writeln!(out, "index,decision_value,label")?;
    for (i, (fv, p)) in f.iter().zip(pred.iter()).enumerate() {
        writeln!(out, "{i},{fv},{p}")?;
    }
    if let Some(y) = labels {
        println!("accuracy: {:.6}", accuracy_formula(pred.view(), y.view())?);
    }
    Ok(true)
}

#[derive(Serialize)]
struct ResultBlock<'a> {
    label: String,
    best: &'a CvReport,
    cells: &'a [CvReport],
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'static str,
    config: &'a RunConfig,
    results: Vec<ResultBlock<'a>>,
}

fn emit(cfg: &RunConfig, command: &'static str, blocks: Vec<ResultBlock>, csv_cells: &[CvReport]) -> Result<bool> {
    fs::create_dir_all(&cfg.out)?;
    for b in &blocks {
        println!("{}", summary_line(b.best));
    }
    let converged = blocks
        .iter()
        .all(|b| b.best.certificates.iter().all(|c| c.converged));
    write_json(
        &cfg.out.join("report.json"),
        &Report {
            command,
            config: cfg,
            results: blocks,
        },
    )?;
    fs::write(cfg.out.join("report.csv"), csv_rows(csv_cells))?;
    Ok(converged)
}

fn cmd_cv(cfg: &RunConfig) -> Result<bool> {
    let d = load(cfg)?;
    let plan = stratified_kfold(&d, cfg.folds, cfg.seed)?;
    let r = cross_validate(&d, &cfg.kernel, &cfg.solver, &plan, &cfg.eval_options())?;
    let cells = std::slice::from_ref(&r);
    emit(
        cfg,
        "cv",
        vec![ResultBlock {
            label: "cv".into(),
            best: &r,
            cells,
        }],
        cells,
    )
}

fn cmd_grid(cfg: &RunConfig) -> Result<bool> {
    let d = load(cfg)?;
    let plan = stratified_kfold(&d, cfg.folds, cfg.seed)?;
    let g = grid_search(&d, &cfg.kernel, &cfg.grid, &cfg.solver, &plan, &cfg.eval_options())?;
    emit(
        cfg,
        "grid",
        vec![ResultBlock {
            label: "grid".into(),
            best: &g.best,
            cells: &g.all,
        }],
        &g.all,
    )
}

fn cmd_compare(cfg: &RunConfig) -> Result<bool> {
    let d = load(cfg)?;
    let plan = stratified_kfold(&d, cfg.folds, cfg.seed)?;
    let c = compare_linear_nonlinear(&d, &cfg.grid, &cfg.solver, &plan, &cfg.eval_options())?;
    let best = [c.linear.best.clone(), c.gaussian.best.clone()];
    emit(
        cfg,
        "compare",
        vec![
            ResultBlock {
                label: "linear".into(),
                best: &c.linear.best,
                cells: &c.linear.all,
            },
            ResultBlock {
                label: "gaussian".into(),
                best: &c.gaussian.best,
                cells: &c.gaussian.all,
            },
        ],
        &best,
    )
}

fn cmd_noise(cfg: &RunConfig) -> Result<bool> {
    let d = load(cfg)?;
    let noise = NoiseOptions {
        folds: cfg.folds,
        fold_seed: cfg.seed,
        noise_seed: cfg.noise_seed,
        retune: cfg.retune,
    };
    let reports = noise_experiment(
        &d,
        &cfg.rates,
        &cfg.kernel,
        &cfg.grid,
        &cfg.solver,
        &noise,
        &cfg.eval_options(),
    )?;
    let blocks = reports
        .iter()
        .map(|r| ResultBlock {
            label: format!("r={}", r.noise_rate.unwrap_or(0.0)),
            best: r,
            cells: std::slice::from_ref(r),
        })
        .collect();
    emit(cfg, "noise", blocks, &reports)
}
