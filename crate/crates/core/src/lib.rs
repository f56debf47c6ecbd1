//! Kernel support vector machine with the 0/1 loss, trained by a
//! working-set ADMM that certifies proximal stationarity.

pub mod cache;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod prox;
pub mod solver;

pub use data::{Dataset, FoldPlan, LabelColumn, NoiseSpec, ScalingMap};
pub use error::{Error, Result};
pub use eval::{CvReport, EvalOptions, GridSpec, ScalingMode};
pub use kernel::{GramMatrix, Kernel, KernelSpec};
pub use model::{Metrics, TrainedModel};
pub use solver::{Certificate, SolverConfig};
