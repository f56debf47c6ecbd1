//! Kernel functions and Gram matrices on bias-augmented inputs.
//!
//! An input `x` is augmented to `(x, 1)` before the kernel is applied, which
//! is how the classifier absorbs its bias term. For the Gaussian kernel the
//! extra coordinate cancels in `x - x'`, so it is evaluated on the raw
//! inputs.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Kernel family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-|x - x'|^2 / (2 bandwidth^2))`
    Gaussian { bandwidth: f64 },
    /// `<x, x'>^degree`, without an additive offset.
    Polynomial { degree: u32 },
    /// `tanh(beta <x, x'> + theta)`
    Sigmoid { beta: f64, theta: f64 },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub augment_bias: bool,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, augment_bias: bool) -> Result<Self> {
        let spec = Self { kernel, augment_bias };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(Kernel::Gaussian { bandwidth }, true)
    }

    pub fn polynomial(degree: u32) -> Result<Self> {
        Self::new(Kernel::Polynomial { degree }, true)
    }

    pub fn sigmoid(beta: f64, theta: f64) -> Result<Self> {
        Self::new(Kernel::Sigmoid { beta, theta }, true)
    }

    pub fn linear() -> Self {
        Self {
            kernel: Kernel::Linear,
            augment_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kernel {
            Kernel::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::Argument(format!("gaussian bandwidth must be positive, got {bandwidth}")))
            }
            Kernel::Polynomial { degree } if degree < 1 => {
                Err(Error::Argument("polynomial degree must be at least 1".into()))
            }
            Kernel::Sigmoid { beta, theta } if !(beta > 1.0 && theta < 0.0) => Err(Error::Argument(format!(
                "sigmoid kernel needs beta > 1 and theta < 0, got beta={beta}, theta={theta}"
            ))),
            _ => Ok(()),
        }
    }

    /// Kernel value on two inputs of equal length. No dimension check.
    pub(crate) fn eval_unchecked(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let bias = if self.augment_bias { 1.0 } else { 0.0 };
        match self.kernel {
            Kernel::Gaussian { bandwidth } => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Polynomial { degree } => (a.dot(&b) + bias).powi(degree as i32),
            Kernel::Sigmoid { beta, theta } => (beta * (a.dot(&b) + bias) + theta).tanh(),
            Kernel::Linear => a.dot(&b) + bias,
        }
    }
}

pub fn eval_kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, spec: &KernelSpec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "kernel inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(spec.eval_unchecked(a, b))
}

/// Dense kernel matrix over a training set. When `signed` is set the
/// entries are `y_i y_j k(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: Array2<f64>,
    pub spec: KernelSpec,
    pub signed: bool,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn mean_diagonal(&self) -> f64 {
        let m = self.size();
        if m == 0 {
            return 0.0;
        }
        self.entries.diag().sum() / m as f64
    }
}

/// Kernel matrix of the rows of `x`. Each unordered pair is evaluated once
/// and mirrored, so the result is exactly symmetric.
pub fn gram_of_rows(x: &Array2<f64>, spec: &KernelSpec) -> GramMatrix {
    let m = x.nrows();
    let mut entries = Array2::zeros((m, m));
    for i in 0..m {
        let xi = x.row(i);
        for j in i..m {
            let v = spec.eval_unchecked(xi, x.row(j));
            entries[[i, j]] = v;
            entries[[j, i]] = v;
        }
    }
    GramMatrix {
        entries,
        spec: *spec,
        signed: false,
    }
}

pub fn gram_matrix(d: &Dataset, spec: &KernelSpec) -> GramMatrix {
    gram_of_rows(&d.features, spec)
}

/// `k(a_i, b_j)` for every row pair; used to score new points.
pub fn cross_kernel(a: &Array2<f64>, b: &Array2<f64>, spec: &KernelSpec) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Argument(format!(
            "inputs have {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        spec.eval_unchecked(a.row(i), b.row(j))
    }))
}

/// `V K V` with `V = diag(labels)`.
pub fn sign_gram(g: &GramMatrix, labels: ArrayView1<f64>) -> Result<GramMatrix> {
    if g.signed {
        return Err(Error::Argument("gram matrix is already signed".into()));
    }
    if labels.len() != g.size() {
        return Err(Error::Argument(format!(
            "{} labels for a {}x{} gram matrix",
            labels.len(),
            g.size(),
            g.size()
        )));
    }
    let mut entries = g.entries.clone();
    for ((i, j), v) in entries.indexed_iter_mut() {
        *v *= labels[i] * labels[j];
    }
    Ok(GramMatrix {
        entries,
        spec: g.spec,
        signed: true,
    })
}

/// Rows of `g` at `idx`, in the given order.
pub fn rows_submatrix(g: &GramMatrix, idx: &[usize]) -> Result<Array2<f64>> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= g.size()) {
        return Err(Error::Argument(format!("row {bad} out of range for size {}", g.size())));
    }
    Ok(g.entries.select(Axis(0), idx))
}
