//! Trained classifier: support vectors, decision function and metrics.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScalingMap};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, KernelSpec};
use crate::prox::{zero_set, ProxParams};
use crate::solver::{SolverConfig, SolverState};

const MAGIC: &[u8; 4] = b"ZOKM";
const FORMAT_VERSION: u8 = 1;

/// A trained classifier. Only support-vector rows are kept; every other
/// coefficient is zero by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Positions of the support vectors in the training set.
    pub sv_indices: Vec<usize>,
    /// Coefficients of the support vectors, aligned with `sv_indices`.
    pub sv_alpha: Array1<f64>,
    pub sv_inputs: Array2<f64>,
    pub sv_labels: Array1<f64>,
    pub spec: KernelSpec,
    pub config: SolverConfig,
    pub train_size: usize,
    /// Applied to raw inputs before the kernel, when present.
    pub scaling: Option<ScalingMap>,
}

/// `{i : u_i - gamma alpha_i in (0, sqrt(2 gamma C)]}`, ascending.
pub fn extract_svs(alpha: ArrayView1<f64>, u: ArrayView1<f64>, gamma: f64, c: f64) -> Result<Vec<usize>> {
    if alpha.len() != u.len() {
        return Err(Error::Argument(format!(
            "alpha has length {}, u has length {}",
            alpha.len(),
            u.len()
        )));
    }
    let params = ProxParams::new(gamma, c)?;
    let shifted = &u - &alpha.mapv(|a| gamma * a);
    Ok(zero_set(shifted.view(), &params))
}

impl TrainedModel {
    /// Builds the model from a final solver iterate on the training set `d`.
    pub fn from_solution(d: &Dataset, spec: &KernelSpec, cfg: &SolverConfig, state: &SolverState) -> Result<Self> {
        if state.alpha.len() != d.len() {
            return Err(Error::Argument(format!(
                "solver state of length {} for {} samples",
                state.alpha.len(),
                d.len()
            )));
        }
        let sv = extract_svs(state.alpha.view(), state.u.view(), cfg.gamma(), cfg.c)?;
        Ok(Self {
            sv_alpha: state.alpha.select(Axis(0), &sv),
            sv_inputs: d.features.select(Axis(0), &sv),
            sv_labels: d.labels.select(Axis(0), &sv),
            sv_indices: sv,
            spec: *spec,
            config: *cfg,
            train_size: d.len(),
            scaling: None,
        })
    }

    pub fn with_scaling(mut self, scaling: ScalingMap) -> Self {
        self.scaling = Some(scaling);
        self
    }

    pub fn nsv(&self) -> usize {
        self.sv_indices.len()
    }

    /// Input dimension before bias augmentation.
    pub fn dim(&self) -> usize {
        self.sv_inputs.ncols()
    }

    /// Full-length coefficient vector over the training set.
    pub fn alpha_full(&self) -> Array1<f64> {
        let mut a = Array1::zeros(self.train_size);
        for (&i, &v) in self.sv_indices.iter().zip(self.sv_alpha.iter()) {
            a[i] = v;
        }
        a
    }

    fn prepare(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Argument(format!(
                "model expects {} features, got {}",
                self.dim(),
                x.ncols()
            )));
        }
        Ok(match &self.scaling {
            Some(s) => s.apply_matrix(x),
            None => x.to_owned(),
        })
    }

    /// `f(x) = -sum_{i in T*} alpha_i y_i k(x_i, x)` for every row of `x`.
    pub fn decision_values(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        let x = self.prepare(x)?;
        if self.nsv() == 0 {
            return Ok(Array1::zeros(x.nrows()));
        }
        let weights = -(&self.sv_alpha * &self.sv_labels);
        let k = cross_kernel(&x, &self.sv_inputs, &self.spec)?;
        Ok(k.dot(&weights))
    }

    pub fn decision_value(&self, x: ArrayView1<f64>) -> Result<f64> {
        let row = x.to_owned().insert_axis(Axis(0));
        Ok(self.decision_values(&row)?[0])
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(sign_label(self.decision_value(x)?))
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.decision_values(x)?.mapv(sign_label))
    }

    /// Fraction of correctly labelled samples in `test`.
    pub fn accuracy(&self, test: &Dataset) -> Result<f64> {
        if test.is_empty() {
            return Err(Error::Argument("accuracy needs a nonempty test set".into()));
        }
        let pred = self.predict_batch(&test.features)?;
        let correct = pred.iter().zip(test.labels.iter()).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / test.len() as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let envelope = Envelope {
            spec: self.spec,
            config: self.config,
            sv_count: self.nsv(),
            dim: self.dim(),
            train_size: self.train_size,
            sv_indices: self.sv_indices.clone(),
            scaling: self.scaling.clone(),
        };
        let json = serde_json::to_vec(&envelope)?;
        let mut out = Vec::with_capacity(9 + json.len() + 8 * self.nsv() * (self.dim() + 2));
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self
            .sv_inputs
            .iter()
            .chain(self.sv_alpha.iter())
            .chain(self.sv_labels.iter())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", bytes[4])));
        }
        let json_len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let json_end = 9 + json_len;
        if bytes.len() < json_end {
            return Err(Error::Format("truncated model header".into()));
        }
        let env: Envelope = serde_json::from_slice(&bytes[9..json_end])?;
        let (k, n) = (env.sv_count, env.dim);
        let blob = &bytes[json_end..];
        if blob.len() != 8 * k * (n + 2) || env.sv_indices.len() != k {
            return Err(Error::Format("model payload does not match its header".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let sv_inputs = Array2::from_shape_vec((k, n), values[..k * n].to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        env.spec.validate()?;
        Ok(Self {
            sv_indices: env.sv_indices,
            sv_alpha: Array1::from(values[k * n..k * n + k].to_vec()),
            sv_inputs,
            sv_labels: Array1::from(values[k * n + k..].to_vec()),
            spec: env.spec,
            config: env.config,
            train_size: env.train_size,
            scaling: env.scaling,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    spec: KernelSpec,
    config: SolverConfig,
    sv_count: usize,
    dim: usize,
    train_size: usize,
    sv_indices: Vec<usize>,
    scaling: Option<ScalingMap>,
}

/// Sign with ties sent to `+1`.
#[inline]
pub fn sign_label(f: f64) -> f64 {
    if f >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `1 - sum |pred_i - y_i| / (2 m)`.
pub fn accuracy_formula(pred: ArrayView1<f64>, labels: ArrayView1<f64>) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let err: f64 = pred.iter().zip(labels.iter()).map(|(p, y)| (p - y).abs()).sum();
    Ok(1.0 - err / (2.0 * pred.len() as f64))
}

/// Scores of one trained model on one held-out split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nsv: usize,
    pub cpu_seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one_sv_model() -> TrainedModel {
        TrainedModel {
            sv_indices: vec![0],
            sv_alpha: array![-1.0],
            sv_inputs: array![[0.5, -0.5]],
            sv_labels: array![1.0],
            spec: KernelSpec::gaussian(1.0).unwrap(),
            config: SolverConfig::default(),
            train_size: 3,
            scaling: None,
        }
    }

    #[test]
    fn sv_extraction() {
        let zero = Array1::zeros(3);
        assert!(extract_svs(zero.view(), zero.view(), 1.0, 1.0).unwrap().is_empty());
        let alpha = array![-1.0, 0.0, -3.0];
        let u = array![0.0, 0.5, 0.0];
        // shifted = (1, 0.5, 3); threshold sqrt 2
        assert_eq!(extract_svs(alpha.view(), u.view(), 1.0, 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn decision_on_sv_itself() {
        let m = one_sv_model();
        assert_eq!(m.decision_value(array![0.5, -0.5].view()).unwrap(), 1.0);
        assert!(m.decision_value(array![1.0].view()).is_err());
        assert_eq!(m.alpha_full(), array![-1.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_model_predicts_positive() {
        let mut m = one_sv_model();
        m.sv_indices.clear();
        m.sv_alpha = Array1::zeros(0);
        m.sv_inputs = Array2::zeros((0, 2));
        m.sv_labels = Array1::zeros(0);
        assert_eq!(m.decision_value(array![3.0, 1.0].view()).unwrap(), 0.0);
        assert_eq!(m.predict(array![3.0, 1.0].view()).unwrap(), 1.0);
    }

    #[test]
    fn sign_rule() {
        assert_eq!(sign_label(0.3), 1.0);
        assert_eq!(sign_label(-0.3), -1.0);
        assert_eq!(sign_label(0.0), 1.0);
    }

    #[test]
    fn accuracy_identity() {
        let y = array![1.0, -1.0, 1.0, 1.0];
        assert_eq!(accuracy_formula(y.view(), y.view()).unwrap(), 1.0);
        assert_eq!(accuracy_formula((-&y).view(), y.view()).unwrap(), 0.0);
        let p = array![1.0, 1.0, 1.0, -1.0];
        assert_eq!(accuracy_formula(p.view(), y.view()).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_on_dataset() {
        let m = one_sv_model();
        let d = Dataset::new(array![[0.5, -0.5], [0.6, -0.4]], array![1.0, -1.0], "t").unwrap();
        assert_eq!(m.accuracy(&d).unwrap(), 0.5);
    }

    #[test]
    fn byte_roundtrip() {
        let mut m = one_sv_model();
        m.scaling = Some(ScalingMap {
            min: vec![0.0, -1.0],
            max: vec![2.0, 1.0],
        });
        let bytes = m.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"ZOKM");
        assert_eq!(bytes[4], 1);
        assert_eq!(TrainedModel::from_bytes(&bytes).unwrap(), m);
        assert!(TrainedModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(TrainedModel::from_bytes(&bad).is_err());
        assert!(TrainedModel::from_bytes(b"nope").is_err());
    }
}
