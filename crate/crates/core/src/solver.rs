//! Working-set proximal ADMM for
//!
//! ```text
//! min  1/2 a'Ka + C |u_+|_0   s.t.  u - Ka = e
//! ```
//!
//! where `K` is the label-signed Gram matrix. Each iteration selects the
//! working set `T = {i : z_i in (0, sqrt(2C/sigma)]}` with
//! `z = e + Ka - lambda/sigma`, zeroes `u` on `T`, solves
//! `(K + sigma K_T'K_T) a = sigma K_T' v_T` for the coefficients and takes a
//! dual step on `T`. The proximal step used in the stopping test and in
//! support-vector extraction is `gamma = 1/sigma`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, sign_gram, GramMatrix, KernelSpec};
use crate::linalg::{cg_solve, smallest_eigenvalue, CgConfig};
use crate::model::TrainedModel;
use crate::prox::{prox_l01_vector, zero_set, ProxParams};

/// Hyperparameters of the ADMM loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Loss penalty `C`.
    pub c: f64,
    /// Augmented-Lagrangian penalty `sigma`.
    pub sigma_admm: f64,
    /// Dual step size.
    pub eta: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Every coefficient starts at this value.
    pub alpha0_scale: f64,
    /// Diagonal regularizer used after an indefiniteness failure. `None`
    /// means `1e-8` times the mean diagonal of the signed Gram matrix.
    pub ridge_jitter: Option<f64>,
    pub cg: CgConfig,
    /// Compute the smallest eigenvalue of the signed Gram matrix for the
    /// certificate. Costs O(m^3) up to 500 samples.
    #[serde(default)]
    pub eigen_diagnostics: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            sigma_admm: 1.0,
            eta: 1.0,
            max_iter: 100,
            tol: 1e-3,
            alpha0_scale: 0.01,
            ridge_jitter: None,
            cg: CgConfig::default(),
            eigen_diagnostics: false,
        }
    }
}

impl SolverConfig {
    pub fn gamma(&self) -> f64 {
        1.0 / self.sigma_admm
    }

    pub fn prox_params(&self) -> Result<ProxParams> {
        ProxParams::new(self.gamma(), self.c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("C", self.c),
            ("sigma_admm", self.sigma_admm),
            ("eta", self.eta),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        if let Some(j) = self.ridge_jitter {
            if !(j > 0.0) {
                return Err(Error::Argument(format!("ridge_jitter must be positive, got {j}")));
            }
        }
        self.cg.validate()
    }
}

/// ADMM iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub alpha: Array1<f64>,
    pub u: Array1<f64>,
    pub lambda: Array1<f64>,
    pub working_set: Vec<usize>,
    pub iteration: usize,
}

impl SolverState {
    /// `alpha = alpha0_scale * e`, `lambda = 0`, and the feasible
    /// `u = e + K alpha`.
    pub fn initial(signed_gram: &GramMatrix, cfg: &SolverConfig) -> Self {
        let m = signed_gram.size();
        let alpha = Array1::from_elem(m, cfg.alpha0_scale);
        let u = signed_gram.entries.dot(&alpha) + 1.0;
        Self {
            alpha,
            u,
            lambda: Array1::zeros(m),
            working_set: Vec::new(),
            iteration: 0,
        }
    }
}

/// Stationarity evidence for a returned point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `|u - e - K alpha| / sqrt(m)`
    pub theta1: f64,
    /// `|u - prox(u - gamma alpha)| / (1 + |u|)`
    pub theta2: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Smallest eigenvalue of the signed Gram matrix, when computed.
    pub lambda_min: Option<f64>,
    pub gamma: f64,
    /// Diagonal jitter that had to be added to the Gram matrix, if any.
    pub jitter: Option<f64>,
}

/// Outcome of [`solve`] on a precomputed signed Gram matrix.
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: SolverState,
    pub certificate: Certificate,
}

/// `z = e + K alpha - lambda / sigma` and the indices it places in
/// `(0, sqrt(2C/sigma)]`.
pub fn working_set(
    alpha: ArrayView1<f64>,
    lambda: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<(Vec<usize>, Array1<f64>)> {
    let m = signed_gram.size();
    if alpha.len() != m || lambda.len() != m {
        return Err(Error::Argument(format!(
            "iterate lengths {} and {} do not match gram size {m}",
            alpha.len(),
            lambda.len()
        )));
    }
    let mut z = signed_gram.entries.dot(&alpha);
    z.zip_mut_with(&lambda, |zi, &li| *zi += 1.0 - li / cfg.sigma_admm);
    let set = zero_set(z.view(), &cfg.prox_params()?);
    Ok((set, z))
}

/// `u_T = 0`, `u = z` elsewhere.
pub fn update_u(z: ArrayView1<f64>, working_set: &[usize]) -> Array1<f64> {
    let mut u = z.to_owned();
    for &i in working_set {
        u[i] = 0.0;
    }
    u
}

/// How the coefficient system was solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSolve {
    pub cg_iterations: usize,
    pub jitter: Option<f64>,
}

/// Solves `(K + sigma K_T'K_T) alpha = sigma K_T' v_T` with
/// `v = u_next - e + lambda / sigma`.
///
/// When the full matrix is nonsingular its solution vanishes off `T`, and
/// on `T` it satisfies `(I + sigma K_TT) beta = sigma v_T`. That system is
/// positive definite for any positive semidefinite kernel, also when `K`
/// itself is singular (duplicate samples), so CG runs on it. If CG meets
/// negative curvature the full system is retried once with diagonal jitter
/// added to `K`.
pub fn update_alpha(
    state: &SolverState,
    u_next: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<(Array1<f64>, AlphaSolve)> {
    let m = signed_gram.size();
    let t = &state.working_set;
    if t.is_empty() {
        return Ok((
            Array1::zeros(m),
            AlphaSolve {
                cg_iterations: 0,
                jitter: None,
            },
        ));
    }
    let sigma = cfg.sigma_admm;
    let v_t = Array1::from_iter(t.iter().map(|&i| u_next[i] - 1.0 + state.lambda[i] / sigma));
    let rhs = v_t.mapv(|x| sigma * x);

    let k_tt = signed_gram.entries.select(Axis(0), t).select(Axis(1), t);
    let warm = Array1::from_iter(t.iter().map(|&i| state.alpha[i]));
    let reduced = cg_solve(
        |b| {
            let mut out = k_tt.dot(&b);
            out.zip_mut_with(&b, |o, &bi| *o = bi + sigma * *o);
            out
        },
        rhs.view(),
        warm.view(),
        &cg_config_for(&cfg.cg, t.len()),
    );
    match reduced {
        Ok(out) => {
            let mut alpha = Array1::zeros(m);
            for (&i, &b) in t.iter().zip(out.x.iter()) {
                alpha[i] = b;
            }
            Ok((
                alpha,
                AlphaSolve {
                    cg_iterations: out.iterations,
                    jitter: None,
                },
            ))
        }
        Err(Error::Indefinite { .. }) => {
            let jitter = cfg
                .ridge_jitter
                .unwrap_or_else(|| 1e-8 * signed_gram.mean_diagonal().abs().max(f64::MIN_POSITIVE));
            log::warn!("coefficient system is indefinite; retrying with diagonal jitter {jitter:.3e}");
            let full = solve_full_system(state, &v_t, signed_gram, cfg, jitter).map_err(|e| match e {
                Error::Indefinite { curvature } => Error::Solver(format!(
                    "coefficient system stays indefinite after jitter {jitter:.3e} (curvature {curvature:.3e})"
                )),
                other => other,
            })?;
            Ok((
                full.0,
                AlphaSolve {
                    cg_iterations: full.1,
                    jitter: Some(jitter),
                },
            ))
        }
        Err(e) => Err(e),
    }
}

fn cg_config_for(base: &CgConfig, dim: usize) -> CgConfig {
    CgConfig {
        max_iter: Some(base.max_iter.unwrap_or(dim).max(1)),
        ..*base
    }
}

/// Matrix-free CG on `(K + jitter I + sigma K_T'K_T) alpha = sigma K_T' v_T`.
fn solve_full_system(
    state: &SolverState,
    v_t: &Array1<f64>,
    signed_gram: &GramMatrix,
    cfg: &SolverConfig,
    jitter: f64,
) -> Result<(Array1<f64>, usize)> {
    let m = signed_gram.size();
    let sigma = cfg.sigma_admm;
    let k_t: Array2<f64> = signed_gram.entries.select(Axis(0), &state.working_set);
    let rhs = k_t.t().dot(v_t) * sigma;
    let out = cg_solve(
        |x| {
            let mut y = signed_gram.entries.dot(&x);
            y.scaled_add(jitter, &x);
            y.scaled_add(sigma, &k_t.t().dot(&k_t.dot(&x)));
            y
        },
        rhs.view(),
        state.alpha.view(),
        &cg_config_for(&cfg.cg, m),
    )?;
    Ok((out.x, out.iterations))
}

/// `lambda_T += eta * sigma * (u - e - K alpha)_T`, zero elsewhere.
pub fn update_lambda(
    state: &SolverState,
    u_next: ArrayView1<f64>,
    alpha_next: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Array1<f64> {
    let m = signed_gram.size();
    let mut lambda = Array1::zeros(m);
    if state.working_set.is_empty() {
        return lambda;
    }
    let step = cfg.eta * cfg.sigma_admm;
    for &i in &state.working_set {
        let k_alpha_i = signed_gram.entries.row(i).dot(&alpha_next);
        let residual = u_next[i] - 1.0 - k_alpha_i;
        lambda[i] = state.lambda[i] + step * residual;
    }
    lambda
}

/// Feasibility and proximal fixed-point residuals for an arbitrary `gamma`.
pub fn stationarity_residuals(
    alpha: ArrayView1<f64>,
    u: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    gamma: f64,
    c: f64,
) -> Result<(f64, f64)> {
    let m = signed_gram.size();
    if alpha.len() != m || u.len() != m {
        return Err(Error::Argument(format!(
            "alpha/u lengths {}/{} do not match gram size {m}",
            alpha.len(),
            u.len()
        )));
    }
    let params = ProxParams::new(gamma, c)?;
    let feas = &u - &signed_gram.entries.dot(&alpha) - 1.0;
    let theta1 = feas.dot(&feas).sqrt() / (m as f64).sqrt();
    let shifted = &u - &alpha.mapv(|a| gamma * a);
    let gap = &u - &prox_l01_vector(shifted.view(), &params);
    let theta2 = gap.dot(&gap).sqrt() / (1.0 + u.dot(&u).sqrt());
    Ok((theta1, theta2))
}

/// `(theta1, theta2)` with `gamma = 1 / sigma_admm`.
pub fn residuals(
    alpha: ArrayView1<f64>,
    u: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<(f64, f64)> {
    stationarity_residuals(alpha, u, signed_gram, cfg.gamma(), cfg.c)
}

/// Both stationarity conditions hold to within `tol`, using the scaled
/// residuals of the stopping test.
pub fn check_pstationary(
    alpha: ArrayView1<f64>,
    u: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    gamma: f64,
    c: f64,
    tol: f64,
) -> Result<bool> {
    let (t1, t2) = stationarity_residuals(alpha, u, signed_gram, gamma, c)?;
    Ok(t1 < tol && t2 < tol)
}

/// Runs the ADMM loop on a signed Gram matrix.
pub fn solve(signed_gram: &GramMatrix, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if !signed_gram.signed {
        return Err(Error::Argument("solver needs a label-signed gram matrix".into()));
    }
    let mut state = SolverState::initial(signed_gram, cfg);
    let mut theta = (f64::INFINITY, f64::INFINITY);
    let mut jitter = None;
    let mut converged = false;

    for k in 0..cfg.max_iter {
        let (set, z) = working_set(state.alpha.view(), state.lambda.view(), signed_gram, cfg)?;
        state.working_set = set;
        let u_next = update_u(z.view(), &state.working_set);
        let (alpha_next, info) = update_alpha(&state, u_next.view(), signed_gram, cfg)?;
        jitter = jitter.or(info.jitter);
        let lambda_next = update_lambda(&state, u_next.view(), alpha_next.view(), signed_gram, cfg);

        debug_assert!(state.working_set.iter().all(|&i| u_next[i] == 0.0));
        debug_assert!(lambda_next
            .iter()
            .enumerate()
            .all(|(i, &l)| l == 0.0 || state.working_set.binary_search(&i).is_ok()));

        state.alpha = alpha_next;
        state.u = u_next;
        state.lambda = lambda_next;
        state.iteration = k + 1;

        theta = residuals(state.alpha.view(), state.u.view(), signed_gram, cfg)?;
        if theta.0.max(theta.1) < cfg.tol {
            converged = true;
            break;
        }
    }

    let lambda_min = if cfg.eigen_diagnostics {
        Some(smallest_eigenvalue(&signed_gram.entries, 1e-8)?)
    } else {
        None
    };
    Ok(Solution {
        certificate: Certificate {
            theta1: theta.0,
            theta2: theta.1,
            converged,
            iterations_used: state.iteration,
            lambda_min,
            gamma: cfg.gamma(),
            jitter,
        },
        state,
    })
}

/// Trains on `d` with a precomputed (unsigned) Gram matrix. Returns the
/// model, its certificate and the training time of the ADMM loop alone.
pub fn train_with_gram(
    d: &Dataset,
    gram: &GramMatrix,
    cfg: &SolverConfig,
) -> Result<(TrainedModel, Certificate, f64)> {
    d.check_trainable()?;
    if gram.size() != d.len() {
        return Err(Error::Argument(format!(
            "gram matrix of size {} for {} samples",
            gram.size(),
            d.len()
        )));
    }
    let start = Instant::now();
    let signed = sign_gram(gram, d.labels.view())?;
    let solution = solve(&signed, cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let model = TrainedModel::from_solution(d, &gram.spec, cfg, &solution.state)?;
    Ok((model, solution.certificate, seconds))
}

/// Builds the Gram matrix and trains.
pub fn train(d: &Dataset, spec: &KernelSpec, cfg: &SolverConfig) -> Result<(TrainedModel, Certificate)> {
    spec.validate()?;
    d.check_trainable()?;
    let gram = gram_matrix(d, spec);
    let (model, cert, _) = train_with_gram(d, &gram, cfg)?;
    Ok((model, cert))
}
