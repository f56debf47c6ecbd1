//! Conjugate gradient for the coefficient subproblem and a smallest
//! eigenvalue routine for step-size diagnostics.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size above which `smallest_eigenvalue` switches from Jacobi sweeps to
/// shifted power iteration.
pub const JACOBI_MAX_DIM: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Stop once `|Ax - b| <= tol * max(1, |b|)`.
    pub tol: f64,
    /// Iteration cap; `None` means the system dimension.
    pub max_iter: Option<usize>,
    /// Start from the caller's `x0` instead of zero.
    pub warm_start: bool,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: None,
            warm_start: true,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("cg tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::Argument("cg max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Array1<f64>,
    pub iterations: usize,
    /// Final `|Ax - b|`.
    pub residual: f64,
}

/// Relative curvature below which a search direction counts as negative.
const NEGATIVE_CURVATURE: f64 = 1e-12;

/// Solves `A x = b` for a symmetric positive semidefinite operator given as
/// a closure. Fails with [`Error::Indefinite`] on a direction `p` with
/// `p'Ap < -eps |p|^2`.
pub fn cg_solve<F>(apply: F, b: ArrayView1<f64>, x0: ArrayView1<f64>, cfg: &CgConfig) -> Result<CgOutcome>
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    cfg.validate()?;
    let n = b.len();
    if x0.len() != n {
        return Err(Error::Argument(format!("x0 has length {}, b has length {n}", x0.len())));
    }
    let max_iter = cfg.max_iter.unwrap_or(n).max(1);
    let target = cfg.tol * b.dot(&b).sqrt().max(1.0);

    let mut x = if cfg.warm_start { x0.to_owned() } else { Array1::zeros(n) };
    let mut r = &b - &apply(x.view());
    let mut rr = r.dot(&r);
    let mut p = r.clone();
    let mut iterations = 0;

    while rr.sqrt() > target && iterations < max_iter {
        let ap = apply(p.view());
        let pap = p.dot(&ap);
        let pp = p.dot(&p);
        if pap < -NEGATIVE_CURVATURE * pp {
            return Err(Error::Indefinite { curvature: pap / pp });
        }
        if pap <= 0.0 {
            // p lies in the null space; no further progress is possible.
            break;
        }
        let step = rr / pap;
        x.scaled_add(step, &p);
        r.scaled_add(-step, &ap);
        let rr_next = r.dot(&r);
        p = &r + &(&p * (rr_next / rr));
        rr = rr_next;
        iterations += 1;
    }

    // Report the true residual rather than the recursively updated one.
    let r_true = &b - &apply(x.view());
    let residual = r_true.dot(&r_true).sqrt();
    Ok(CgOutcome {
        x,
        iterations,
        residual,
    })
}

fn check_symmetric(m: &Array2<f64>) -> Result<()> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Argument(format!("matrix is {r}x{c}, not square")));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..r {
        for j in (i + 1)..r {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 * scale {
                return Err(Error::Argument(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// in ascending order.
pub fn jacobi_eigenvalues(m: &Array2<f64>, tol: f64) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.nrows();
    let mut a = m.to_owned();
    let off = |a: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[[i, j]] * a[[i, j]];
                }
            }
        }
        s.sqrt()
    };
    let target = (tol * 1e-3).max(1e-15 * a.iter().map(|v| v * v).sum::<f64>().sqrt());

    for _sweep in 0..100 {
        if off(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = a.diag().to_vec();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix. Uses Jacobi sweeps up to
/// [`JACOBI_MAX_DIM`], shifted power iteration on `s I - M` beyond it.
pub fn smallest_eigenvalue(m: &Array2<f64>, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
    }
    let n = m.nrows();
    if n == 0 {
        return Err(Error::Argument("empty matrix has no eigenvalues".into()));
    }
    if n <= JACOBI_MAX_DIM {
        return Ok(jacobi_eigenvalues(m, tol)?[0]);
    }
    check_symmetric(m)?;

    // Gershgorin upper bound makes s I - M positive semidefinite, so its
    // dominant eigenvalue is s - lambda_min.
    let shift = (0..n)
        .map(|i| m[[i, i]] + (0..n).filter(|&j| j != i).map(|j| m[[i, j]].abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.dot(&v).sqrt();
    let shifted = |v: &Array1<f64>| v.mapv(|x| shift * x) - m.dot(v);
    let mut mu = 0.0;
    for _ in 0..100_000 {
        let w = shifted(&v);
        let mu_next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Ok(shift);
        }
        v = w / norm;
        let done = (mu_next - mu).abs() < tol * 1e-2;
        mu = mu_next;
        if done {
            break;
        }
    }
    Ok(shift - mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dense(a: &Array2<f64>) -> impl Fn(ArrayView1<f64>) -> Array1<f64> + '_ {
        move |v| a.dot(&v)
    }

    #[test]
    fn identity_in_one_step() {
        let a = Array2::<f64>::eye(4);
        let b = array![1.0, -2.0, 3.5, 0.25];
        let out = cg_solve(dense(&a), b.view(), Array1::zeros(4).view(), &CgConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((&out.x - &b).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn diagonal_system() {
        let a = array![[2.0, 0.0], [0.0, 1.0]];
        let out = cg_solve(dense(&a), array![2.0, 1.0].view(), Array1::zeros(2).view(), &CgConfig::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-12 && (out.x[1] - 1.0).abs() < 1e-12);
        assert!(out.residual <= 1e-8);
    }

    #[test]
    fn warm_start_at_solution_takes_no_steps() {
        let a = array![[3.0, 1.0], [1.0, 2.0]];
        let x = array![0.5, -1.0];
        let b = a.dot(&x);
        let out = cg_solve(dense(&a), b.view(), x.view(), &CgConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn indefinite_operator_is_reported() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        let err = cg_solve(dense(&a), array![0.0, 1.0].view(), Array1::zeros(2).view(), &CgConfig::default());
        assert!(matches!(err, Err(Error::Indefinite { .. })));
    }

    #[test]
    fn semidefinite_consistent_system() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let out = cg_solve(dense(&a), array![2.0, 2.0].view(), Array1::zeros(2).view(), &CgConfig::default()).unwrap();
        assert!((out.x[0] + out.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_config() {
        let a = Array2::<f64>::eye(1);
        let cfg = CgConfig {
            tol: 0.0,
            ..CgConfig::default()
        };
        assert!(cg_solve(dense(&a), array![1.0].view(), array![0.0].view(), &cfg).is_err());
    }

    #[test]
    fn eigen_small_cases() {
        assert!((smallest_eigenvalue(&Array2::eye(3), 1e-10).unwrap() - 1.0).abs() < 1e-12);
        let d = Array2::from_diag(&array![3.0, 0.5, 7.0]);
        assert!((smallest_eigenvalue(&d, 1e-10).unwrap() - 0.5).abs() < 1e-12);
        assert!(smallest_eigenvalue(&array![[1.0, 2.0], [0.0, 1.0]], 1e-8).is_err());
    }

    #[test]
    fn power_iteration_path() {
        let n = JACOBI_MAX_DIM + 10;
        let diag = Array1::from_shape_fn(n, |i| 1.0 + i as f64 / n as f64);
        let mut m = Array2::from_diag(&diag);
        m[[0, 0]] = 0.25;
        let got = smallest_eigenvalue(&m, 1e-6).unwrap();
        assert!((got - 0.25).abs() < 1e-4, "{got}");
    }
}
