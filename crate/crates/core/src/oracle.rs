//! Independent reference computations for tests: the objective, a
//! brute-force global minimizer on tiny instances, a prox grid search and
//! the linear-kernel norm identity.

use ndarray::{Array1, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{gram_matrix, sign_gram, GramMatrix, Kernel, KernelSpec};
use crate::linalg::jacobi_eigenvalues;

/// `1/2 a'Ka + C |u_+|_0` split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub quadratic: f64,
    pub loss_count: usize,
    pub total: f64,
}

impl ObjectiveValue {
    fn new(quadratic: f64, loss_count: usize, c: f64) -> Self {
        Self {
            quadratic,
            loss_count,
            total: quadratic + c * loss_count as f64,
        }
    }
}

fn check_len(alpha: ArrayView1<f64>, g: &GramMatrix) -> Result<()> {
    if alpha.len() != g.size() {
        return Err(Error::Argument(format!(
            "alpha has length {}, gram has size {}",
            alpha.len(),
            g.size()
        )));
    }
    Ok(())
}

/// Objective with `u = e + K alpha` taken from the constraint.
pub fn objective(alpha: ArrayView1<f64>, signed_gram: &GramMatrix, c: f64) -> Result<ObjectiveValue> {
    check_len(alpha, signed_gram)?;
    let ka = signed_gram.entries.dot(&alpha);
    let quadratic = 0.5 * alpha.dot(&ka);
    let loss = ka.iter().filter(|&&v| 1.0 + v > 0.0).count();
    Ok(ObjectiveValue::new(quadratic, loss, c))
}

/// Objective of a solver pair, counting violations from the returned `u`.
pub fn objective_pair(
    alpha: ArrayView1<f64>,
    u: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    c: f64,
) -> Result<ObjectiveValue> {
    check_len(alpha, signed_gram)?;
    check_len(u, signed_gram)?;
    let quadratic = 0.5 * alpha.dot(&signed_gram.entries.dot(&alpha));
    let loss = u.iter().filter(|&&v| v > 0.0).count();
    Ok(ObjectiveValue::new(quadratic, loss, c))
}

/// Largest instance `global_bruteforce` accepts by default.
pub const BRUTEFORCE_CAP: usize = 8;
const PG_ITERATIONS: usize = 100_000;
/// Margin violation tolerated on constrained indices.
const FEASIBILITY_TOL: f64 = 1e-6;

/// Global minimizer by enumerating the set `S` of indices allowed to
/// violate the margin. For each `S` the convex program
/// `min 1/2 a'Ka  s.t. (e + Ka)_i <= 0, i not in S` is solved through its
/// dual `min_{mu >= 0} 1/2 mu'K_RR mu - e'mu` by accelerated projected
/// gradient, with `alpha_R = -mu`, `alpha_S = 0`.
pub fn global_bruteforce(signed_gram: &GramMatrix, c: f64, m_cap: usize) -> Result<(Array1<f64>, ObjectiveValue)> {
    let m = signed_gram.size();
    if m > m_cap {
        return Err(Error::Argument(format!("brute force limited to {m_cap} samples, got {m}")));
    }
    if !(c > 0.0) {
        return Err(Error::Argument(format!("C must be positive, got {c}")));
    }
    let mut best: Option<(Array1<f64>, ObjectiveValue)> = None;
    for mask in 0u32..(1u32 << m) {
        let constrained: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) == 0).collect();
        let alpha = constrained_minimizer(signed_gram, &constrained)?;
        let u = signed_gram.entries.dot(&alpha) + 1.0;
        if constrained.iter().any(|&i| u[i] > FEASIBILITY_TOL) {
            continue;
        }
        let loss = (0..m)
            .filter(|i| constrained.binary_search(i).is_err() && u[*i] > 0.0)
            .count();
        let quadratic = 0.5 * alpha.dot(&signed_gram.entries.dot(&alpha));
        let value = ObjectiveValue::new(quadratic, loss, c);
        if best.as_ref().map_or(true, |(_, b)| value.total < b.total) {
            best = Some((alpha, value));
        }
    }
    // mask with every bit set constrains nothing and is always feasible
    Ok(best.expect("the unconstrained branch is feasible"))
}

fn constrained_minimizer(g: &GramMatrix, r: &[usize]) -> Result<Array1<f64>> {
    let m = g.size();
    let mut alpha = Array1::zeros(m);
    if r.is_empty() {
        return Ok(alpha);
    }
    let q = g.entries.select(Axis(0), r).select(Axis(1), r);
    let lmax = *jacobi_eigenvalues(&q, 1e-12)?.last().expect("nonempty");
    if !(lmax > 0.0) {
        return Ok(alpha);
    }
    let step = 1.0 / lmax;
    let n = r.len();
    let mut mu = Array1::<f64>::zeros(n);
    let mut y = mu.clone();
    let mut t = 1.0f64;
    for _ in 0..PG_ITERATIONS {
        let grad = q.dot(&y) - 1.0;
        let next = (&y - &(grad * step)).mapv(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let delta = &next - &mu;
        let moved = delta.dot(&delta).sqrt();
        // restart momentum when it stops helping
        let g_now = q.dot(&next) - 1.0;
        if delta.dot(&g_now) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            y = &next + &(delta * ((t - 1.0) / t_next));
            t = t_next;
        }
        mu = next;
        if moved < 1e-14 * (1.0 + mu.dot(&mu).sqrt()) {
            break;
        }
    }
    for (&i, &v) in r.iter().zip(mu.iter()) {
        alpha[i] = -v;
    }
    Ok(alpha)
}

/// `argmin_v (v - z)^2 / 2 + gamma C [v > 0]` by scanning `v` over a grid of
/// the given step covering `[min(z,0) - 1, max(z,0) + 1]`, plus the exact
/// candidates `0` and `z`.
pub fn prox_grid_oracle(z: f64, gamma: f64, c: f64, step: f64) -> f64 {
    let cost = |v: f64| 0.5 * (v - z) * (v - z) + if v > 0.0 { gamma * c } else { 0.0 };
    let lo = z.min(0.0) - 1.0;
    let hi = z.max(0.0) + 1.0;
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best = (cost(0.0), 0.0);
    for k in 0..=n {
        let v = lo + k as f64 * step;
        let cv = cost(v);
        if cv < best.0 {
            best = (cv, v);
        }
    }
    if cost(z) < best.0 {
        best = (cost(z), z);
    }
    best.1
}

/// `(1/2 a'Ka, 1/2 |w|^2 + 1/2 b^2)` with `(w, b) = -sum a_i y_i (x_i, 1)`,
/// for the bias-augmented linear kernel.
pub fn degeneracy_check(d: &Dataset, spec: &KernelSpec, alpha: ArrayView1<f64>) -> Result<(f64, f64)> {
    if spec.kernel != Kernel::Linear || !spec.augment_bias {
        return Err(Error::Argument("degeneracy check needs the bias-augmented linear kernel".into()));
    }
    if alpha.len() != d.len() {
        return Err(Error::Argument(format!("{} coefficients for {} samples", alpha.len(), d.len())));
    }
    let signed = sign_gram(&gram_matrix(d, spec), d.labels.view())?;
    let lhs = 0.5 * alpha.dot(&signed.entries.dot(&alpha));

    let mut w = Array1::<f64>::zeros(d.dim());
    let mut b = 0.0;
    for i in 0..d.len() {
        let coef = -alpha[i] * d.labels[i];
        w.scaled_add(coef, &d.features.row(i));
        b += coef;
    }
    let rhs = 0.5 * w.dot(&w) + 0.5 * b * b;
    Ok((lhs, rhs))
}

/// Smallest objective among `samples` feasible neighbours
/// `(alpha + delta, e + K(alpha + delta))` with `|delta| <= radius`.
pub fn best_neighbour(
    alpha: ArrayView1<f64>,
    signed_gram: &GramMatrix,
    c: f64,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_len(alpha, signed_gram)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = alpha.len();
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let dir: Array1<f64> = Array1::from_shape_fn(m, |_| rng.gen_range(-1.0..1.0));
        let norm = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
        let scale = radius * rng.gen_range(0.0..1.0) / norm;
        let cand = &alpha + &(dir * scale);
        best = best.min(objective(cand.view(), signed_gram, c)?.total);
    }
    Ok(best)
}
