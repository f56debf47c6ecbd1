//! Proximal operator of `u -> gamma * C * |u_+|_0`.
//!
//! Componentwise, `argmin_v (v - z)^2 / 2 + gamma * C * [v > 0]` is `0`
//! when `0 < z <= sqrt(2 gamma C)` and `z` otherwise. At `z` equal to the
//! threshold both candidates cost `gamma * C`; the closed interval sends it
//! to zero.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    gamma: f64,
    c: f64,
    threshold: f64,
}

impl ProxParams {
    pub fn new(gamma: f64, c: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(Error::Argument(format!(
                "prox needs gamma > 0 and C > 0, got gamma={gamma}, C={c}"
            )));
        }
        Ok(Self {
            gamma,
            c,
            threshold: (2.0 * gamma * c).sqrt(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `sqrt(2 gamma C)`
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Whether `z` falls in the zeroed interval `(0, sqrt(2 gamma C)]`.
    #[inline]
    pub fn zeroes(&self, z: f64) -> bool {
        z > 0.0 && z <= self.threshold
    }
}

#[inline]
pub fn prox_l01_scalar(z: f64, p: &ProxParams) -> f64 {
    if p.zeroes(z) {
        0.0
    } else {
        z
    }
}

pub fn prox_l01_vector(z: ArrayView1<f64>, p: &ProxParams) -> Array1<f64> {
    z.mapv(|v| prox_l01_scalar(v, p))
}

/// Indices where the prox sets a positive entry to zero, ascending.
pub fn zero_set(z: ArrayView1<f64>, p: &ProxParams) -> Vec<usize> {
    z.iter()
        .enumerate()
        .filter_map(|(i, &v)| p.zeroes(v).then_some(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn unit() -> ProxParams {
        ProxParams::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn scalar_branches() {
        let p = unit();
        assert!((p.threshold() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(prox_l01_scalar(1.0, &p), 0.0);
        assert_eq!(prox_l01_scalar(-0.5, &p), -0.5);
        assert_eq!(prox_l01_scalar(2.0, &p), 2.0);
        assert_eq!(prox_l01_scalar(0.0, &p), 0.0);
        assert_eq!(prox_l01_scalar(1.4, &p), 0.0);
        assert_eq!(prox_l01_scalar(1.42, &p), 1.42);
    }

    #[test]
    fn threshold_itself_is_zeroed() {
        let p = ProxParams::new(0.5, 2.0).unwrap();
        let t = p.threshold();
        assert_eq!(prox_l01_scalar(t, &p), 0.0);
        assert_eq!(zero_set(array![t].view(), &p), vec![0]);
    }

    #[test]
    fn vector_and_zero_set() {
        let p = unit();
        let z = array![0.5, -1.0, 2.0];
        assert_eq!(prox_l01_vector(z.view(), &p), array![0.0, -1.0, 2.0]);
        assert_eq!(zero_set(z.view(), &p), vec![0]);
        assert_eq!(prox_l01_vector(Array1::zeros(3).view(), &p), Array1::<f64>::zeros(3));
        assert!(zero_set(array![-1.0, -0.1].view(), &p).is_empty());
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        assert!(ProxParams::new(0.0, 1.0).is_err());
        assert!(ProxParams::new(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn idempotent(z in -5.0f64..5.0, g in 0.01f64..4.0, c in 0.01f64..4.0) {
            let p = ProxParams::new(g, c).unwrap();
            let once = prox_l01_scalar(z, &p);
            prop_assert_eq!(prox_l01_scalar(once, &p), once);
        }

        #[test]
        fn vector_matches_scalar(z in proptest::collection::vec(-3.0f64..3.0, 0..40), gc in 0.01f64..4.0) {
            let p = ProxParams::new(gc, 1.0).unwrap();
            let v = Array1::from(z.clone());
            let out = prox_l01_vector(v.view(), &p);
            for (i, zi) in z.iter().enumerate() {
                prop_assert_eq!(out[i], prox_l01_scalar(*zi, &p));
            }
        }

        #[test]
        fn larger_penalty_zeroes_more(
            z in proptest::collection::vec(-3.0f64..3.0, 0..40),
            g1 in 0.01f64..2.0, c1 in 0.01f64..2.0, scale in 1.0f64..3.0,
        ) {
            let small = ProxParams::new(g1, c1).unwrap();
            let large = ProxParams::new(g1 * scale, c1).unwrap();
            let v = Array1::from(z);
            let a = zero_set(v.view(), &small);
            let b = zero_set(v.view(), &large);
            prop_assert!(a.iter().all(|i| b.contains(i)));
        }
    }
}
