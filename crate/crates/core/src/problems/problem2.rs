//! A sinh-parameterized linear family with multiplicative uniform noise.
//!
//! The design matrix has entries `A_ij = exp(-(n m / 2) (i/m - j/n)^2)` with
//! 1-based indices, targets `y_i = i^2`, and the residual estimator is
//! `qhat = A B u - y` where `u_i = sinh(x_i)` and `B` is a fresh diagonal
//! matrix of i.i.d. uniforms on `[0.15, 0.85]` per sample pair. The Jacobian
//! estimate `jhat = A B diag(cosh x)` reuses the same `B`, which is exactly
//! the within-pair correlation the paired estimators are built for.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::spd_inverse;
use crate::problem::{BoxConstraints, McLsProblem, ReferenceSolution, SamplePair};
use crate::rng::RunRng;

pub const NOISE_LO: f64 = 0.15;
pub const NOISE_HI: f64 = 0.85;

#[derive(Debug, Error)]
pub enum Problem2Error {
    #[error("dimensions must satisfy 1 <= n <= m, got n={n}, m={m}")]
    BadDimensions { n: usize, m: usize },
    #[error("A^T A is rank deficient for n={n}, m={m}")]
    RankDeficient { n: usize, m: usize },
}

#[derive(Debug, Clone)]
pub struct Problem2 {
    n: usize,
    m: usize,
    a_matrix: DMatrix<f64>,
    y: DVector<f64>,
    u_star: DVector<f64>,
    constraints: BoxConstraints,
    reference: ReferenceSolution,
    instance_seed: u64,
}

impl Problem2 {
    /// Builds the instance for the given dimensions. Everything except the
    /// per-run initial point is a deterministic function of `(n, m)`;
    /// `instance_seed` is stored for provenance only.
    pub fn make(n: usize, m: usize, instance_seed: u64) -> Result<Self, Problem2Error> {
        if n < 1 || m < n {
            return Err(Problem2Error::BadDimensions { n, m });
        }
        let nm = (n * m) as f64;
        let a_matrix = DMatrix::from_fn(m, n, |i, j| {
            let d = (i + 1) as f64 / m as f64 - (j + 1) as f64 / n as f64;
            (-0.5 * nm * d * d).exp()
        });
        let y = DVector::from_fn(m, |i, _| ((i + 1) as f64).powi(2));

        let mut ata = DMatrix::zeros(n, n);
        ata.gemm_tr(1.0, &a_matrix, &a_matrix, 0.0);
        let ata_inv = spd_inverse(&ata).ok_or(Problem2Error::RankDeficient { n, m })?;
        let aty = a_matrix.tr_mul(&y);
        let u_star = 2.0 * &ata_inv * aty;

        let lower = u_star.map(|u| (u - 1.0).asinh());
        let upper = u_star.map(|u| (u + 1.0).asinh());
        let constraints = BoxConstraints::new(lower, upper);

        // x* = asinh(u*): the stationary point of 0.5 ||0.5 A u - y||^2,
        // interior to the box by construction.
        let x_star = u_star.map(|u| u.asinh());

        // S = E[Jhat]^T E[Jhat] with E[Jhat] = 0.5 A diag(cosh x*)
        let cosh = x_star.map(|x| x.cosh());
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = 0.25 * cosh[i] * ata[(i, j)] * cosh[j];
            }
        }
        let reference = ReferenceSolution::new(x_star, s);

        Ok(Problem2 { n, m, a_matrix, y, u_star, constraints, reference, instance_seed })
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a_matrix
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn u_star(&self) -> &DVector<f64> {
        &self.u_star
    }

    /// Mean residual `E[qhat] = 0.5 A u - y` at `x` (since `E[B] = I/2`).
    pub fn mean_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = x.map(|v| v.sinh());
        0.5 * &self.a_matrix * u - &self.y
    }

    /// Mean Jacobian `E[jhat] = 0.5 A diag(cosh x)`.
    pub fn mean_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.a_matrix.clone();
        for c in 0..self.n {
            let scale = 0.5 * x[c].cosh();
            j.column_mut(c).scale_mut(scale);
        }
        j
    }

    /// Instance provenance as JSON: dimensions, design matrix, targets,
    /// least-squares solution, and box bounds.
    pub fn provenance_json(&self) -> serde_json::Value {
        serde_json::json!({
            "problem": "problem2",
            "n": self.n,
            "m": self.m,
            "instance_seed": self.instance_seed,
            "a_matrix": (0..self.m)
                .map(|i| (0..self.n).map(|j| self.a_matrix[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "y": self.y.iter().copied().collect::<Vec<_>>(),
            "u_star": self.u_star.iter().copied().collect::<Vec<_>>(),
            "box_lower": self.constraints.lower.iter().copied().collect::<Vec<_>>(),
            "box_upper": self.constraints.upper.iter().copied().collect::<Vec<_>>(),
        })
    }
}

impl McLsProblem for Problem2 {
    fn dim_n(&self) -> usize {
        self.n
    }

    fn dim_m(&self) -> usize {
        self.m
    }

    fn constraints(&self) -> &BoxConstraints {
        &self.constraints
    }

    fn reference(&self) -> Option<&ReferenceSolution> {
        Some(&self.reference)
    }

    fn sample_into(&self, x: &DVector<f64>, out: &mut SamplePair, rng: &mut RunRng) {
        out.qhat.copy_from(&self.y);
        out.qhat.neg_mut();
        for j in 0..self.n {
            let b = rng.uniform(NOISE_LO, NOISE_HI);
            let col = self.a_matrix.column(j);
            let qs = b * x[j].sinh();
            let js = b * x[j].cosh();
            let mut out_col = out.jhat.column_mut(j);
            for i in 0..self.m {
                out.qhat[i] += col[i] * qs;
                out_col[i] = col[i] * js;
            }
        }
    }

    /// Uniform draw inside the feasible box, shared across methods by the
    /// harness protocol.
    fn initial_point(&self, rng: &mut RunRng) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| {
            rng.uniform(self.constraints.lower[i], self.constraints.upper[i])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for_run;
    use approx::assert_relative_eq;

    #[test]
    fn one_by_one_instance_hand_values() {
        let p = Problem2::make(1, 1, 0).unwrap();
        assert_relative_eq!(p.a_matrix()[(0, 0)], 1.0);
        assert_relative_eq!(p.targets()[0], 1.0);
        assert_relative_eq!(p.u_star()[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(p.constraints().lower[0], 1.0f64.asinh(), epsilon = 1e-12);
        assert_relative_eq!(p.constraints().upper[0], 3.0f64.asinh(), epsilon = 1e-12);
    }

    #[test]
    fn construction_is_pure_and_seed_independent() {
        let a = Problem2::make(4, 5, 1).unwrap();
        let b = Problem2::make(4, 5, 99).unwrap();
        assert_eq!(a.a_matrix(), b.a_matrix());
        assert_eq!(a.u_star(), b.u_star());
        assert_eq!(a.reference().unwrap().x_star, b.reference().unwrap().x_star);
    }

    #[test]
    fn bad_dimensions_are_rejected() {
        assert!(matches!(Problem2::make(0, 1, 0), Err(Problem2Error::BadDimensions { .. })));
        assert!(matches!(Problem2::make(5, 4, 0), Err(Problem2Error::BadDimensions { .. })));
    }

    #[test]
    fn reference_point_is_interior() {
        let p = Problem2::make(4, 5, 0).unwrap();
        let x_star = &p.reference().unwrap().x_star;
        let c = p.constraints();
        for i in 0..4 {
            assert!(c.lower[i] < x_star[i] && x_star[i] < c.upper[i]);
        }
    }

    #[test]
    fn entries_of_a_lie_in_unit_interval() {
        let p = Problem2::make(4, 5, 0).unwrap();
        assert!(p.a_matrix().iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn sample_matches_dense_formula() {
        let p = Problem2::make(3, 4, 0).unwrap();
        let mut rng = rng_for_run(7, 0);
        let x = p.initial_point(&mut rng);

        // reproduce the same noise draws through a cloned stream
        let mut rng_probe = rng.clone();
        let b = DVector::from_fn(3, |_, _| rng_probe.uniform(NOISE_LO, NOISE_HI));

        let pair = p.sample(&x, &mut rng);
        let u = x.map(|v| v.sinh());
        let q_expect = p.a_matrix() * DMatrix::from_diagonal(&b) * u - p.targets();
        assert_relative_eq!(pair.qhat, q_expect, epsilon = 1e-12);
        let j_expect =
            p.a_matrix() * DMatrix::from_diagonal(&b) * DMatrix::from_diagonal(&x.map(|v| v.cosh()));
        assert_relative_eq!(pair.jhat, j_expect, epsilon = 1e-12);
    }

    #[test]
    fn provenance_json_has_expected_shape() {
        let p = Problem2::make(2, 3, 5).unwrap();
        let v = p.provenance_json();
        assert_eq!(v["n"], 2);
        assert_eq!(v["m"], 3);
        assert_eq!(v["a_matrix"].as_array().unwrap().len(), 3);
        assert_eq!(v["a_matrix"][0].as_array().unwrap().len(), 2);
        assert_eq!(v["instance_seed"], 5);
    }
}
