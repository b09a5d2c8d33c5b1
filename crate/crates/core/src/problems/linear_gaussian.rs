//! Linear residual with additive Gaussian noise and a deterministic
//! Jacobian: `qhat = J (x - x*) + eps`, `eps ~ N(0, Sigma^2)`, `jhat = J`
//! plus an optional mean-zero Gaussian perturbation. With no Jacobian noise
//! the cross-covariance component of the gradient estimator vanishes
//! exactly, which makes this the reference setting for the recurrence
//! analysis and the Gauss-Newton consistency checks.

use nalgebra::{DMatrix, DVector};

use crate::problem::{BoxConstraints, McLsProblem, ReferenceSolution, SamplePair};
use crate::rng::{rng_for_run, standard_normal, RunRng};

#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    j_matrix: DMatrix<f64>,
    x_star: DVector<f64>,
    noise_chol: DMatrix<f64>,
    jac_noise_scale: f64,
    constraints: BoxConstraints,
    reference: ReferenceSolution,
}

impl LinearGaussianProblem {
    /// `noise_chol` is a lower-triangular factor of the residual noise
    /// covariance (`Sigma^2 = L L^T`); pass zeros for a noiseless residual.
    pub fn new(
        j_matrix: DMatrix<f64>,
        x_star: DVector<f64>,
        noise_chol: DMatrix<f64>,
        jac_noise_scale: f64,
    ) -> Self {
        let (m, n) = (j_matrix.nrows(), j_matrix.ncols());
        assert_eq!(x_star.len(), n, "x_star length != parameter count");
        assert_eq!(noise_chol.nrows(), m, "noise factor rows != residual count");
        assert_eq!(noise_chol.ncols(), m, "noise factor must be square");
        let mut s = DMatrix::zeros(n, n);
        s.gemm_tr(1.0, &j_matrix, &j_matrix, 0.0);
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        let reference = ReferenceSolution::new(x_star.clone(), s);
        LinearGaussianProblem {
            j_matrix,
            x_star,
            noise_chol,
            jac_noise_scale,
            constraints: BoxConstraints::unbounded(n),
            reference,
        }
    }

    /// Isotropic residual noise of standard deviation `noise_scale`.
    pub fn isotropic(
        j_matrix: DMatrix<f64>,
        x_star: DVector<f64>,
        noise_scale: f64,
        jac_noise_scale: f64,
    ) -> Self {
        let m = j_matrix.nrows();
        Self::new(j_matrix, x_star, DMatrix::identity(m, m) * noise_scale, jac_noise_scale)
    }

    /// Deterministically generated instance: standard-normal `J` entries and
    /// a uniform `x*` drawn from the given seed, isotropic residual noise.
    pub fn from_seed(
        n: usize,
        m: usize,
        seed: u64,
        noise_scale: f64,
        jac_noise_scale: f64,
    ) -> Self {
        assert!(n >= 1 && m >= n, "need 1 <= n <= m");
        let mut rng = rng_for_run(seed, 0);
        let j = DMatrix::from_fn(m, n, |_, _| standard_normal(&mut rng));
        let x_star = DVector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0));
        Self::isotropic(j, x_star, noise_scale, jac_noise_scale)
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.j_matrix
    }
}

impl McLsProblem for LinearGaussianProblem {
    fn dim_n(&self) -> usize {
        self.j_matrix.ncols()
    }

    fn dim_m(&self) -> usize {
        self.j_matrix.nrows()
    }

    fn constraints(&self) -> &BoxConstraints {
        &self.constraints
    }

    fn reference(&self) -> Option<&ReferenceSolution> {
        Some(&self.reference)
    }

    fn sample_into(&self, x: &DVector<f64>, out: &mut SamplePair, rng: &mut RunRng) {
        let m = self.dim_m();
        // residual noise first, then (optionally) Jacobian noise
        out.qhat.fill(0.0);
        for k in 0..m {
            let z = standard_normal(rng);
            for i in k..m {
                out.qhat[i] += self.noise_chol[(i, k)] * z;
            }
        }
        for i in 0..m {
            let mut v = out.qhat[i];
            for (jc, xj) in x.iter().enumerate() {
                v += self.j_matrix[(i, jc)] * (xj - self.x_star[jc]);
            }
            out.qhat[i] = v;
        }
        out.jhat.copy_from(&self.j_matrix);
        if self.jac_noise_scale != 0.0 {
            for v in out.jhat.iter_mut() {
                *v += self.jac_noise_scale * standard_normal(rng);
            }
        }
    }

    fn initial_point(&self, rng: &mut RunRng) -> DVector<f64> {
        DVector::from_fn(self.dim_n(), |i, _| self.x_star[i] + rng.uniform(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn noiseless_residual_is_exact() {
        let j = dmatrix![1.0, 2.0; 0.0, 1.0; 3.0, -1.0];
        let x_star = dvector![0.5, -0.5];
        let p = LinearGaussianProblem::isotropic(j.clone(), x_star.clone(), 0.0, 0.0);
        let mut rng = rng_for_run(1, 0);
        let x = dvector![1.0, 1.0];
        let pair = p.sample(&x, &mut rng);
        assert_relative_eq!(pair.qhat, &j * (x - x_star), epsilon = 1e-14);
        assert_eq!(pair.jhat, j);
    }

    #[test]
    fn mean_residual_vanishes_at_reference() {
        let p = LinearGaussianProblem::from_seed(2, 3, 42, 0.7, 0.0);
        let mut rng = rng_for_run(2, 0);
        let x = p.reference().unwrap().x_star.clone();
        let draws = 100_000;
        let mut mean = DVector::zeros(3);
        for _ in 0..draws {
            mean += p.sample(&x, &mut rng).qhat;
        }
        mean /= draws as f64;
        // standard error per component is 0.7/sqrt(draws)
        for v in mean.iter() {
            assert!(v.abs() < 5.0 * 0.7 / (draws as f64).sqrt(), "residual mean {v}");
        }
    }

    #[test]
    fn empirical_residual_covariance_matches_sigma() {
        let chol = dmatrix![0.8, 0.0; 0.3, 0.5];
        let sigma2 = &chol * chol.transpose();
        let p = LinearGaussianProblem::new(dmatrix![1.0; 0.5], dvector![0.0], chol.clone(), 0.0);
        let mut rng = rng_for_run(3, 0);
        let x = dvector![0.0];
        let draws = 100_000;
        let mut cov = DMatrix::zeros(2, 2);
        for _ in 0..draws {
            let q = p.sample(&x, &mut rng).qhat;
            cov.ger(1.0, &q, &q, 1.0);
        }
        cov /= draws as f64;
        assert!((cov - &sigma2).norm() / sigma2.norm() < 0.05);
    }
}
