//! A 2-parameter, 3-residual benchmark with a clamped response function.
//!
//! The response is `y = x_1 + x_2 G` with `G ~ N(0,1)`, pushed through
//! `L(y) = (|y| - |y-1| + 1)/2`, which equals `clamp(y, 0, 1)` everywhere.
//! The derivative `L'` is the indicator of `(0, 1)`, set to `1/2` at the two
//! kink points (a probability-zero event, fixed for reproducibility).

use nalgebra::{dvector, DMatrix, DVector};

use crate::estimators::UStatAccumulator;
use crate::problem::{project_in_place, BoxConstraints, McLsProblem, ReferenceSolution, SamplePair};
use crate::rng::{rng_for_run, standard_normal, RunRng};

/// Numerically computed constrained minimizer of `0.5 ||E[qhat]||^2` for
/// this sampler: the scale bound `x_2 <= 3` is active at the optimum, and
/// the first coordinate comes from high-resolution Gaussian quadrature of
/// the mean residual plus golden-section refinement along that face (the
/// tangential gradient there is below 2e-6).
pub const PROBLEM1_X_STAR: [f64; 2] = [0.107960, 3.0];

/// Internal seed of the one-time Monte Carlo estimate of the mean Jacobian at
/// the reference point; fixed so construction is pure.
const PRECOND_ESTIMATE_SEED: u64 = 0x4D43_4C53_0000_0001;
const PRECOND_ESTIMATE_DRAWS: usize = 1_000_000;

fn l_clamp(y: f64) -> f64 {
    (y.abs() - (y - 1.0).abs() + 1.0) / 2.0
}

fn l_prime(y: f64) -> f64 {
    if y == 0.0 || y == 1.0 {
        0.5
    } else if y > 0.0 && y < 1.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct Problem1 {
    constraints: BoxConstraints,
    reference: ReferenceSolution,
}

impl Default for Problem1 {
    fn default() -> Self {
        Self::new()
    }
}

impl Problem1 {
    pub fn new() -> Self {
        let constraints = BoxConstraints::new(dvector![0.0, 1.0], dvector![2.0, 3.0]);
        let x_star = dvector![PROBLEM1_X_STAR[0], PROBLEM1_X_STAR[1]];

        // Gauss-Newton Hessian approximation S = E[Jhat]^T E[Jhat] at x*,
        // with the mean Jacobian estimated once from a fixed stream.
        let mut rng = rng_for_run(PRECOND_ESTIMATE_SEED, 0);
        let mut mean_j = DMatrix::zeros(3, 2);
        let mut buf = SamplePair::zeros(3, 2);
        for _ in 0..PRECOND_ESTIMATE_DRAWS {
            sample_with_g(&x_star, standard_normal(&mut rng), &mut buf);
            mean_j += &buf.jhat;
        }
        mean_j /= PRECOND_ESTIMATE_DRAWS as f64;
        let mut s = DMatrix::zeros(2, 2);
        s.gemm_tr(1.0, &mean_j, &mean_j, 0.0);
        for i in 0..2 {
            for j in 0..i {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }

        Problem1 { constraints, reference: ReferenceSolution::new(x_star, s) }
    }

    /// Deterministic sampling path given the Gaussian draw, used by tests.
    pub fn sample_with_g(x: &DVector<f64>, g: f64, out: &mut SamplePair) {
        sample_with_g(x, g, out);
    }
}

fn sample_with_g(x: &DVector<f64>, g: f64, out: &mut SamplePair) {
    let y = x[0] + x[1] * g;
    out.qhat[0] = l_clamp(y) - 0.5;
    out.qhat[1] = l_clamp(y - 1.0) - 0.5;
    out.qhat[2] = l_clamp(2.0 * y - 1.0) - 0.2;
    let d0 = l_prime(y);
    let d1 = l_prime(y - 1.0);
    let d2 = 2.0 * l_prime(2.0 * y - 1.0);
    out.jhat[(0, 0)] = d0;
    out.jhat[(1, 0)] = d1;
    out.jhat[(2, 0)] = d2;
    out.jhat[(0, 1)] = d0 * g;
    out.jhat[(1, 1)] = d1 * g;
    out.jhat[(2, 1)] = d2 * g;
}

impl McLsProblem for Problem1 {
    fn dim_n(&self) -> usize {
        2
    }

    fn dim_m(&self) -> usize {
        3
    }

    fn constraints(&self) -> &BoxConstraints {
        &self.constraints
    }

    fn reference(&self) -> Option<&ReferenceSolution> {
        Some(&self.reference)
    }

    fn sample_into(&self, x: &DVector<f64>, out: &mut SamplePair, rng: &mut RunRng) {
        sample_with_g(x, standard_normal(rng), out);
    }

    /// The experimental protocol starts every run at `(2, 1)`.
    fn initial_point(&self, _rng: &mut RunRng) -> DVector<f64> {
        dvector![2.0, 1.0]
    }
}

/// Recomputes the reference solution with the original procedure: eight
/// independent averaged-SGD instances (`alpha = 0.66`, 10 pairs per
/// iteration, start `(1, 1)`, preconditioned by the inverse of a 1000-sample
/// Gauss-Newton estimate at the start point), each run for
/// `iterations_per_instance` iterations.
///
/// Returns the mean of the eight outputs and the covariance matrix of that
/// mean.
pub fn problem1_reference_recompute(
    iterations_per_instance: u64,
    rng: &mut RunRng,
) -> (DVector<f64>, DMatrix<f64>) {
    const INSTANCES: usize = 8;
    const PAIRS_PER_ITER: usize = 10;
    const ALPHA: f64 = 0.66;
    const GN_ESTIMATE_PAIRS: usize = 1000;

    let problem = Problem1::new();
    let seeds: Vec<u64> = (0..INSTANCES).map(|_| rng.next_u64()).collect();

    let mut outputs = Vec::with_capacity(INSTANCES);
    for seed in seeds {
        let mut rng = RunRng::from_seed(seed);
        let x1 = dvector![1.0, 1.0];

        // U-statistic estimate of J^T J at the start point
        let mut sum_j = DMatrix::zeros(3, 2);
        let mut sum_jtj = DMatrix::zeros(2, 2);
        let mut buf = SamplePair::zeros(3, 2);
        for _ in 0..GN_ESTIMATE_PAIRS {
            problem.sample_into(&x1, &mut buf, &mut rng);
            sum_j += &buf.jhat;
            sum_jtj.gemm_tr(1.0, &buf.jhat, &buf.jhat, 1.0);
        }
        let k = GN_ESTIMATE_PAIRS as f64;
        let mut gn = DMatrix::zeros(2, 2);
        gn.gemm_tr(1.0, &sum_j, &sum_j, 0.0);
        gn -= &sum_jtj;
        gn /= k * (k - 1.0);
        let d = crate::linalg::spd_inverse(&gn).expect("Gauss-Newton estimate not invertible");

        let mut x = x1;
        let mut avg = DVector::zeros(2);
        let mut acc = UStatAccumulator::new(3, 2);
        let mut g = DVector::zeros(2);
        for k in 1..=iterations_per_instance {
            acc.reset();
            for _ in 0..PAIRS_PER_ITER {
                problem.sample_into(&x, &mut buf, &mut rng);
                acc.push(&buf);
            }
            acc.finish_into(&mut g).expect("pairs per iteration >= 2");
            let a_k = (k as f64).powf(-ALPHA);
            x.gemv(-a_k, &d, &g, 1.0);
            project_in_place(&mut x, &problem.constraints);
            // running mean of the iterates
            let w = 1.0 / k as f64;
            avg.axpy(w, &x, 1.0 - w);
        }
        project_in_place(&mut avg, &problem.constraints);
        outputs.push(avg);
    }

    let mut mean = DVector::zeros(2);
    for o in &outputs {
        mean += o;
    }
    mean /= INSTANCES as f64;

    let mut cov = DMatrix::zeros(2, 2);
    for o in &outputs {
        let c = o - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (INSTANCES - 1) as f64; // sample covariance
    cov /= INSTANCES as f64; // covariance of the mean
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clamp_identity_on_a_dense_grid() {
        for k in 0..=10_000 {
            let y = -3.0 + 7.0 * (k as f64) / 10_000.0;
            assert_relative_eq!(l_clamp(y), y.clamp(0.0, 1.0), epsilon = 1e-15);
        }
        assert_eq!(l_clamp(-1.0), 0.0);
        assert_eq!(l_clamp(0.5), 0.5);
        assert_eq!(l_clamp(2.0), 1.0);
    }

    #[test]
    fn forced_gaussian_draw_hand_values() {
        let x = dvector![0.6, 2.0];
        let mut out = SamplePair::zeros(3, 2);
        Problem1::sample_with_g(&x, 0.0, &mut out);
        assert_relative_eq!(out.qhat[0], 0.1, epsilon = 1e-15);
        assert_relative_eq!(out.qhat[1], -0.5, epsilon = 1e-15);
        assert_relative_eq!(out.qhat[2], 0.0, epsilon = 1e-15);
        assert_eq!(out.jhat.column(0).clone_owned(), dvector![1.0, 0.0, 2.0]);
        assert_eq!(out.jhat.column(1).clone_owned(), dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn kink_derivative_is_one_half() {
        assert_eq!(l_prime(0.0), 0.5);
        assert_eq!(l_prime(1.0), 0.5);
        assert_eq!(l_prime(0.5), 1.0);
        assert_eq!(l_prime(-0.1), 0.0);
        assert_eq!(l_prime(1.1), 0.0);
    }

    #[test]
    fn construction_is_pure() {
        let a = Problem1::new();
        let b = Problem1::new();
        assert_eq!(a.reference().unwrap().precond, b.reference().unwrap().precond);
        assert_eq!(a.reference().unwrap().x_star, b.reference().unwrap().x_star);
    }

    #[test]
    fn initial_point_is_fixed_protocol() {
        let p = Problem1::new();
        let mut rng = rng_for_run(9, 9);
        assert_eq!(p.initial_point(&mut rng), dvector![2.0, 1.0]);
    }
}
