//! The Monte Carlo least-squares problem abstraction.
//!
//! A problem minimizes `f(x) = 0.5 * ||Q(x)||^2` where the residual `Q` and
//! its Jacobian are only reachable through a stochastic oracle: each call
//! produces one [`SamplePair`] `(qhat, jhat)` whose entries are unbiased for
//! `Q(x)` and `dQ/dx`. The pair is the unit of computational cost; everything
//! else (linear algebra, bookkeeping) is treated as free.

use nalgebra::{DMatrix, DVector};

use crate::rng::RunRng;

/// One joint draw of the residual estimate (length `m`) and Jacobian estimate
/// (`m x n`) at a fixed point. The two halves of a pair may be correlated;
/// distinct pairs are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub qhat: DVector<f64>,
    pub jhat: DMatrix<f64>,
}

impl SamplePair {
    /// An all-zero pair of the given shape, used as a reusable sampling buffer.
    pub fn zeros(m: usize, n: usize) -> Self {
        SamplePair {
            qhat: DVector::zeros(m),
            jhat: DMatrix::zeros(m, n),
        }
    }

    pub fn dim_m(&self) -> usize {
        self.qhat.len()
    }

    pub fn dim_n(&self) -> usize {
        self.jhat.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.qhat.iter().all(|v| v.is_finite()) && self.jhat.iter().all(|v| v.is_finite())
    }
}

/// Axis-aligned box `lower_i <= x_i <= upper_i`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxConstraints {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxConstraints {
    /// Panics if the bounds have mismatched lengths or `lower_i > upper_i`.
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bound lengths differ");
        for i in 0..lower.len() {
            assert!(
                lower[i] <= upper[i],
                "box constraint {i} is empty: [{}, {}]",
                lower[i],
                upper[i]
            );
        }
        BoxConstraints { lower, upper }
    }

    /// An unbounded box of dimension `n`.
    pub fn unbounded(n: usize) -> Self {
        BoxConstraints {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }
}

/// Known (or numerically computed) solution data attached to a problem:
/// the minimizer `x_star` and the Gauss-Newton Hessian approximation
/// `S = E[Jhat]^T E[Jhat]` at `x_star`. Hessian-preconditioned methods invert
/// `precond` to obtain their step matrix `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: DVector<f64>,
    pub precond: DMatrix<f64>,
}

impl ReferenceSolution {
    /// Panics if `precond` is not square of matching dimension or not
    /// symmetric to machine tolerance.
    pub fn new(x_star: DVector<f64>, precond: DMatrix<f64>) -> Self {
        let n = x_star.len();
        assert_eq!(precond.nrows(), n, "precond rows != dim");
        assert_eq!(precond.ncols(), n, "precond cols != dim");
        let scale = precond.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                assert!(
                    (precond[(i, j)] - precond[(j, i)]).abs() <= 1e-12 * scale,
                    "precond not symmetric at ({i},{j})"
                );
            }
        }
        ReferenceSolution { x_star, precond }
    }
}

/// A stochastic least-squares problem: shape, feasible box, optional
/// reference solution, and the sampling oracle.
pub trait McLsProblem: Send + Sync {
    /// Parameter count `n`.
    fn dim_n(&self) -> usize;
    /// Residual count `m`.
    fn dim_m(&self) -> usize;
    fn constraints(&self) -> &BoxConstraints;
    fn reference(&self) -> Option<&ReferenceSolution>;

    /// Draws one sample pair at `x` into the caller's buffer. `x` must be
    /// feasible and `out` must have shape `(m, n)`.
    fn sample_into(&self, x: &DVector<f64>, out: &mut SamplePair, rng: &mut RunRng);

    /// Allocating convenience wrapper around [`McLsProblem::sample_into`].
    fn sample(&self, x: &DVector<f64>, rng: &mut RunRng) -> SamplePair {
        let mut out = SamplePair::zeros(self.dim_m(), self.dim_n());
        self.sample_into(x, &mut out, rng);
        out
    }

    /// Starting point of an optimization run. Implementations with a fixed
    /// protocol ignore `rng`; others draw a feasible point from it.
    fn initial_point(&self, rng: &mut RunRng) -> DVector<f64>;
}

/// Euclidean projection onto a box: componentwise clamp. Idempotent,
/// componentwise monotone, and non-expansive in the infinity norm.
pub fn project(x: &DVector<f64>, constraints: &BoxConstraints) -> DVector<f64> {
    let mut out = x.clone();
    project_in_place(&mut out, constraints);
    out
}

/// In-place form of [`project`].
pub fn project_in_place(x: &mut DVector<f64>, constraints: &BoxConstraints) {
    assert_eq!(x.len(), constraints.dim(), "vector/box dimension mismatch");
    for i in 0..x.len() {
        x[i] = x[i].clamp(constraints.lower[i], constraints.upper[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn spec_box() -> BoxConstraints {
        BoxConstraints::new(dvector![0.0, 1.0], dvector![2.0, 3.0])
    }

    #[test]
    fn clamps_both_coordinates() {
        let p = project(&dvector![3.0, 0.5], &spec_box());
        assert_eq!(p, dvector![2.0, 1.0]);
    }

    #[test]
    fn feasible_point_is_unchanged() {
        let x = dvector![1.5, 2.0];
        assert_eq!(project(&x, &spec_box()), x);
    }

    #[test]
    fn projection_is_idempotent() {
        let b = spec_box();
        let once = project(&dvector![-4.0, 9.0], &b);
        assert_eq!(project(&once, &b), once);
    }

    #[test]
    #[should_panic(expected = "empty")]
    fn inverted_bounds_are_rejected() {
        BoxConstraints::new(dvector![1.0], dvector![0.0]);
    }

    proptest! {
        #[test]
        fn projection_monotone_and_nonexpansive(
            raw in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0.0f64..5.0), 1..6),
            xs in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..6),
        ) {
            let n = raw.len().min(xs.len());
            let lower = DVector::from_iterator(n, raw.iter().take(n).map(|r| r.0.min(r.1)));
            let upper = DVector::from_iterator(n, raw.iter().take(n).map(|r| r.0.max(r.1) + r.2));
            let b = BoxConstraints::new(lower, upper);

            let x = DVector::from_iterator(n, xs.iter().take(n).map(|p| p.0));
            let y = DVector::from_iterator(n, xs.iter().take(n).map(|p| p.0.max(p.1)));
            let px = project(&x, &b);
            let py = project(&y, &b);
            for i in 0..n {
                // monotone: x <= y componentwise implies P(x) <= P(y)
                prop_assert!(px[i] <= py[i] + 1e-15);
            }
            // non-expansive in the infinity norm
            let lhs = (&px - &py).amax();
            let rhs = (&x - &y).amax();
            prop_assert!(lhs <= rhs + 1e-15);
        }
    }
}
