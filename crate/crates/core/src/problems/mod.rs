//! Concrete benchmark problems.
//!
//! Two problems mirror the experiment suite: a 2-parameter clamped-response
//! model with Gaussian input noise ([`Problem1`]) and a family of
//! sinh-parameterized linear models with multiplicative uniform noise
//! ([`Problem2`]). [`LinearGaussianProblem`] is the simplified
//! constant-Jacobian setting used by the recurrence analysis and the
//! Gauss-Newton consistency tests.

mod linear_gaussian;
mod problem1;
mod problem2;

pub use linear_gaussian::LinearGaussianProblem;
pub use problem1::{problem1_reference_recompute, Problem1};
pub use problem2::{Problem2, Problem2Error};
