//! Stochastic optimization for Monte Carlo least-squares problems.
//!
//! The target problem is `minimize 0.5 * ||Q(x)||^2` where the residual `Q`
//! and its Jacobian can only be estimated by drawing correlated sample pairs
//! `(qhat, jhat)`. The crate provides:
//!
//! * paired gradient estimators whose variance splits into a persistent
//!   component and one that vanishes with the per-iteration sample count
//!   ([`estimators`]),
//! * the optimizer family built on them: SGD, increasing-precision methods,
//!   the single-sample IP hybrids, AdaGrad/Adam variants, and stochastic
//!   Gauss-Newton with its online preconditioner ([`optimizers`]),
//! * benchmark problems with known or computed reference solutions
//!   ([`problems`]),
//! * numerical oracles for the asymptotic theory and log-log trace fitting
//!   ([`analysis`]),
//! * a reproducible multi-run experiment harness with CSV/JSON export
//!   ([`harness`]).
//!
//! Reproducibility is a design contract: every run's stream derives from
//! `(master_seed, run_index)` through a portable [`rng::RunRng`], and
//! harness outputs are byte-identical for any worker count.

pub mod analysis;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod problem;
pub mod problems;
pub mod rng;

pub mod optimizers;

pub use estimators::{
    estimate_sigma_decomposition, grad_two_sample, grad_usample, hybrid_update, ForgetForm,
    ForgetSchedule, HybridState, SigmaDecomposition,
};
pub use optimizers::{
    make_optimizer, Method, Optimizer, OptimizerConfig, OptimizerState, Preconditioner,
    SampleSchedule, StepSchedule,
};
pub use problem::{project, BoxConstraints, McLsProblem, ReferenceSolution, SamplePair};
pub use problems::{LinearGaussianProblem, Problem1, Problem2};
pub use rng::{rng_for_run, standard_normal, RunRng};
