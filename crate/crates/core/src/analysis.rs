//! Numerical oracles for the convergence theory: the asymptote constant of
//! Hessian-preconditioned methods, the hybrid covariance recurrence and its
//! closed-form limit, and log-log slope/level fitting of empirical traces.

use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::linalg::spd_inverse;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("stability condition violated for eta={eta}, p={p}: denominator {denominator} <= 0")]
    StabilityViolation { eta: f64, p: f64, denominator: f64 },
    #[error("recurrence diverged at step {step} (normalized trace {value:.3e})")]
    Divergence { step: u64, value: f64 },
    #[error("recurrence needs at least {floor} steps, got {got}")]
    TooFewSteps { floor: u64, got: u64 },
    #[error("averaged recurrence needs alpha in (1/2, 1), got {0}")]
    BadAveragingExponent(f64),
    #[error("window must lie in (0, 1], got {0}")]
    BadWindow(f64),
    #[error("trace fit needs at least {needed} checkpoints in the window, got {got}")]
    TooFewCheckpoints { needed: usize, got: usize },
    #[error("Hessian proxy is singular or not positive definite")]
    SingularHessian,
    #[error("finite sample count must be at least 2, got {0}")]
    BadSampleCount(u64),
}

/// Sample count entering the asymptote formula; the infinite marker drops the
/// `sigma_b2` term (the increasing-precision / hybrid / Gauss-Newton target).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NSamples {
    Finite(u64),
    Infinite,
}

/// Inputs of the asymptote constant `tr(S^{-1} (sigma_a2 + sigma_b2/(N-1)) S^{-1})`.
#[derive(Debug, Clone)]
pub struct AsymptoteSpec {
    pub s_matrix: DMatrix<f64>,
    pub sigma_a2: DMatrix<f64>,
    pub sigma_b2: DMatrix<f64>,
    pub n_samples: NSamples,
}

/// The constant `C` such that the expected squared error decays like `C / t`
/// in total sample cost `t` for a Hessian-preconditioned method.
pub fn theoretical_asymptote(spec: &AsymptoteSpec) -> Result<f64, AnalysisError> {
    let s_inv = spd_inverse(&spec.s_matrix).ok_or(AnalysisError::SingularHessian)?;
    let mut inner = spec.sigma_a2.clone();
    match spec.n_samples {
        NSamples::Infinite => {}
        NSamples::Finite(n) => {
            if n < 2 {
                return Err(AnalysisError::BadSampleCount(n));
            }
            crate::linalg::mat_axpy(&mut inner, 1.0 / (n as f64 - 1.0), &spec.sigma_b2, 1.0);
        }
    }
    Ok((&s_inv * inner * &s_inv).trace())
}

/// Closed-form limit `a(eta, p)` of `t * E[y_t^2]` for the hybrid recurrence
/// with forget rate `zeta_t = (1+p)/(t+p)` and step gain `eta/t`, in
/// whitened coordinates with unit noise.
pub fn hybrid_constant_closed_form(eta: f64, p: f64) -> Result<f64, AnalysisError> {
    let denominator =
        (32.0 * eta - 16.0) * p * p + (16.0 * eta * eta + 16.0 * eta - 8.0) * p + 12.0 * eta * eta
            - 4.0;
    if denominator <= 0.0 {
        return Err(AnalysisError::StabilityViolation { eta, p, denominator });
    }
    let numerator = eta * eta * (16.0 * p * p + (22.0 + 4.0 * eta) * p + 8.0 + 3.0 * eta);
    Ok(numerator / denominator)
}

/// Configuration of the exact covariance recurrence.
///
/// The recurrence is simulated per whitened eigen-direction of the
/// preconditioned system, so a scalar noise variance suffices; `alpha` only
/// applies to the averaged variant.
#[derive(Debug, Clone, Copy)]
pub struct RecurrenceSpec {
    pub eta: f64,
    pub p: f64,
    pub averaged: bool,
    pub alpha: f64,
    pub steps: u64,
}

/// Normalized second-moment trajectory `t * E[y_t^2]` of the recurrence.
#[derive(Debug, Clone)]
pub struct RecurrenceTrace {
    /// Geometric checkpoints `(state index, normalized value)`.
    pub checkpoints: Vec<(u64, f64)>,
    /// Normalized value at the final step.
    pub final_value: f64,
}

const RECURRENCE_STEP_FLOOR: u64 = 1000;
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Iterates the exact covariance recurrence of the hybrid error dynamics and
/// returns the normalized error-block trace sequence.
///
/// Plain variant: state `(y_t, mu_t)`, value `t * W[0,0] -> a(eta, p)`.
/// Averaged variant: state `(ytilde_t, mu_t, ybar_{t-1})` with step gain
/// `eta/t^alpha`; the reported value is the averaged block,
/// `t * W[2,2] -> 1`.
pub fn hybrid_recurrence_simulate(
    spec: &RecurrenceSpec,
    sigma_a2: f64,
) -> Result<RecurrenceTrace, AnalysisError> {
    if spec.steps < RECURRENCE_STEP_FLOOR {
        return Err(AnalysisError::TooFewSteps { floor: RECURRENCE_STEP_FLOOR, got: spec.steps });
    }
    if spec.averaged {
        if !(spec.alpha > 0.5 && spec.alpha < 1.0) {
            return Err(AnalysisError::BadAveragingExponent(spec.alpha));
        }
        simulate_averaged(spec, sigma_a2)
    } else {
        // construction-time stability check, same condition as the closed form
        hybrid_constant_closed_form(spec.eta, spec.p)?;
        simulate_plain(spec, sigma_a2)
    }
}

fn zeta(t: u64, p: f64) -> f64 {
    (1.0 + p) / (t as f64 + p)
}

fn push_checkpoint(checkpoints: &mut Vec<(u64, f64)>, next_at: &mut u64, index: u64, value: f64) {
    if index >= *next_at {
        checkpoints.push((index, value));
        *next_at = ((*next_at as f64 * 1.2).ceil() as u64).max(*next_at + 1);
    }
}

fn simulate_plain(spec: &RecurrenceSpec, sigma_a2: f64) -> Result<RecurrenceTrace, AnalysisError> {
    let mut w = Matrix2::<f64>::zeros();
    let mut checkpoints = Vec::new();
    let mut next_at = 1u64;
    let mut value = 0.0;
    for t in 1..=spec.steps {
        let tf = t as f64;
        let z = zeta(t, spec.p);
        let h = spec.eta / (2.0 * tf);
        let i_p = Matrix2::new(1.0 - h, -h, z, 1.0 - z);
        let r = Vector2::new(-h, z);
        w = i_p * w * i_p.transpose() + sigma_a2 * r * r.transpose();
        value = (tf + 1.0) * w[(0, 0)];
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(AnalysisError::Divergence { step: t, value });
        }
        push_checkpoint(&mut checkpoints, &mut next_at, t + 1, value);
    }
    Ok(RecurrenceTrace { checkpoints, final_value: value })
}

fn simulate_averaged(spec: &RecurrenceSpec, sigma_a2: f64) -> Result<RecurrenceTrace, AnalysisError> {
    // step t = 1 has no averaging block yet: with a deterministic start the
    // state covariance after it is R_1 sigma R_1^T with zeta_1 = 1
    let h1 = spec.eta / 2.0;
    let r1 = Vector3::new(-h1, 1.0, 0.0);
    let mut w = sigma_a2 * r1 * r1.transpose();
    let mut checkpoints = Vec::new();
    let mut next_at = 1u64;
    let mut value = 0.0;
    for t in 2..=spec.steps {
        let tf = t as f64;
        let z = zeta(t, spec.p);
        let h = spec.eta / (2.0 * tf.powf(spec.alpha));
        let avg = 1.0 / (tf - 1.0);
        let i_p = Matrix3::new(
            1.0 - h, -h, 0.0, //
            z, 1.0 - z, 0.0, //
            avg, 0.0, 1.0 - avg,
        );
        let r = Vector3::new(-h, z, 0.0);
        w = i_p * w * i_p.transpose() + sigma_a2 * r * r.transpose();
        value = tf * w[(2, 2)];
        if !value.is_finite() || value > DIVERGENCE_LIMIT {
            return Err(AnalysisError::Divergence { step: t, value });
        }
        push_checkpoint(&mut checkpoints, &mut next_at, t, value);
    }
    Ok(RecurrenceTrace { checkpoints, final_value: value })
}

/// Least-squares fit of `log(mse)` against `log(cost)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TraceFit {
    /// Log-log slope; a clean `C/t` decay gives -1.
    pub slope: f64,
    /// `mse * cost` extrapolated at the midpoint of the fitted window: the
    /// asymptote constant when the slope is -1.
    pub level: f64,
    /// Fraction of the log-cost range that was fitted.
    pub window: f64,
}

const FIT_MIN_CHECKPOINTS: usize = 10;

/// Fits the last `window` fraction (by log-cost) of a `(cost, mse)` trace.
/// Checkpoints with non-positive mse carry no information on a log scale and
/// are skipped.
pub fn fit_trace(checkpoints: &[(u64, f64)], window: f64) -> Result<TraceFit, AnalysisError> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(AnalysisError::BadWindow(window));
    }
    let pts: Vec<(f64, f64)> = checkpoints
        .iter()
        .filter(|(c, m)| *c > 0 && *m > 0.0)
        .map(|(c, m)| ((*c as f64).ln(), m.ln()))
        .collect();
    if pts.is_empty() {
        return Err(AnalysisError::TooFewCheckpoints { needed: FIT_MIN_CHECKPOINTS, got: 0 });
    }
    let l1 = pts.last().unwrap().0;
    let l0 = pts.first().unwrap().0;
    let cut = l1 - window * (l1 - l0);
    let sel: Vec<(f64, f64)> = pts.into_iter().filter(|(lc, _)| *lc >= cut - 1e-12).collect();
    if sel.len() < FIT_MIN_CHECKPOINTS {
        return Err(AnalysisError::TooFewCheckpoints { needed: FIT_MIN_CHECKPOINTS, got: sel.len() });
    }

    let n = sel.len() as f64;
    let sx: f64 = sel.iter().map(|p| p.0).sum();
    let sy: f64 = sel.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &sel {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(AnalysisError::TooFewCheckpoints { needed: FIT_MIN_CHECKPOINTS, got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let log_mid = 0.5 * (cut.max(l0) + l1);
    let level = (intercept + (slope + 1.0) * log_mid).exp();
    Ok(TraceFit { slope, level, window })
}

/// Fits over the last decade of cost (or the whole trace if it spans less).
pub fn fit_last_decade(checkpoints: &[(u64, f64)]) -> Result<TraceFit, AnalysisError> {
    let first = checkpoints.iter().find(|(c, m)| *c > 0 && *m > 0.0);
    let last = checkpoints.iter().rev().find(|(c, m)| *c > 0 && *m > 0.0);
    let window = match (first, last) {
        (Some((c0, _)), Some((c1, _))) if c1 > c0 => {
            (std::f64::consts::LN_10 / ((*c1 as f64).ln() - (*c0 as f64).ln())).min(1.0)
        }
        _ => 1.0,
    };
    fit_trace(checkpoints, window)
}
