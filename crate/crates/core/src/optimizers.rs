//! Iterative methods: SGD, increasing precision (IP), their Ruppert-Polyak
//! averaged variants, the IP hybrids (SGD/AdaGrad/Adam), and the stochastic
//! Gauss-Newton pair SGN/aSGN.
//!
//! Every method exposes the same stepping interface through [`Optimizer`];
//! the per-method update rules are free functions so they can be driven and
//! tested in isolation. A step draws whatever samples the method needs,
//! moves the iterate, projects it back onto the feasible box, and advances
//! the cumulative sample-pair cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    hybrid_update_into, EstimatorError, ForgetForm, ForgetSchedule, HybridState, UStatAccumulator,
};
use crate::linalg::{
    cholesky_condition_estimate, cholesky_in_place, cholesky_solve_in_place, spd_inverse,
};
use crate::problem::{project_in_place, McLsProblem, SamplePair};
use crate::rng::RunRng;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown or unsupported method {0:?}")]
    UnknownMethod(String),
    #[error("method {method} requires field `{field}`")]
    MissingField { method: &'static str, field: &'static str },
    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("preconditioner requires a problem reference solution")]
    MissingReference,
    #[error("forget schedule rejected: {0}")]
    BadForgetSchedule(#[from] EstimatorError),
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: u64 },
    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: u64 },
}

/// Scalar gain schedule `a_k = eta / (k + c)^alpha` paired with a constant
/// preconditioner `D`; the step matrix at iteration `k` is `a_k * D`.
#[derive(Debug, Clone)]
pub struct StepSchedule {
    pub eta: f64,
    pub alpha: f64,
    pub c: f64,
    pub precond: DMatrix<f64>,
}

impl StepSchedule {
    pub fn new(eta: f64, alpha: f64, c: f64, precond: DMatrix<f64>) -> Result<Self, ConfigError> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(ConfigError::InvalidField { field: "eta", reason: format!("must be > 0, got {eta}") });
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ConfigError::InvalidField {
                field: "alpha",
                reason: format!("must lie in (0, 1], got {alpha}"),
            });
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(ConfigError::InvalidField { field: "c", reason: format!("must be >= 0, got {c}") });
        }
        Ok(StepSchedule { eta, alpha, c, precond })
    }

    /// Identity preconditioner of dimension `n`.
    pub fn identity(eta: f64, alpha: f64, c: f64, n: usize) -> Result<Self, ConfigError> {
        Self::new(eta, alpha, c, DMatrix::identity(n, n))
    }

    #[inline]
    pub fn gain(&self, k: u64) -> f64 {
        self.eta / (k as f64 + self.c).powf(self.alpha)
    }
}

/// Per-iteration sample count `N_k = max(2, round(n1 * k^q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub n1: f64,
    pub q: f64,
}

impl SampleSchedule {
    pub fn new(n1: f64, q: f64) -> Result<Self, ConfigError> {
        if !(n1 > 0.0) || !n1.is_finite() {
            return Err(ConfigError::InvalidField { field: "samples.n1", reason: format!("must be > 0, got {n1}") });
        }
        if !(q >= 0.0) || !q.is_finite() {
            return Err(ConfigError::InvalidField { field: "samples.q", reason: format!("must be >= 0, got {q}") });
        }
        Ok(SampleSchedule { n1, q })
    }

    /// Sample count at 1-based iteration `k`; the floor of 2 keeps the
    /// U-statistic estimator well defined.
    #[inline]
    pub fn count_at(&self, k: u64) -> usize {
        let raw = (self.n1 * (k as f64).powf(self.q)).round();
        (raw as usize).max(2)
    }
}

/// Diagonal accumulators for the covariance-preconditioned methods.
#[derive(Debug, Clone)]
pub enum ScaleState {
    AdaGrad { accum: DVector<f64> },
    Adam { m: DVector<f64>, v: DVector<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Mutable state shared by all methods.
///
/// `x` is the working iterate (the non-averaged inner iterate for averaged
/// methods); `x_avg`/`weight_sum` maintain the incremental weighted
/// Ruppert-Polyak average; `cost` counts sample pairs drawn so far.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub x: DVector<f64>,
    pub x_avg: Option<DVector<f64>>,
    pub weight_sum: f64,
    pub k: u64,
    pub cost: u64,
    pub hybrid: Option<HybridState>,
    pub scale: Option<ScaleState>,
    pub gn_guard_active: bool,
}

impl OptimizerState {
    pub fn new(x0: DVector<f64>) -> Self {
        OptimizerState {
            x: x0,
            x_avg: None,
            weight_sum: 0.0,
            k: 0,
            cost: 0,
            hybrid: None,
            scale: None,
            gn_guard_active: false,
        }
    }

    fn with_average(mut self) -> Self {
        self.x_avg = Some(DVector::zeros(self.x.len()));
        self
    }

    fn with_hybrid(mut self, m: usize, n: usize) -> Self {
        self.hybrid = Some(HybridState::new(m, n));
        self
    }
}

fn ensure_finite(v: &DVector<f64>, iteration: u64, gradient: bool) -> Result<(), StepError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else if gradient {
        Err(StepError::NonFiniteGradient { iteration })
    } else {
        Err(StepError::NonFiniteIterate { iteration })
    }
}

/// Scratch buffers reused across steps so the hot loop never allocates.
#[derive(Debug, Clone)]
struct Scratch {
    pair: SamplePair,
    grad: DVector<f64>,
    ustat: UStatAccumulator,
    gn_g: DMatrix<f64>,
    gn_b: DMatrix<f64>,
}

impl Scratch {
    fn new(m: usize, n: usize) -> Self {
        Scratch {
            pair: SamplePair::zeros(m, n),
            grad: DVector::zeros(n),
            ustat: UStatAccumulator::new(m, n),
            gn_g: DMatrix::zeros(m, n),
            gn_b: DMatrix::zeros(n, n),
        }
    }
}

/// Draws `n` pairs at the current iterate and accumulates the U-statistic
/// gradient into `scratch.grad`.
fn draw_usample_gradient<P: McLsProblem + ?Sized>(
    state: &OptimizerState,
    problem: &P,
    n: usize,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) {
    scratch.ustat.reset();
    for _ in 0..n {
        problem.sample_into(&state.x, &mut scratch.pair, rng);
        scratch.ustat.push(&scratch.pair);
    }
    scratch.ustat.finish_into(&mut scratch.grad).expect("batch size >= 2");
}

fn apply_preconditioned_step<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    gain: f64,
    precond: &DMatrix<f64>,
    grad: &DVector<f64>,
) -> Result<(), StepError> {
    state.x.gemv(-gain, precond, grad, 1.0);
    ensure_finite(&state.x, state.k, false)?;
    project_in_place(&mut state.x, problem.constraints());
    Ok(())
}

/// One SGD iteration: `n >= 2` fresh pairs, U-statistic gradient, step
/// `a_k * D`, projection. Cost grows by `n`.
pub fn sgd_step<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    schedule: &StepSchedule,
    n: usize,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    assert!(n >= 2, "SGD batch must be >= 2");
    let mut scratch = Scratch::new(problem.dim_m(), problem.dim_n());
    sgd_step_with(state, problem, schedule, n, &mut scratch, rng)
}

fn sgd_step_with<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    schedule: &StepSchedule,
    n: usize,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    state.k += 1;
    draw_usample_gradient(state, problem, n, scratch, rng);
    state.cost += n as u64;
    ensure_finite(&scratch.grad, state.k, true)?;
    apply_preconditioned_step(state, problem, schedule.gain(state.k), &schedule.precond, &scratch.grad)
}

/// One IP iteration. In the Hessian-preconditioned mode the step matrix is
/// `eta * (N_k / sum_{i<=k} N_i) * D`; in the averaged mode the plain
/// `StepSchedule` gain is used and the caller folds the iterate into the
/// weighted average with weight `N_k`.
pub fn ip_step<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    step: &StepSchedule,
    samples: &SampleSchedule,
    averaged: bool,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    let mut scratch = Scratch::new(problem.dim_m(), problem.dim_n());
    ip_step_with(state, problem, step, samples, averaged, &mut scratch, rng)
}

fn ip_step_with<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    step: &StepSchedule,
    samples: &SampleSchedule,
    averaged: bool,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    let k = state.k + 1;
    let n_k = samples.count_at(k);
    if averaged {
        averaged_step(state, n_k as f64, |st| {
            st.k += 1;
            draw_usample_gradient(st, problem, n_k, scratch, rng);
            st.cost += n_k as u64;
            ensure_finite(&scratch.grad, st.k, true)?;
            apply_preconditioned_step(st, problem, step.gain(st.k), &step.precond, &scratch.grad)
        })
    } else {
        state.k += 1;
        draw_usample_gradient(state, problem, n_k, scratch, rng);
        state.cost += n_k as u64;
        ensure_finite(&scratch.grad, state.k, true)?;
        // weight_sum tracks sum of N_i for the IP rate
        state.weight_sum += n_k as f64;
        let gain = step.eta * n_k as f64 / state.weight_sum;
        apply_preconditioned_step(state, problem, gain, &step.precond, &scratch.grad)
    }
}

/// Applies `inner` to the working iterate, then folds the result into the
/// running weighted average: `x_avg <- (W x_avg + w x) / (W + w)`.
pub fn averaged_step<F>(state: &mut OptimizerState, weight: f64, inner: F) -> Result<(), StepError>
where
    F: FnOnce(&mut OptimizerState) -> Result<(), StepError>,
{
    assert!(weight > 0.0, "averaging weight must be positive");
    inner(state)?;
    let avg = state.x_avg.get_or_insert_with(|| DVector::zeros(state.x.len()));
    let total = state.weight_sum + weight;
    avg.axpy(weight / total, &state.x, state.weight_sum / total);
    state.weight_sum = total;
    Ok(())
}

/// One IP-SGD hybrid iteration: a single pair, the running-mean gradient,
/// step `a_t * D`. Cost grows by one.
pub fn hybrid_sgd_step<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    step: &StepSchedule,
    forget: &ForgetSchedule,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    let mut scratch = Scratch::new(problem.dim_m(), problem.dim_n());
    hybrid_sgd_step_with(state, problem, step, forget, &mut scratch, rng)
}

fn hybrid_gradient<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    forget: &ForgetSchedule,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    let hybrid = state.hybrid.as_mut().expect("hybrid state present");
    problem.sample_into(&state.x, &mut scratch.pair, rng);
    let zeta = forget.zeta(hybrid.t);
    hybrid_update_into(hybrid, &scratch.pair, zeta, &mut scratch.grad)
        .expect("validated schedule stays in range");
    state.cost += 1;
    state.k += 1;
    ensure_finite(&scratch.grad, state.k, true)
}

fn hybrid_sgd_step_with<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    step: &StepSchedule,
    forget: &ForgetSchedule,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    hybrid_gradient(state, problem, forget, scratch, rng)?;
    apply_preconditioned_step(state, problem, step.gain(state.k), &step.precond, &scratch.grad)
}

/// Diagonal AdaGrad update on an explicit gradient: per coordinate,
/// `x_i <- x_i - eta * g_i / sqrt(sum of squared gradients)`. Coordinates
/// with an all-zero history stay put.
pub fn adagrad_step(state: &mut OptimizerState, g: &DVector<f64>, eta: f64) {
    let accum = match state.scale.get_or_insert_with(|| ScaleState::AdaGrad { accum: DVector::zeros(g.len()) }) {
        ScaleState::AdaGrad { accum } => accum,
        ScaleState::Adam { .. } => panic!("optimizer state carries Adam accumulators"),
    };
    for i in 0..g.len() {
        accum[i] += g[i] * g[i];
        if accum[i] > 0.0 {
            state.x[i] -= eta * g[i] / accum[i].sqrt();
        }
    }
}

/// Adam update with bias correction on an explicit gradient; `alpha_t` is the
/// step size for this iteration and `t` the 1-based moment counter.
pub fn adam_step(
    state: &mut OptimizerState,
    g: &DVector<f64>,
    alpha_t: f64,
    t: u64,
    params: &AdamParams,
) {
    let n = g.len();
    let (m, v) = match state
        .scale
        .get_or_insert_with(|| ScaleState::Adam { m: DVector::zeros(n), v: DVector::zeros(n) })
    {
        ScaleState::Adam { m, v } => (m, v),
        ScaleState::AdaGrad { .. } => panic!("optimizer state carries AdaGrad accumulators"),
    };
    let b1 = params.beta1;
    let b2 = params.beta2;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..n {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        state.x[i] -= alpha_t * m_hat / (v_hat.sqrt() + params.epsilon);
    }
}

/// Regularized Gauss-Newton matrix
/// `B_t = (G_t^T G_t + R_t) / ((t - 1 - 1/zeta_{t-1})^2 + t - 1)` built from
/// the hybrid running state, or `None` before the first update.
pub fn sgn_gauss_newton_matrix(hybrid: &HybridState) -> Option<DMatrix<f64>> {
    let zeta_prev = hybrid.last_zeta?;
    let t = hybrid.t as f64;
    let mut g = hybrid.sum_j.clone();
    crate::linalg::mat_axpy(&mut g, -1.0 / zeta_prev, &hybrid.bar_j, 1.0);
    let denom = {
        let w = t - 1.0 - 1.0 / zeta_prev;
        w * w + t - 1.0
    };
    let mut b = DMatrix::zeros(hybrid.dim_n(), hybrid.dim_n());
    b.gemm_tr(1.0 / denom, &g, &g, 0.0);
    crate::linalg::mat_axpy(&mut b, 1.0 / denom, &hybrid.sum_jtj, 1.0);
    Some(b)
}

/// Condition-estimate ceiling of the Gauss-Newton guard.
pub const SGN_CONDITION_LIMIT: f64 = 1e12;

/// One stochastic Gauss-Newton iteration: single pair, hybrid gradient, step
/// `B_t^{-1} g_t / t^alpha` when the factorization guard admits `B_t`,
/// otherwise the iterate stays put. Cost grows by one either way.
pub fn sgn_step<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    forget: &ForgetSchedule,
    alpha: f64,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    let mut scratch = Scratch::new(problem.dim_m(), problem.dim_n());
    sgn_step_with(state, problem, forget, alpha, &mut scratch, rng)
}

fn sgn_step_with<P: McLsProblem + ?Sized>(
    state: &mut OptimizerState,
    problem: &P,
    forget: &ForgetSchedule,
    alpha: f64,
    scratch: &mut Scratch,
    rng: &mut RunRng,
) -> Result<(), StepError> {
    // Capture the Gauss-Newton factor from samples 1..t-1 before the new
    // pair is folded in; at t = 1 there is nothing to invert yet.
    let factored = {
        let hybrid = state.hybrid.as_ref().expect("hybrid state present");
        match hybrid.last_zeta {
            None => false,
            Some(zeta_prev) => {
                let t = hybrid.t as f64;
                scratch.gn_g.copy_from(&hybrid.sum_j);
                crate::linalg::mat_axpy(&mut scratch.gn_g, -1.0 / zeta_prev, &hybrid.bar_j, 1.0);
                let w = t - 1.0 - 1.0 / zeta_prev;
                let denom = w * w + t - 1.0;
                scratch.gn_b.gemm_tr(1.0 / denom, &scratch.gn_g, &scratch.gn_g, 0.0);
                crate::linalg::mat_axpy(&mut scratch.gn_b, 1.0 / denom, &hybrid.sum_jtj, 1.0);
                scratch.gn_b.iter().all(|v| v.is_finite())
                    && cholesky_in_place(&mut scratch.gn_b)
                    && cholesky_condition_estimate(&scratch.gn_b) <= SGN_CONDITION_LIMIT
            }
        }
    };

    hybrid_gradient(state, problem, forget, scratch, rng)?;

    if factored {
        state.gn_guard_active = false;
        cholesky_solve_in_place(&scratch.gn_b, &mut scratch.grad);
        let gain = (state.k as f64).powf(-alpha);
        state.x.axpy(-gain, &scratch.grad, 1.0);
        ensure_finite(&state.x, state.k, false)?;
        project_in_place(&mut state.x, problem.constraints());
    }
    Ok(())
}

/// Method tags understood by the harness and CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Asgd,
    Ip,
    Aip,
    HybridSgd,
    HybridAsgd,
    HybridAdagrad,
    HybridAdam,
    HybridAdamAvg,
    Adagrad,
    Adam,
    Sgn,
    Asgn,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Asgd => "asgd",
            Method::Ip => "ip",
            Method::Aip => "aip",
            Method::HybridSgd => "hybrid_sgd",
            Method::HybridAsgd => "hybrid_asgd",
            Method::HybridAdagrad => "hybrid_adagrad",
            Method::HybridAdam => "hybrid_adam",
            Method::HybridAdamAvg => "hybrid_adam_avg",
            Method::Adagrad => "adagrad",
            Method::Adam => "adam",
            Method::Sgn => "sgn",
            Method::Asgn => "asgn",
        }
    }

    /// Whether the reported iterate is the Ruppert-Polyak average.
    pub fn is_averaged(&self) -> bool {
        matches!(
            self,
            Method::Asgd | Method::Aip | Method::HybridAsgd | Method::HybridAdamAvg | Method::Asgn
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Preconditioner choice resolved against the problem at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    Identity,
    /// Inverse of the reference Gauss-Newton Hessian approximation at `x*`.
    GaussNewton,
}

/// Declarative method configuration; unset fields fall back to the method's
/// documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default)]
    pub preconditioner: Preconditioner,
    /// Pairs per iteration for the constant-batch methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Sample growth schedule for IP methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forget_form: Option<ForgetForm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamParams>,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        OptimizerConfig {
            method,
            label: None,
            eta: None,
            alpha: None,
            c: None,
            preconditioner: Preconditioner::Identity,
            batch: None,
            samples: None,
            forget_p: None,
            forget_form: None,
            adam: None,
        }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.method.as_str().to_string())
    }
}

enum Engine {
    Sgd { schedule: StepSchedule, batch: usize },
    ASgd { schedule: StepSchedule, batch: usize },
    Ip { step: StepSchedule, samples: SampleSchedule },
    AIp { step: StepSchedule, samples: SampleSchedule },
    HybridSgd { step: StepSchedule, forget: ForgetSchedule, averaged: bool },
    HybridAdagrad { eta: f64, forget: ForgetSchedule },
    HybridAdam { step: StepSchedule, forget: ForgetSchedule, params: AdamParams, averaged: bool },
    Adagrad { eta: f64, batch: usize },
    Adam { step: StepSchedule, params: AdamParams, batch: usize },
    Sgn { forget: ForgetSchedule, alpha: f64, averaged: bool },
}

/// A fully resolved method bound to a problem, stepping an internal
/// [`OptimizerState`].
pub struct Optimizer {
    method: Method,
    engine: Engine,
    state: OptimizerState,
    scratch: Scratch,
    reported: DVector<f64>,
}

/// Builds the stepper for `config` against `problem`, validating every field
/// the method needs. The iterate starts at `x0` projected onto the box.
pub fn make_optimizer<P: McLsProblem + ?Sized>(
    config: &OptimizerConfig,
    problem: &P,
    x0: DVector<f64>,
) -> Result<Optimizer, ConfigError> {
    let n = problem.dim_n();
    let m = problem.dim_m();
    let method = config.method;

    let precond = |choice: Preconditioner| -> Result<DMatrix<f64>, ConfigError> {
        match choice {
            Preconditioner::Identity => Ok(DMatrix::identity(n, n)),
            Preconditioner::GaussNewton => {
                let r = problem.reference().ok_or(ConfigError::MissingReference)?;
                spd_inverse(&r.precond).ok_or_else(|| ConfigError::InvalidField {
                    field: "preconditioner",
                    reason: "reference Gauss-Newton matrix is not invertible".into(),
                })
            }
        }
    };

    let step = |eta: f64, alpha: f64| -> Result<StepSchedule, ConfigError> {
        StepSchedule::new(
            config.eta.unwrap_or(eta),
            config.alpha.unwrap_or(alpha),
            config.c.unwrap_or(0.0),
            precond(config.preconditioner)?,
        )
    };

    let forget = |p: f64, form: ForgetForm| -> Result<ForgetSchedule, ConfigError> {
        Ok(ForgetSchedule::new(config.forget_p.unwrap_or(p), config.forget_form.unwrap_or(form))?)
    };

    let batch = |method_name: &'static str| -> Result<usize, ConfigError> {
        let b = config.batch.unwrap_or(2);
        if b < 2 {
            return Err(ConfigError::InvalidField {
                field: "batch",
                reason: format!("{method_name} needs at least 2 pairs per iteration, got {b}"),
            });
        }
        Ok(b)
    };

    let samples = |method_name: &'static str| -> Result<SampleSchedule, ConfigError> {
        let s = config.samples.ok_or(ConfigError::MissingField { method: method_name, field: "samples" })?;
        SampleSchedule::new(s.n1, s.q)
    };

    let mut state = OptimizerState::new(x0);
    project_in_place(&mut state.x, problem.constraints());

    let engine = match method {
        Method::Sgd => Engine::Sgd { schedule: step(1.0, 1.0)?, batch: batch("sgd")? },
        Method::Asgd => Engine::ASgd { schedule: step(1.0, 0.75)?, batch: batch("asgd")? },
        Method::Ip => Engine::Ip { step: step(1.0, 1.0)?, samples: samples("ip")? },
        Method::Aip => Engine::AIp { step: step(1.0, 0.75)?, samples: samples("aip")? },
        Method::HybridSgd => Engine::HybridSgd {
            step: step(1.0, 1.0)?,
            forget: forget(2.0, ForgetForm::Rational)?,
            averaged: false,
        },
        Method::HybridAsgd => Engine::HybridSgd {
            step: step(1.0, 0.75)?,
            forget: forget(2.0, ForgetForm::Rational)?,
            averaged: true,
        },
        Method::HybridAdagrad => Engine::HybridAdagrad {
            eta: config.eta.unwrap_or(0.1),
            forget: forget(2.0, ForgetForm::Rational)?,
        },
        Method::HybridAdam => Engine::HybridAdam {
            step: step(0.1, 0.5)?,
            forget: forget(2.0, ForgetForm::Rational)?,
            params: config.adam.unwrap_or_default(),
            averaged: false,
        },
        Method::HybridAdamAvg => Engine::HybridAdam {
            step: step(1.0, 0.75)?,
            forget: forget(2.0, ForgetForm::Rational)?,
            params: config.adam.unwrap_or_default(),
            averaged: true,
        },
        Method::Adagrad => Engine::Adagrad { eta: config.eta.unwrap_or(0.1), batch: batch("adagrad")? },
        Method::Adam => Engine::Adam {
            step: step(0.1, 0.5)?,
            params: config.adam.unwrap_or_default(),
            batch: batch("adam")?,
        },
        Method::Sgn => Engine::Sgn {
            forget: forget(2.0, ForgetForm::SqrtRational)?,
            alpha: config.alpha.unwrap_or(1.0),
            averaged: false,
        },
        Method::Asgn => Engine::Sgn {
            forget: forget(2.0, ForgetForm::Rational)?,
            alpha: config.alpha.unwrap_or(0.75),
            averaged: true,
        },
    };

    if method.is_averaged() {
        state = state.with_average();
    }
    match method {
        Method::HybridSgd
        | Method::HybridAsgd
        | Method::HybridAdagrad
        | Method::HybridAdam
        | Method::HybridAdamAvg => state = state.with_hybrid(m, n),
        Method::Sgn | Method::Asgn => {
            state = state.with_hybrid(m, n);
            state.gn_guard_active = true;
        }
        _ => {}
    }

    let reported = state.x.clone();
    Ok(Optimizer { method, engine, state, scratch: Scratch::new(m, n), reported })
}

impl Optimizer {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn cost(&self) -> u64 {
        self.state.cost
    }

    /// The method's reported iterate (projected average for averaged
    /// methods), refreshed on every step.
    pub fn reported(&self) -> &DVector<f64> {
        &self.reported
    }

    /// Advances one iteration, drawing whatever samples the method needs.
    pub fn step<P: McLsProblem + ?Sized>(
        &mut self,
        problem: &P,
        rng: &mut RunRng,
    ) -> Result<(), StepError> {
        let state = &mut self.state;
        let scratch = &mut self.scratch;
        match &self.engine {
            Engine::Sgd { schedule, batch } => {
                sgd_step_with(state, problem, schedule, *batch, scratch, rng)?
            }
            Engine::ASgd { schedule, batch } => averaged_step(state, 1.0, |st| {
                sgd_step_with(st, problem, schedule, *batch, scratch, rng)
            })?,
            Engine::Ip { step, samples } => {
                ip_step_with(state, problem, step, samples, false, scratch, rng)?
            }
            Engine::AIp { step, samples } => {
                ip_step_with(state, problem, step, samples, true, scratch, rng)?
            }
            Engine::HybridSgd { step, forget, averaged } => {
                if *averaged {
                    averaged_step(state, 1.0, |st| {
                        hybrid_sgd_step_with(st, problem, step, forget, scratch, rng)
                    })?
                } else {
                    hybrid_sgd_step_with(state, problem, step, forget, scratch, rng)?
                }
            }
            Engine::HybridAdagrad { eta, forget } => {
                hybrid_gradient(state, problem, forget, scratch, rng)?;
                adagrad_step(state, &scratch.grad, *eta);
                ensure_finite(&state.x, state.k, false)?;
                project_in_place(&mut state.x, problem.constraints());
            }
            Engine::HybridAdam { step, forget, params, averaged } => {
                let mut inner = |st: &mut OptimizerState| -> Result<(), StepError> {
                    hybrid_gradient(st, problem, forget, scratch, rng)?;
                    let alpha_t = step.gain(st.k);
                    adam_step(st, &scratch.grad, alpha_t, st.k, params);
                    ensure_finite(&st.x, st.k, false)?;
                    project_in_place(&mut st.x, problem.constraints());
                    Ok(())
                };
                if *averaged {
                    averaged_step(state, 1.0, inner)?
                } else {
                    inner(state)?
                }
            }
            Engine::Adagrad { eta, batch } => {
                state.k += 1;
                draw_usample_gradient(state, problem, *batch, scratch, rng);
                state.cost += *batch as u64;
                ensure_finite(&scratch.grad, state.k, true)?;
                adagrad_step(state, &scratch.grad, *eta);
                ensure_finite(&state.x, state.k, false)?;
                project_in_place(&mut state.x, problem.constraints());
            }
            Engine::Adam { step, params, batch } => {
                state.k += 1;
                draw_usample_gradient(state, problem, *batch, scratch, rng);
                state.cost += *batch as u64;
                ensure_finite(&scratch.grad, state.k, true)?;
                let alpha_t = step.gain(state.k);
                adam_step(state, &scratch.grad, alpha_t, state.k, params);
                ensure_finite(&state.x, state.k, false)?;
                project_in_place(&mut state.x, problem.constraints());
            }
            Engine::Sgn { forget, alpha, averaged } => {
                if *averaged {
                    averaged_step(state, 1.0, |st| {
                        sgn_step_with(st, problem, forget, *alpha, scratch, rng)
                    })?
                } else {
                    sgn_step_with(state, problem, forget, *alpha, scratch, rng)?
                }
            }
        }

        // refresh the reported iterate
        match &self.state.x_avg {
            Some(avg) => {
                self.reported.copy_from(avg);
                project_in_place(&mut self.reported, problem.constraints());
            }
            None => self.reported.copy_from(&self.state.x),
        }
        Ok(())
    }
}
