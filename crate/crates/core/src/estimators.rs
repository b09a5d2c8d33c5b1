//! Gradient estimators built from residual/Jacobian sample pairs.
//!
//! For `f(x) = 0.5 ||Q(x)||^2` the gradient is `J(x)^T Q(x)`. A single pair
//! `(qhat, jhat)` cannot estimate it without bias because the two halves may
//! be correlated, so all estimators here combine distinct pairs:
//!
//! * [`grad_two_sample`] — the symmetric two-pair estimator,
//! * [`grad_usample`] — the N-pair U-statistic with the `i != j` exclusion,
//! * [`hybrid_update`] — the running-mean (forget-rate) estimator that feeds
//!   the IP-hybrid and stochastic Gauss-Newton methods,
//! * [`estimate_sigma_decomposition`] — Monte Carlo estimation of the two
//!   covariance components driving the U-statistic variance law
//!   `Var = sigma_a2/N + sigma_b2/(N(N-1))`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::problem::{McLsProblem, SamplePair};
use crate::rng::RunRng;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("the U-statistic gradient estimator needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("forget rate {zeta} at step {t} outside (0, 1]")]
    ForgetRateOutOfRange { t: u64, zeta: f64 },
    #[error("forget schedule invalid at index {t}: {reason}")]
    InvalidSchedule { t: u64, reason: String },
    #[error("sigma decomposition needs at least {floor} pairs, got {got}")]
    TooFewSigmaPairs { floor: usize, got: usize },
}

/// Symmetric two-pair gradient estimator
/// `(jhat_a^T qhat_b + jhat_b^T qhat_a) / 2`.
///
/// Unbiased for the gradient because the pairs are independent; its variance
/// never exceeds that of the asymmetric `jhat_a^T qhat_b`.
pub fn grad_two_sample(a: &SamplePair, b: &SamplePair) -> DVector<f64> {
    assert_eq!(a.dim_m(), b.dim_m(), "pair residual dimensions differ");
    assert_eq!(a.dim_n(), b.dim_n(), "pair parameter dimensions differ");
    let mut g = DVector::zeros(a.dim_n());
    g.gemv_tr(0.5, &a.jhat, &b.qhat, 0.0);
    g.gemv_tr(0.5, &b.jhat, &a.qhat, 1.0);
    g
}

/// Streaming accumulator for the N-pair U-statistic gradient.
///
/// Uses the identity
/// `sum_{i != j} jhat_i^T qhat_j = (sum_i jhat_i)^T (sum_j qhat_j) - sum_i jhat_i^T qhat_i`
/// so the estimate costs `O(N m n)` and the pairs never need to be stored.
#[derive(Debug, Clone)]
pub struct UStatAccumulator {
    sum_j: DMatrix<f64>,
    sum_q: DVector<f64>,
    sum_diag: DVector<f64>,
    count: usize,
}

impl UStatAccumulator {
    pub fn new(m: usize, n: usize) -> Self {
        UStatAccumulator {
            sum_j: DMatrix::zeros(m, n),
            sum_q: DVector::zeros(m),
            sum_diag: DVector::zeros(n),
            count: 0,
        }
    }

    pub fn reset(&mut self) {
        self.sum_j.fill(0.0);
        self.sum_q.fill(0.0);
        self.sum_diag.fill(0.0);
        self.count = 0;
    }

    pub fn push(&mut self, pair: &SamplePair) {
        self.sum_j += &pair.jhat;
        self.sum_q += &pair.qhat;
        self.sum_diag.gemv_tr(1.0, &pair.jhat, &pair.qhat, 1.0);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Writes the gradient estimate into `g`.
    pub fn finish_into(&self, g: &mut DVector<f64>) -> Result<(), EstimatorError> {
        if self.count < 2 {
            return Err(EstimatorError::TooFewPairs(self.count));
        }
        let scale = 1.0 / (self.count as f64 * (self.count as f64 - 1.0));
        g.gemv_tr(scale, &self.sum_j, &self.sum_q, 0.0);
        g.axpy(-scale, &self.sum_diag, 1.0);
        Ok(())
    }
}

/// U-statistic gradient estimator over `N >= 2` independent pairs drawn at a
/// common point: `(1/(N(N-1))) sum_{i != j} jhat_i^T qhat_j`.
pub fn grad_usample(pairs: &[SamplePair]) -> Result<DVector<f64>, EstimatorError> {
    if pairs.len() < 2 {
        return Err(EstimatorError::TooFewPairs(pairs.len()));
    }
    let mut acc = UStatAccumulator::new(pairs[0].dim_m(), pairs[0].dim_n());
    for p in pairs {
        assert_eq!(p.dim_m(), pairs[0].dim_m(), "pair residual dimensions differ");
        assert_eq!(p.dim_n(), pairs[0].dim_n(), "pair parameter dimensions differ");
        acc.push(p);
    }
    let mut g = DVector::zeros(pairs[0].dim_n());
    acc.finish_into(&mut g)?;
    Ok(g)
}

/// Analytic form of a forget-rate sequence `zeta_t = q_t / sum_{i<=t} q_i`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetForm {
    /// `zeta_t = (1+p)/(t+p)`, the Theta(1/t) family (weights `q_i ~ i^p`).
    Rational,
    /// `zeta_t = sqrt((1+p)/(t+p))`, the Theta(1/sqrt(t)) family.
    SqrtRational,
    /// `zeta_t = c/(1 - (1-c)^t)`, asymptotically constant; the parameter is
    /// `c` in `(0, 1)`.
    ConstantLike,
}

/// Validated forget-rate schedule.
///
/// Construction checks, over the first 10^4 indices: `zeta_1 = 1`,
/// `0 < zeta_t < 1` for `t > 1`, and the increment bound
/// `1/zeta_{t+1} <= 1/zeta_t + 1` implied by non-decreasing weights. The
/// boundary case `p = 0` of the rational family sits exactly on the bound
/// (uniform weights), so equality is admitted up to roundoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgetSchedule {
    p: f64,
    form: ForgetForm,
}

const SCHEDULE_VALIDATION_HORIZON: u64 = 10_000;

impl ForgetSchedule {
    pub fn new(p: f64, form: ForgetForm) -> Result<Self, EstimatorError> {
        let invalid = |t: u64, reason: String| EstimatorError::InvalidSchedule { t, reason };
        if !p.is_finite() || p < 0.0 {
            return Err(invalid(0, format!("parameter must be finite and >= 0, got {p}")));
        }
        if form == ForgetForm::ConstantLike && !(p > 0.0 && p < 1.0) {
            return Err(invalid(0, format!("constant-like parameter must lie in (0,1), got {p}")));
        }
        let sched = ForgetSchedule { p, form };
        let z1 = sched.zeta(1);
        if (z1 - 1.0).abs() > 1e-12 {
            return Err(invalid(1, format!("zeta_1 = {z1}, expected 1")));
        }
        let mut prev_inv = 1.0 / z1;
        for t in 2..=SCHEDULE_VALIDATION_HORIZON {
            let z = sched.zeta(t);
            if !(z > 0.0 && z < 1.0) {
                return Err(invalid(t, format!("zeta_{t} = {z} outside (0, 1)")));
            }
            let inv = 1.0 / z;
            if inv > prev_inv + 1.0 + 1e-9 {
                return Err(invalid(
                    t,
                    format!("1/zeta grew by {} > 1, weights would decrease", inv - prev_inv),
                ));
            }
            prev_inv = inv;
        }
        Ok(sched)
    }

    /// Convenience constructor for the `(1+p)/(t+p)` family.
    pub fn rational(p: f64) -> Result<Self, EstimatorError> {
        Self::new(p, ForgetForm::Rational)
    }

    /// Forget rate at 1-based step `t`.
    #[inline]
    pub fn zeta(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        let tf = t as f64;
        match self.form {
            ForgetForm::Rational => (1.0 + self.p) / (tf + self.p),
            ForgetForm::SqrtRational => ((1.0 + self.p) / (tf + self.p)).sqrt(),
            ForgetForm::ConstantLike => {
                if t == 1 {
                    1.0
                } else {
                    self.p / (1.0 - (1.0 - self.p).powi(t as i32))
                }
            }
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn form(&self) -> ForgetForm {
        self.form
    }
}

/// Running state of the hybrid gradient estimator and its Gauss-Newton
/// companion statistics.
///
/// `bar_q`/`bar_j` are the forget-rate running means; `sum_j` and `sum_jtj`
/// accumulate the raw Jacobian sum and `sum_i jhat_i^T jhat_i` for the
/// stochastic Gauss-Newton matrix. `t` is the 1-based index of the *next*
/// sample; `last_zeta` is the forget rate consumed by the most recent update
/// (`None` before the first one, so it equals 1 exactly when one update has
/// been applied).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub bar_q: DVector<f64>,
    pub bar_j: DMatrix<f64>,
    pub sum_j: DMatrix<f64>,
    pub sum_jtj: DMatrix<f64>,
    pub t: u64,
    pub last_zeta: Option<f64>,
}

impl HybridState {
    pub fn new(m: usize, n: usize) -> Self {
        HybridState {
            bar_q: DVector::zeros(m),
            bar_j: DMatrix::zeros(m, n),
            sum_j: DMatrix::zeros(m, n),
            sum_jtj: DMatrix::zeros(n, n),
            t: 1,
            last_zeta: None,
        }
    }

    pub fn dim_m(&self) -> usize {
        self.bar_q.len()
    }

    pub fn dim_n(&self) -> usize {
        self.bar_j.ncols()
    }
}

/// One step of the hybrid estimator: returns the gradient estimate
/// `g_t = (bar_j_t^T qhat_t + jhat_t^T bar_q_t) / 2` computed from the
/// pre-update running means (identically zero at `t = 1`), then folds the new
/// pair into the state with rate `zeta_t`.
pub fn hybrid_update(
    state: &mut HybridState,
    pair: &SamplePair,
    zeta_t: f64,
) -> Result<DVector<f64>, EstimatorError> {
    let mut g = DVector::zeros(state.dim_n());
    hybrid_update_into(state, pair, zeta_t, &mut g)?;
    Ok(g)
}

/// Allocation-free form of [`hybrid_update`] for hot loops.
pub fn hybrid_update_into(
    state: &mut HybridState,
    pair: &SamplePair,
    zeta_t: f64,
    g: &mut DVector<f64>,
) -> Result<(), EstimatorError> {
    assert_eq!(pair.dim_m(), state.dim_m(), "pair residual dimensions differ");
    assert_eq!(pair.dim_n(), state.dim_n(), "pair parameter dimensions differ");
    if !(zeta_t > 0.0 && zeta_t <= 1.0) {
        return Err(EstimatorError::ForgetRateOutOfRange { t: state.t, zeta: zeta_t });
    }
    if state.t == 1 && zeta_t != 1.0 {
        return Err(EstimatorError::ForgetRateOutOfRange { t: 1, zeta: zeta_t });
    }

    // gradient from the means accumulated over samples 1..t-1
    g.gemv_tr(0.5, &state.bar_j, &pair.qhat, 0.0);
    g.gemv_tr(0.5, &pair.jhat, &state.bar_q, 1.0);

    state.bar_q.axpy(zeta_t, &pair.qhat, 1.0 - zeta_t);
    crate::linalg::mat_axpy(&mut state.bar_j, zeta_t, &pair.jhat, 1.0 - zeta_t);
    state.sum_j += &pair.jhat;
    state.sum_jtj.gemm_tr(1.0, &pair.jhat, &pair.jhat, 1.0);
    state.t += 1;
    state.last_zeta = Some(zeta_t);
    Ok(())
}

/// Monte Carlo estimate of the U-statistic variance components at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaDecomposition {
    /// Covariance of `J^T qhat + jhat^T Q` (persists for any sample count).
    pub sigma_a2: DMatrix<f64>,
    /// Half the covariance of the cross product of centered noises
    /// (suppressed as `1/(N(N-1))` by the U-statistic).
    pub sigma_b2: DMatrix<f64>,
    pub num_pairs: usize,
    pub x_eval: DVector<f64>,
}

impl SigmaDecomposition {
    /// The variance-law prediction `tr(sigma_a2)/N + tr(sigma_b2)/(N(N-1))`
    /// for the trace-variance of the N-pair gradient estimator.
    pub fn trace_variance_prediction(&self, n_pairs: usize) -> f64 {
        let n = n_pairs as f64;
        self.sigma_a2.trace() / n + self.sigma_b2.trace() / (n * (n - 1.0))
    }
}

/// Statistical floor for [`estimate_sigma_decomposition`].
pub const SIGMA_PAIR_FLOOR: usize = 1000;

/// Estimates the variance decomposition of the gradient estimator at `x` from
/// `num_pairs` fresh draws.
///
/// The mean residual and Jacobian are replaced by their plug-in empirical
/// means. `sigma_a2` is the sample covariance of
/// `bar_j^T qhat_i + jhat_i^T bar_q`; `sigma_b2` is half the sample
/// covariance of `eps_j_i^T eps_q_{i+1} + eps_j_{i+1}^T eps_q_i` over
/// consecutive disjoint pairs `(1,2), (3,4), ...` of the same draws. Both
/// outputs are symmetrized.
pub fn estimate_sigma_decomposition<P: McLsProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    num_pairs: usize,
    rng: &mut RunRng,
) -> Result<SigmaDecomposition, EstimatorError> {
    if num_pairs < SIGMA_PAIR_FLOOR {
        return Err(EstimatorError::TooFewSigmaPairs { floor: SIGMA_PAIR_FLOOR, got: num_pairs });
    }
    let (m, n) = (problem.dim_m(), problem.dim_n());

    let mut pairs = Vec::with_capacity(num_pairs);
    let mut mean_q = DVector::zeros(m);
    let mut mean_j = DMatrix::zeros(m, n);
    for _ in 0..num_pairs {
        let p = problem.sample(x, rng);
        mean_q += &p.qhat;
        mean_j += &p.jhat;
        pairs.push(p);
    }
    let inv = 1.0 / num_pairs as f64;
    mean_q *= inv;
    mean_j *= inv;

    // A-component: covariance of mean_j^T qhat_i + jhat_i^T mean_q
    let mut a_samples = Vec::with_capacity(num_pairs);
    let mut a_mean = DVector::zeros(n);
    for p in &pairs {
        let mut v = DVector::zeros(n);
        v.gemv_tr(1.0, &mean_j, &p.qhat, 0.0);
        v.gemv_tr(1.0, &p.jhat, &mean_q, 1.0);
        a_mean += &v;
        a_samples.push(v);
    }
    a_mean *= inv;
    let sigma_a2 = covariance_of(&a_samples, &a_mean);

    // B-component: half the covariance of the symmetrized cross noise over
    // disjoint consecutive pairs
    let mut b_samples = Vec::with_capacity(num_pairs / 2);
    let mut b_mean = DVector::zeros(n);
    let mut eps_q_a = DVector::zeros(m);
    let mut eps_q_b = DVector::zeros(m);
    let mut eps_j_a = DMatrix::zeros(m, n);
    let mut eps_j_b = DMatrix::zeros(m, n);
    for chunk in pairs.chunks_exact(2) {
        eps_q_a.copy_from(&chunk[0].qhat);
        eps_q_a -= &mean_q;
        eps_j_a.copy_from(&chunk[0].jhat);
        eps_j_a -= &mean_j;
        eps_q_b.copy_from(&chunk[1].qhat);
        eps_q_b -= &mean_q;
        eps_j_b.copy_from(&chunk[1].jhat);
        eps_j_b -= &mean_j;
        let mut w = DVector::zeros(n);
        w.gemv_tr(1.0, &eps_j_a, &eps_q_b, 0.0);
        w.gemv_tr(1.0, &eps_j_b, &eps_q_a, 1.0);
        b_mean += &w;
        b_samples.push(w);
    }
    b_mean /= b_samples.len() as f64;
    let mut sigma_b2 = covariance_of(&b_samples, &b_mean);
    sigma_b2 *= 0.5;

    Ok(SigmaDecomposition { sigma_a2, sigma_b2, num_pairs, x_eval: x.clone() })
}

fn covariance_of(samples: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let n = mean.len();
    let mut cov = DMatrix::zeros(n, n);
    let mut centered = DVector::zeros(n);
    for s in samples {
        centered.copy_from(s);
        centered -= mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (samples.len() - 1) as f64;
    // exact symmetry can drift through ger accumulation
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn pair(q: &[f64], j: DMatrix<f64>) -> SamplePair {
        SamplePair { qhat: DVector::from_row_slice(q), jhat: j }
    }

    fn scalar_pair(q: f64, j: f64) -> SamplePair {
        pair(&[q], dmatrix![j])
    }

    #[test]
    fn two_sample_equal_pairs_reduce_to_jt_q() {
        let j = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
        let a = pair(&[1.0, 2.0, 3.0], j.clone());
        let b = pair(&[1.0, 2.0, 3.0], j);
        assert_eq!(grad_two_sample(&a, &b), dvector![4.0, 5.0]);
    }

    #[test]
    fn two_sample_scalar_hand_value() {
        let a = scalar_pair(1.0, 2.0);
        let b = scalar_pair(3.0, 4.0);
        assert_eq!(grad_two_sample(&a, &b), dvector![5.0]);
    }

    #[test]
    fn two_sample_is_symmetric_in_its_arguments() {
        let a = pair(&[0.3, -1.2], dmatrix![0.5, 1.0; -2.0, 0.25]);
        let b = pair(&[2.0, 0.7], dmatrix![1.5, -0.5; 0.0, 3.0]);
        assert_eq!(grad_two_sample(&a, &b), grad_two_sample(&b, &a));
    }

    #[test]
    fn usample_with_two_pairs_equals_two_sample() {
        let a = pair(&[0.3, -1.2], dmatrix![0.5, 1.0; -2.0, 0.25]);
        let b = pair(&[2.0, 0.7], dmatrix![1.5, -0.5; 0.0, 3.0]);
        let u = grad_usample(&[a.clone(), b.clone()]).unwrap();
        assert_relative_eq!(u, grad_two_sample(&a, &b), epsilon = 1e-15);
    }

    #[test]
    fn usample_scalar_hand_value() {
        let pairs = [scalar_pair(1.0, 1.0), scalar_pair(1.0, 2.0), scalar_pair(2.0, 3.0)];
        let u = grad_usample(&pairs).unwrap();
        // sum over the 6 ordered i != j products is 15, divided by 3*2
        assert_relative_eq!(u[0], 2.5, epsilon = 1e-15);
    }

    #[test]
    fn usample_rejects_fewer_than_two_pairs() {
        assert_eq!(
            grad_usample(&[scalar_pair(1.0, 1.0)]),
            Err(EstimatorError::TooFewPairs(1))
        );
        assert_eq!(grad_usample(&[]), Err(EstimatorError::TooFewPairs(0)));
    }

    fn naive_usample(pairs: &[SamplePair]) -> DVector<f64> {
        let n = pairs[0].dim_n();
        let count = pairs.len() as f64;
        let mut g = DVector::zeros(n);
        for (i, a) in pairs.iter().enumerate() {
            for (j, b) in pairs.iter().enumerate() {
                if i != j {
                    g.gemv_tr(1.0, &a.jhat, &b.qhat, 1.0);
                }
            }
        }
        g / (count * (count - 1.0))
    }

    #[test]
    fn usample_matches_naive_double_loop() {
        let mut rng = crate::rng::rng_for_run(11, 0);
        let mut pairs = Vec::new();
        for _ in 0..5 {
            let q = DVector::from_fn(3, |_, _| crate::rng::standard_normal(&mut rng));
            let j = DMatrix::from_fn(3, 2, |_, _| crate::rng::standard_normal(&mut rng));
            pairs.push(SamplePair { qhat: q, jhat: j });
        }
        let fast = grad_usample(&pairs).unwrap();
        let slow = naive_usample(&pairs);
        assert_relative_eq!(fast, slow, max_relative = 1e-10);
    }

    #[test]
    fn forget_schedule_basic_families() {
        let r = ForgetSchedule::rational(2.0).unwrap();
        assert_relative_eq!(r.zeta(1), 1.0);
        assert_relative_eq!(r.zeta(4), 0.5);

        let s = ForgetSchedule::new(2.0, ForgetForm::SqrtRational).unwrap();
        assert_relative_eq!(s.zeta(1), 1.0);
        assert_relative_eq!(s.zeta(10), (3.0f64 / 12.0).sqrt());

        let c = ForgetSchedule::new(0.25, ForgetForm::ConstantLike).unwrap();
        assert_relative_eq!(c.zeta(1), 1.0);
        assert!(c.zeta(50) > 0.25 && c.zeta(50) < 0.2501);
    }

    #[test]
    fn forget_schedule_p_zero_is_admitted() {
        // uniform weights sit exactly on the increment bound
        let r = ForgetSchedule::rational(0.0).unwrap();
        assert_relative_eq!(r.zeta(5), 0.2);
    }

    #[test]
    fn forget_schedule_rejects_bad_parameters() {
        assert!(ForgetSchedule::rational(-0.5).is_err());
        assert!(ForgetSchedule::new(1.0, ForgetForm::ConstantLike).is_err());
        assert!(ForgetSchedule::new(0.0, ForgetForm::ConstantLike).is_err());
    }

    #[test]
    fn hybrid_first_step_gradient_is_zero() {
        let mut st = HybridState::new(2, 2);
        let p = pair(&[5.0, -3.0], dmatrix![1.0, 2.0; 3.0, 4.0]);
        let g = hybrid_update(&mut st, &p, 1.0).unwrap();
        assert_eq!(g, dvector![0.0, 0.0]);
        assert_eq!(st.t, 2);
        assert_eq!(st.last_zeta, Some(1.0));
        assert_eq!(st.bar_q, p.qhat);
        assert_eq!(st.bar_j, p.jhat);
    }

    #[test]
    fn hybrid_second_step_equals_two_sample() {
        let p1 = pair(&[0.3, -1.2], dmatrix![0.5, 1.0; -2.0, 0.25]);
        let p2 = pair(&[2.0, 0.7], dmatrix![1.5, -0.5; 0.0, 3.0]);
        let mut st = HybridState::new(2, 2);
        hybrid_update(&mut st, &p1, 1.0).unwrap();
        let g = hybrid_update(&mut st, &p2, 2.0 / 3.0).unwrap();
        assert_relative_eq!(g, grad_two_sample(&p1, &p2), epsilon = 1e-14);
    }

    #[test]
    fn hybrid_rejects_out_of_range_zeta() {
        let mut st = HybridState::new(1, 1);
        let p = scalar_pair(1.0, 1.0);
        assert!(hybrid_update(&mut st, &p, 0.0).is_err());
        assert!(hybrid_update(&mut st, &p, 1.5).is_err());
        // zeta_1 must be exactly 1
        assert!(hybrid_update(&mut st, &p, 0.5).is_err());
    }

    /// Direct evaluation of the weighted-sum form of the hybrid gradient with
    /// explicit weights `q_i`, as an oracle for the forget-rate recurrence.
    fn direct_weighted_gradient(history: &[SamplePair], current: &SamplePair, q: &[f64]) -> DVector<f64> {
        let n = current.dim_n();
        let mut g = DVector::zeros(n);
        let mut total = 0.0;
        for (p, &w) in history.iter().zip(q) {
            g.gemv_tr(0.5 * w, &p.jhat, &current.qhat, 1.0);
            g.gemv_tr(0.5 * w, &current.jhat, &p.qhat, 1.0);
            total += w;
        }
        g / total
    }

    #[test]
    fn hybrid_recurrence_matches_direct_linear_weights() {
        // weights q_i = i give zeta_t = 2/(t+1)
        let mut rng = crate::rng::rng_for_run(3, 1);
        let mut st = HybridState::new(3, 2);
        let mut history: Vec<SamplePair> = Vec::new();
        for t in 1..=20u64 {
            let p = SamplePair {
                qhat: DVector::from_fn(3, |_, _| crate::rng::standard_normal(&mut rng)),
                jhat: DMatrix::from_fn(3, 2, |_, _| crate::rng::standard_normal(&mut rng)),
            };
            let zeta = 2.0 / (t as f64 + 1.0);
            let g = hybrid_update(&mut st, &p, zeta).unwrap();
            if t > 1 {
                let weights: Vec<f64> = (1..t).map(|i| i as f64).collect();
                let oracle = direct_weighted_gradient(&history, &p, &weights);
                assert_relative_eq!(g, oracle, max_relative = 1e-10);
            }
            history.push(p);
        }
    }

    #[test]
    fn sigma_floor_is_enforced() {
        struct Degenerate;
        impl McLsProblem for Degenerate {
            fn dim_n(&self) -> usize { 1 }
            fn dim_m(&self) -> usize { 1 }
            fn constraints(&self) -> &crate::problem::BoxConstraints {
                unimplemented!()
            }
            fn reference(&self) -> Option<&crate::problem::ReferenceSolution> { None }
            fn sample_into(&self, _x: &DVector<f64>, out: &mut SamplePair, _rng: &mut RunRng) {
                out.qhat[0] = 1.0;
                out.jhat[(0, 0)] = 1.0;
            }
            fn initial_point(&self, _rng: &mut RunRng) -> DVector<f64> { dvector![0.0] }
        }
        let mut rng = crate::rng::rng_for_run(0, 0);
        let err = estimate_sigma_decomposition(&Degenerate, &dvector![0.0], 10, &mut rng);
        assert!(matches!(err, Err(EstimatorError::TooFewSigmaPairs { .. })));

        // deterministic residual and Jacobian: both components vanish
        let d = estimate_sigma_decomposition(&Degenerate, &dvector![0.0], 2000, &mut rng).unwrap();
        assert_relative_eq!(d.sigma_a2[(0, 0)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(d.sigma_b2[(0, 0)], 0.0, epsilon = 1e-14);
    }
}
