//! Ridge regression, the uncertainty measure `Gamma`, the confidence width
//! `beta` and greedy policy extraction.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Result, SclbError};
use crate::linalg::{covariance_of_counts, CovFactor, CovarianceMatrix};
use crate::model::{argmax_lowest, BanditInstance, Policy, SampleLog};

/// `Gamma = E_{x ~ p} max_a ||phi(x, a)||^2_{Sigma^{-1}}`.
pub fn gamma_uncertainty(instance: &BanditInstance, cov: &CovarianceMatrix) -> Result<f64> {
    if cov.dim() != instance.dim() {
        return Err(SclbError::Shape(format!(
            "covariance is {0}x{0}, instance dimension is {1}",
            cov.dim(),
            instance.dim()
        )));
    }
    Ok(gamma_with_factor(instance, &cov.factor()?))
}

pub(crate) fn gamma_with_factor(instance: &BanditInstance, factor: &CovFactor) -> f64 {
    let norms = factor.column_norms_sq(instance.feature_columns());
    context_max_average(instance, &norms)
}

/// `sum_x p(x) max_a values[(x, a)]` for a per-pair vector.
pub(crate) fn context_max_average(instance: &BanditInstance, per_pair: &[f64]) -> f64 {
    per_pair
        .chunks(instance.n_actions())
        .zip(instance.context_dist())
        .filter(|(_, &p)| p > 0.0)
        .map(|(row, &p)| p * row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// Inputs of the confidence width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub delta: f64,
    pub horizon: usize,
    pub n_contexts: usize,
    pub n_actions: usize,
    pub dim: usize,
    /// Feature bound `L`.
    pub feature_bound: f64,
    pub lambda: f64,
    /// `||theta_star||_2`.
    pub theta_norm: f64,
}

impl BetaParams {
    /// Reads everything except `delta`, `horizon`, `lambda` and `theta_norm` off an instance.
    pub fn for_instance(
        instance: &BanditInstance,
        delta: f64,
        horizon: usize,
        lambda: f64,
        theta_norm: f64,
    ) -> Self {
        Self {
            delta,
            horizon,
            n_contexts: instance.n_contexts(),
            n_actions: instance.n_actions(),
            dim: instance.dim(),
            feature_bound: instance.feature_bound(),
            lambda,
            theta_norm,
        }
    }
}

/// Confidence width `beta` (the square, not its root).
///
/// `sqrt(beta) = 2 min(2 sqrt(2) sqrt(log(12 T^2 |X||A| / (pi^2 delta))),
/// sqrt(d log(2 (1 + T L^2 / lambda) / delta)) + sqrt(lambda) ||theta||)`
/// where `pi` is the circle constant. A logarithm below zero is clamped at zero.
pub fn beta_width(params: &BetaParams) -> Result<f64> {
    let BetaParams {
        delta,
        horizon,
        n_contexts,
        n_actions,
        dim,
        feature_bound,
        lambda,
        theta_norm,
    } = *params;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SclbError::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SclbError::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if horizon == 0 {
        return Err(SclbError::Domain("budget T must be positive".into()));
    }
    if !(feature_bound >= 0.0) || !(theta_norm >= 0.0) {
        return Err(SclbError::Domain(
            "feature bound and parameter norm must be nonnegative".into(),
        ));
    }
    let t = horizon as f64;
    let union = 12.0 / (PI * PI * delta) * t * t * (n_contexts * n_actions) as f64;
    let branch_union = 2.0 * 2f64.sqrt() * union.ln().max(0.0).sqrt();
    let ellipsoid = 2.0 / delta * (1.0 + t * feature_bound * feature_bound / lambda);
    let branch_ellipsoid =
        (dim as f64 * ellipsoid.ln().max(0.0)).sqrt() + lambda.sqrt() * theta_norm;
    let root = 2.0 * branch_union.min(branch_ellipsoid);
    Ok(root * root)
}

/// `theta_hat = Sigma_S^{-1} sum_t phi(x_t, a_t) r_t` with `Sigma_S = lambda I + sum phi phi^T`.
pub fn ridge_fit(instance: &BanditInstance, log: &SampleLog, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(SclbError::Domain(format!("lambda must be positive, got {lambda}")));
    }
    log.validate(instance)?;
    if log.is_empty() {
        return Ok(DVector::zeros(instance.dim()));
    }
    let n = instance.n_pairs();
    let mut counts = vec![0.0; n];
    let mut reward_sums = DVector::zeros(n);
    for s in log.iter() {
        let j = instance.pair_index(s.context, s.action);
        counts[j] += 1.0;
        reward_sums[j] += s.reward;
    }
    let cov = covariance_of_counts(instance, &counts, lambda)?;
    let rhs = instance.feature_columns() * reward_sums;
    Ok(cov.factor()?.solve(&rhs))
}

/// `x -> argmax_a phi(x, a)^T theta`, ties to the lowest action index.
pub fn greedy_policy(instance: &BanditInstance, theta_hat: &DVector<f64>) -> Result<Policy> {
    if theta_hat.len() != instance.dim() {
        return Err(SclbError::Shape(format!(
            "parameter has length {}, instance dimension is {}",
            theta_hat.len(),
            instance.dim()
        )));
    }
    let scores = instance.feature_columns().tr_mul(theta_hat);
    let actions = scores
        .as_slice()
        .chunks(instance.n_actions())
        .map(|row| argmax_lowest(row.iter().copied()))
        .collect();
    Policy::new(actions, instance.n_actions())
}
