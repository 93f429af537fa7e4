//! Domain types: bandit instances, sampling designs, policies and sample logs.
//!
//! Context-action pairs are addressed by a flat index `x * n_actions + a`
//! (0-based). Features are stored one column per pair so that each feature
//! vector is a contiguous slice.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_index, Result, SclbError};

const SIMPLEX_TOL: f64 = 1e-9;

/// Where rewards come from.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSource {
    /// `r = phi(x, a)^T theta_star + N(0, noise_std^2)`.
    Linear {
        theta_star: DVector<f64>,
        noise_std: f64,
    },
    /// Fixed reward table of shape `n_contexts x n_actions`; rewards are
    /// returned exactly as stored.
    Tabular { table: DMatrix<f64> },
}

/// A stochastic contextual linear bandit with finite contexts and actions.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    n_contexts: usize,
    n_actions: usize,
    /// `d x (n_contexts * n_actions)`, column `x * n_actions + a` is `phi(x, a)`.
    columns: DMatrix<f64>,
    context_dist: Vec<f64>,
    reward: RewardSource,
    feature_bound: f64,
}

impl BanditInstance {
    /// Builds an instance from a `(n_contexts * n_actions) x d` feature matrix
    /// whose row `x * n_actions + a` holds `phi(x, a)`.
    pub fn new(
        n_contexts: usize,
        n_actions: usize,
        features: DMatrix<f64>,
        context_dist: Vec<f64>,
        reward: RewardSource,
    ) -> Result<Self> {
        if n_contexts == 0 || n_actions == 0 {
            return Err(SclbError::Domain(
                "an instance needs at least one context and one action".into(),
            ));
        }
        Self::from_columns(
            n_contexts,
            n_actions,
            features.transpose(),
            context_dist,
            reward,
        )
    }

    pub(crate) fn from_columns(
        n_contexts: usize,
        n_actions: usize,
        columns: DMatrix<f64>,
        context_dist: Vec<f64>,
        reward: RewardSource,
    ) -> Result<Self> {
        let n_pairs = n_contexts * n_actions;
        let dim = columns.nrows();
        if columns.ncols() != n_pairs {
            return Err(SclbError::Shape(format!(
                "feature matrix has {} rows, expected {} (= {} contexts x {} actions)",
                columns.ncols(),
                n_pairs,
                n_contexts,
                n_actions
            )));
        }
        if dim == 0 {
            return Err(SclbError::Shape("feature dimension must be positive".into()));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(SclbError::Domain("features must be finite".into()));
        }
        if context_dist.len() != n_contexts {
            return Err(SclbError::Shape(format!(
                "context distribution has length {}, expected {}",
                context_dist.len(),
                n_contexts
            )));
        }
        check_probability_vector("context distribution", &context_dist)?;

        let mut feature_bound: f64 = 0.0;
        for (j, col) in columns.column_iter().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                let (x, a) = (j / n_actions, j % n_actions);
                return Err(SclbError::Domain(format!(
                    "feature of pair (x={x}, a={a}) is the zero vector"
                )));
            }
            feature_bound = feature_bound.max(norm);
        }
        let rank = numerical_rank(&columns);
        if rank < dim {
            return Err(SclbError::Infeasible(format!(
                "features span a {rank}-dimensional subspace of R^{dim}; full rank is required"
            )));
        }

        match &reward {
            RewardSource::Linear {
                theta_star,
                noise_std,
            } => {
                if theta_star.len() != dim {
                    return Err(SclbError::Shape(format!(
                        "theta_star has length {}, expected {dim}",
                        theta_star.len()
                    )));
                }
                if !(*noise_std >= 0.0) || !noise_std.is_finite() {
                    return Err(SclbError::Domain(format!(
                        "noise_std must be a nonnegative real, got {noise_std}"
                    )));
                }
            }
            RewardSource::Tabular { table } => {
                if table.nrows() != n_contexts || table.ncols() != n_actions {
                    return Err(SclbError::Shape(format!(
                        "reward table is {}x{}, expected {}x{}",
                        table.nrows(),
                        table.ncols(),
                        n_contexts,
                        n_actions
                    )));
                }
                if table.iter().any(|v| !v.is_finite()) {
                    return Err(SclbError::Domain("reward table must be finite".into()));
                }
            }
        }

        Ok(Self {
            n_contexts,
            n_actions,
            columns,
            context_dist,
            reward,
            feature_bound,
        })
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_contexts * self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    /// `L = max ||phi(x, a)||_2`.
    pub fn feature_bound(&self) -> f64 {
        self.feature_bound
    }

    pub fn context_dist(&self) -> &[f64] {
        &self.context_dist
    }

    pub fn reward_source(&self) -> &RewardSource {
        &self.reward
    }

    #[inline]
    pub fn pair_index(&self, x: usize, a: usize) -> usize {
        x * self.n_actions + a
    }

    #[inline]
    pub fn pair_of(&self, index: usize) -> (usize, usize) {
        (index / self.n_actions, index % self.n_actions)
    }

    /// `phi(x, a)`.
    pub fn feature(&self, x: usize, a: usize) -> Result<DVectorView<'_, f64>> {
        check_index("context", x, self.n_contexts)?;
        check_index("action", a, self.n_actions)?;
        Ok(self.columns.column(self.pair_index(x, a)))
    }

    /// Feature of a flat pair index; panics when out of range.
    #[inline]
    pub fn pair_feature(&self, pair: usize) -> DVectorView<'_, f64> {
        self.columns.column(pair)
    }

    /// All features as a `d x n_pairs` matrix.
    pub fn feature_columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// All features as the `n_pairs x d` matrix, one row per pair.
    pub fn feature_matrix(&self) -> DMatrix<f64> {
        self.columns.transpose()
    }

    /// Expected reward `mu(x, a)`.
    pub fn mean_reward(&self, x: usize, a: usize) -> f64 {
        match &self.reward {
            RewardSource::Linear { theta_star, .. } => {
                self.columns.column(self.pair_index(x, a)).dot(theta_star)
            }
            RewardSource::Tabular { table } => table[(x, a)],
        }
    }

    /// Draws an observed reward for `(x, a)`.
    pub fn sample_reward<R: Rng + ?Sized>(&self, x: usize, a: usize, rng: &mut R) -> f64 {
        match &self.reward {
            RewardSource::Linear {
                theta_star,
                noise_std,
            } => {
                let mean = self.columns.column(self.pair_index(x, a)).dot(theta_star);
                if *noise_std == 0.0 {
                    mean
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    mean + noise_std * z
                }
            }
            RewardSource::Tabular { table } => table[(x, a)],
        }
    }

    /// Greedy policy on the true means (lowest action index on ties).
    pub fn optimal_policy(&self) -> Policy {
        let actions = (0..self.n_contexts)
            .map(|x| {
                argmax_lowest((0..self.n_actions).map(|a| self.mean_reward(x, a)))
            })
            .collect();
        Policy { action_of: actions }
    }

    /// Same instance with a different context distribution.
    pub fn with_context_dist(&self, context_dist: Vec<f64>) -> Result<Self> {
        if context_dist.len() != self.n_contexts {
            return Err(SclbError::Shape(format!(
                "context distribution has length {}, expected {}",
                context_dist.len(),
                self.n_contexts
            )));
        }
        check_probability_vector("context distribution", &context_dist)?;
        let mut out = self.clone();
        out.context_dist = context_dist;
        Ok(out)
    }

    /// Same instance with Gaussian noise of a different scale (linear rewards only).
    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        match &self.reward {
            RewardSource::Linear { theta_star, .. } => {
                if !(noise_std >= 0.0) || !noise_std.is_finite() {
                    return Err(SclbError::Domain(format!(
                        "noise_std must be a nonnegative real, got {noise_std}"
                    )));
                }
                let mut out = self.clone();
                out.reward = RewardSource::Linear {
                    theta_star: theta_star.clone(),
                    noise_std,
                };
                Ok(out)
            }
            RewardSource::Tabular { .. } => Err(SclbError::Domain(
                "tabular rewards carry no noise model".into(),
            )),
        }
    }

    /// Rescales all features so that the largest has unit norm. Linear
    /// parameters are scaled inversely, so mean rewards are unchanged.
    pub fn normalized(&self) -> Self {
        let scale = self.feature_bound;
        if scale == 1.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.columns /= scale;
        out.feature_bound = out
            .columns
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if let RewardSource::Linear { theta_star, .. } = &mut out.reward {
            *theta_star *= scale;
        }
        out
    }
}

/// A probability distribution over context-action pairs, together with the
/// ridge shift `lambda / T` used when forming its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    weights: Vec<f64>,
    lambda_over_t: f64,
}

impl Design {
    pub fn new(weights: Vec<f64>, lambda_over_t: f64) -> Result<Self> {
        check_probability_vector("design", &weights)?;
        if !(lambda_over_t >= 0.0) || !lambda_over_t.is_finite() {
            return Err(SclbError::Domain(format!(
                "design shift must be nonnegative, got {lambda_over_t}"
            )));
        }
        Ok(Self {
            weights,
            lambda_over_t,
        })
    }

    pub fn uniform(n_pairs: usize, lambda_over_t: f64) -> Result<Self> {
        if n_pairs == 0 {
            return Err(SclbError::Domain("empty design".into()));
        }
        Self::new(vec![1.0 / n_pairs as f64; n_pairs], lambda_over_t)
    }

    pub fn point_mass(n_pairs: usize, pair: usize, lambda_over_t: f64) -> Result<Self> {
        check_index("pair", pair, n_pairs)?;
        let mut w = vec![0.0; n_pairs];
        w[pair] = 1.0;
        Self::new(w, lambda_over_t)
    }

    /// Builds a design with the conventional shift `lambda / horizon`.
    pub fn with_ridge(weights: Vec<f64>, lambda: f64, horizon: usize) -> Result<Self> {
        Self::new(weights, ridge_shift(lambda, horizon)?)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, pair: usize) -> f64 {
        self.weights[pair]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn shift(&self) -> f64 {
        self.lambda_over_t
    }

    pub fn with_shift(mut self, lambda_over_t: f64) -> Self {
        self.lambda_over_t = lambda_over_t;
        self
    }

    /// Number of pairs with positive weight.
    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Zeroes weights below `threshold` and renormalizes.
    pub fn pruned(&self, threshold: f64) -> Self {
        let mut w: Vec<f64> = self
            .weights
            .iter()
            .map(|&v| if v < threshold { 0.0 } else { v })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|v| *v /= total);
        } else {
            return self.clone();
        }
        Self {
            weights: w,
            lambda_over_t: self.lambda_over_t,
        }
    }

    /// Context marginal `sum_a w(x, a)`.
    pub fn context_marginal(&self, n_actions: usize) -> Vec<f64> {
        self.weights
            .chunks(n_actions)
            .map(|row| row.iter().sum())
            .collect()
    }
}

/// `lambda / T`, the shift of a design covariance.
pub fn ridge_shift(lambda: f64, horizon: usize) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SclbError::Domain(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    if horizon == 0 {
        return Err(SclbError::Domain("budget T must be positive".into()));
    }
    Ok(lambda / horizon as f64)
}

/// One observed reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub context: usize,
    pub action: usize,
    pub reward: f64,
    /// Draw index, starting at 0.
    pub t: usize,
}

/// Ordered record of sampled pairs and their rewards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleLog {
    entries: Vec<Sample>,
}

impl SampleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            entries: Vec::with_capacity(n),
        }
    }

    /// Appends a sample; `t` is assigned from the current length.
    pub fn push(&mut self, context: usize, action: usize, reward: f64) {
        let t = self.entries.len();
        self.entries.push(Sample {
            context,
            action,
            reward,
            t,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Sample] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.entries.iter()
    }

    /// The `(x, a)` sequence without rewards.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|s| (s.context, s.action)).collect()
    }

    pub(crate) fn validate(&self, instance: &BanditInstance) -> Result<()> {
        for s in &self.entries {
            check_index("context", s.context, instance.n_contexts())?;
            check_index("action", s.action, instance.n_actions())?;
        }
        Ok(())
    }
}

/// Deterministic map from contexts to actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    action_of: Vec<usize>,
}

impl Policy {
    pub fn new(action_of: Vec<usize>, n_actions: usize) -> Result<Self> {
        for &a in &action_of {
            check_index("action", a, n_actions)?;
        }
        Ok(Self { action_of })
    }

    pub fn constant(n_contexts: usize, action: usize) -> Self {
        Self {
            action_of: vec![action; n_contexts],
        }
    }

    pub fn action(&self, x: usize) -> usize {
        self.action_of[x]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }

    pub fn n_contexts(&self) -> usize {
        self.action_of.len()
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax_lowest<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub(crate) fn check_probability_vector(what: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(SclbError::Domain(format!("{what} is empty")));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0) || !x.is_finite()) {
        return Err(SclbError::Domain(format!(
            "{what} has invalid entry {x} at index {i}"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(SclbError::Domain(format!(
            "{what} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn numerical_rank(columns: &DMatrix<f64>) -> usize {
    // rank of Phi^T Phi via its eigenvalues; d x d regardless of the pair count
    let gram = columns * columns.transpose();
    let eig = gram.symmetric_eigenvalues();
    let top = eig.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    let tol = top * 1e-12 * columns.nrows().max(1) as f64;
    eig.iter().filter(|&&v| v > tol).count()
}
