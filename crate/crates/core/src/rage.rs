//! Active-ContextualRAGE over an explicitly enumerated policy class, and the
//! active and passive complexity measures `rho`.
//!
//! Desk scale only: `|A|^|X|` policies are listed one by one. Policies with
//! identical mean features `phi_pi` are indistinguishable to every quantity
//! here, so designs and gap estimates work on distinct `phi_pi` groups.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;

use crate::design::{solve_minimax, AtomLayout, DesignOptions, SolveReport};
use crate::error::{Result, SclbError};
use crate::explore::sample_counts;
use crate::linalg::{covariance_of_design, CovFactor};
use crate::model::{BanditInstance, Design, Policy};

/// Default cap on the number of enumerated policies.
pub const POLICY_CAP: usize = 4096;
/// Ridge added to design covariances inside this module.
pub const RAGE_SHIFT: f64 = 1e-10;
/// Default cap on the samples drawn in one round.
pub const ROUND_SAMPLE_CAP: u64 = 10_000_000;

/// An explicit policy class with the policy feature means `phi_pi` as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyClass {
    policies: Vec<Policy>,
    phi: DMatrix<f64>,
}

impl PolicyClass {
    pub fn new(instance: &BanditInstance, policies: Vec<Policy>) -> Result<Self> {
        let mut phi = DMatrix::zeros(instance.dim(), policies.len());
        for (k, pi) in policies.iter().enumerate() {
            phi.set_column(k, &policy_feature(instance, pi)?);
        }
        Ok(Self { policies, phi })
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn policy(&self, k: usize) -> &Policy {
        &self.policies[k]
    }

    /// `phi_pi` of policy `k`.
    pub fn phi(&self, k: usize) -> DVectorView<'_, f64> {
        self.phi.column(k)
    }

    pub fn phi_matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn position(&self, policy: &Policy) -> Option<usize> {
        self.policies.iter().position(|p| p == policy)
    }

    /// The policies at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            policies: indices.iter().map(|&k| self.policies[k].clone()).collect(),
            phi: self.phi.select_columns(indices),
        }
    }

    /// Group id per policy, grouping identical `phi_pi`, and one representative per group.
    fn groups(&self) -> (Vec<usize>, Vec<usize>) {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut reps = Vec::new();
        let group = (0..self.len())
            .map(|k| {
                let key: Vec<u64> = self.phi.column(k).iter().map(|x| (x + 0.0).to_bits()).collect();
                *index.entry(key).or_insert_with(|| {
                    reps.push(k);
                    reps.len() - 1
                })
            })
            .collect();
        (group, reps)
    }
}

/// `phi_pi = sum_x p(x) phi(x, pi(x))`.
pub fn policy_feature(instance: &BanditInstance, policy: &Policy) -> Result<DVector<f64>> {
    if policy.n_contexts() != instance.n_contexts() {
        return Err(SclbError::Shape(format!(
            "policy covers {} contexts, instance has {}",
            policy.n_contexts(),
            instance.n_contexts()
        )));
    }
    let mut phi = DVector::zeros(instance.dim());
    for (x, &p) in instance.context_dist().iter().enumerate() {
        if p > 0.0 {
            phi.axpy(p, &instance.feature(x, policy.action(x))?, 1.0);
        }
    }
    Ok(phi)
}

/// `V(pi) = E_{x ~ p} mu(x, pi(x))`.
pub fn policy_value(instance: &BanditInstance, policy: &Policy) -> f64 {
    instance
        .context_dist()
        .iter()
        .enumerate()
        .map(|(x, &p)| p * instance.mean_reward(x, policy.action(x)))
        .sum()
}

/// Every deterministic policy, in lexicographic order with context 0 most
/// significant. Refuses when `|A|^|X|` exceeds `cap`.
pub fn enumerate_policies(instance: &BanditInstance, cap: usize) -> Result<PolicyClass> {
    let (n_ctx, n_act) = (instance.n_contexts(), instance.n_actions());
    let count = u32::try_from(n_ctx)
        .ok()
        .and_then(|e| (n_act as u128).checked_pow(e));
    match count {
        Some(c) if c <= cap as u128 => {}
        Some(c) => {
            return Err(SclbError::Capacity(format!(
                "{n_act}^{n_ctx} = {c} policies exceed the cap of {cap}"
            )))
        }
        None => {
            return Err(SclbError::Capacity(format!(
                "{n_act}^{n_ctx} policies exceed the cap of {cap}"
            )))
        }
    }
    let count = count.unwrap() as usize;
    let mut policies = Vec::with_capacity(count);
    let mut digits = vec![0usize; n_ctx];
    for _ in 0..count {
        policies.push(Policy::new(digits.clone(), n_act)?);
        for x in (0..n_ctx).rev() {
            digits[x] += 1;
            if digits[x] < n_act {
                break;
            }
            digits[x] = 0;
        }
    }
    PolicyClass::new(instance, policies)
}

/// `min_w max_k ||v_k||^2_{Sigma_w^{-1}}` over the columns `v_k` of `diffs`,
/// with `w` free (active) or marginal-constrained (passive).
pub(crate) fn difference_design(
    instance: &BanditInstance,
    diffs: DMatrix<f64>,
    passive: bool,
    shift: f64,
    opts: &DesignOptions,
) -> Result<(Design, SolveReport)> {
    if diffs.ncols() == 0 {
        return Err(SclbError::Domain("need at least one target vector".into()));
    }
    let layout = AtomLayout::new(instance, passive, None)?;
    let k = diffs.ncols();
    let problem = layout.with_targets(shift, diffs, vec![0; k], vec![1.0]);
    let sol = solve_minimax(&problem, opts)?;
    let design = Design::new(layout.to_pair_weights(&sol.y), shift)?;
    let report = SolveReport {
        objective_value: sol.value,
        certificate_gap: sol.gap,
        iterations: sol.iterations,
        status: sol.status,
    };
    Ok((design, report))
}

/// The design minimizing `max over pairs (pi, pi') of ||phi_pi - phi_pi'||^2_{Sigma_w^{-1}}`
/// with `Sigma_w = shift I + sum w phi phi^T`. Pairs with equal `phi` are ignored;
/// if all are, the uniform design with value 0 is returned.
pub fn transductive_design(
    instance: &BanditInstance,
    class: &PolicyClass,
    pairs: &[(usize, usize)],
    shift: f64,
    opts: &DesignOptions,
) -> Result<(Design, SolveReport)> {
    if pairs.is_empty() {
        return Err(SclbError::Domain("need at least one policy pair".into()));
    }
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in pairs {
        crate::error::check_index("policy", i.max(j), class.len())?;
        let v = class.phi(i) - class.phi(j);
        if v.iter().all(|x| *x == 0.0) {
            continue;
        }
        // v and -v have the same norm
        let canon = if v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0) { -v } else { v };
        if seen.insert(canon.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>()) {
            cols.push(canon);
        }
    }
    if cols.is_empty() {
        let design = Design::uniform(instance.n_pairs(), shift)?;
        return Ok((
            design,
            SolveReport {
                objective_value: 0.0,
                certificate_gap: 0.0,
                iterations: 0,
                status: crate::design::SolveStatus::Optimal,
            },
        ));
    }
    difference_design(instance, DMatrix::from_columns(&cols), false, shift, opts)
}

/// Aggregator turning one-sample gap estimates into a round estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregator {
    #[default]
    Mean,
    /// Catoni's M-estimator with `psi(x) = sign(x) ln(1 + |x| + x^2 / 2)`.
    Catoni,
}

/// How a round's samples are drawn from its design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Allocation {
    /// `n` i.i.d. draws from the design.
    #[default]
    Iid,
    /// Largest-remainder rounding of `n w`; the estimator then uses the
    /// covariance of the rounded allocation.
    Rounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RageConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub aggregator: Aggregator,
    pub allocation: Allocation,
    pub round_sample_cap: u64,
    pub design: DesignOptions,
}

impl RageConfig {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self {
            epsilon,
            delta,
            aggregator: Aggregator::Mean,
            allocation: Allocation::Iid,
            round_sample_cap: ROUND_SAMPLE_CAP,
            design: DesignOptions::with_tol(1e-4),
        }
    }

    pub fn aggregator(mut self, aggregator: Aggregator) -> Self {
        self.aggregator = aggregator;
        self
    }

    pub fn allocation(mut self, allocation: Allocation) -> Self {
        self.allocation = allocation;
        self
    }

    pub fn round_sample_cap(mut self, cap: u64) -> Self {
        self.round_sample_cap = cap;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RageStatus {
    Completed,
    /// Some round needed more samples than the cap and ran with the cap.
    BudgetCapped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub epsilon: f64,
    pub delta: f64,
    /// Transductive design value.
    pub design_value: f64,
    pub samples: u64,
    /// Surviving policies after the round.
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RageResult {
    /// Indices into the input class.
    pub survivors: Vec<usize>,
    pub rounds: Vec<RoundSummary>,
    pub total_samples: u64,
    pub status: RageStatus,
}

/// Runs `ceil(log2(1/epsilon))` elimination rounds. Round `l` solves the
/// transductive design over surviving pairs, draws
/// `n_l = ceil(V ln(1/delta_l) / eps_l^2)` samples, forms
/// `O_t = Sigma_w^{-1} phi_t r_t`, and drops every `pi'` with
/// `max_pi Cat(<phi_pi - phi_pi', O_t>) > eps_l`.
pub fn active_contextual_rage<R: Rng + ?Sized>(
    instance: &BanditInstance,
    class: &PolicyClass,
    config: &RageConfig,
    rng: &mut R,
) -> Result<RageResult> {
    let (eps, delta) = (config.epsilon, config.delta);
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(SclbError::Domain(format!(
            "epsilon and delta must lie in (0, 1), got {eps} and {delta}"
        )));
    }
    if class.is_empty() {
        return Err(SclbError::Domain("policy class is empty".into()));
    }
    let n_rounds = (1.0 / eps).log2().ceil().max(1.0) as usize;
    let mut alive: Vec<usize> = (0..class.len()).collect();
    let mut rounds = Vec::with_capacity(n_rounds);
    let mut total_samples = 0u64;
    let mut status = RageStatus::Completed;

    for l in 1..=n_rounds {
        let eps_l = 0.5f64.powi(l as i32);
        let delta_l = delta / (2.0 * (l * l) as f64 * class.len() as f64);
        let current = class.subset(&alive);
        let (group, reps) = current.groups();
        if reps.len() == 1 {
            rounds.push(RoundSummary {
                epsilon: eps_l,
                delta: delta_l,
                design_value: 0.0,
                samples: 0,
                survivors: alive.len(),
            });
            continue;
        }
        let pairs: Vec<(usize, usize)> = (0..reps.len())
            .flat_map(|a| (a + 1..reps.len()).map(move |b| (a, b)))
            .map(|(a, b)| (reps[a], reps[b]))
            .collect();
        let (design, report) = transductive_design(instance, &current, &pairs, RAGE_SHIFT, &config.design)?;
        let value = report.objective_value;
        let needed = (value * (1.0 / delta_l).ln() / (eps_l * eps_l)).ceil().max(1.0);
        let n = if needed > config.round_sample_cap as f64 {
            status = RageStatus::BudgetCapped;
            config.round_sample_cap
        } else {
            needed as u64
        };

        let (counts, design) = match config.allocation {
            Allocation::Iid => (sample_counts(&design, n, rng)?, design),
            Allocation::Rounded => {
                let counts = round_allocation(design.weights(), n);
                let w = counts.iter().map(|&c| c as f64 / n as f64).collect();
                (counts, Design::new(w, RAGE_SHIFT)?)
            }
        };
        let factor = covariance_of_design(instance, &design)?.factor()?;
        let samples = draw_rewards(instance, &counts, rng);
        let est = estimate_gaps(instance, &current, &reps, &factor, &samples, n, delta_l, config.aggregator);

        let mut next = Vec::with_capacity(alive.len());
        for (k, &orig) in alive.iter().enumerate() {
            let g = group[k];
            let worst = (0..reps.len()).map(|h| est[h][g]).fold(f64::NEG_INFINITY, f64::max);
            if worst <= eps_l {
                next.push(orig);
            }
        }
        alive = next;
        total_samples += n;
        rounds.push(RoundSummary {
            epsilon: eps_l,
            delta: delta_l,
            design_value: value,
            samples: n,
            survivors: alive.len(),
        });
    }
    Ok(RageResult {
        survivors: alive,
        rounds,
        total_samples,
        status,
    })
}

/// Largest-remainder rounding of `n w` to integer counts summing to `n`.
fn round_allocation(w: &[f64], n: u64) -> Vec<u64> {
    let scaled: Vec<f64> = w.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|v| v.floor() as u64).collect();
    let short = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(short as usize) {
        counts[j] += 1;
    }
    counts
}

/// `(pair, reward)` for every draw, pair-major.
fn draw_rewards<R: Rng + ?Sized>(instance: &BanditInstance, counts: &[u64], rng: &mut R) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (j, &c) in counts.iter().enumerate() {
        let (x, a) = instance.pair_of(j);
        for _ in 0..c {
            out.push((j, instance.sample_reward(x, a, rng)));
        }
    }
    out
}

/// `est[h][g]`: estimate of `V(group h) - V(group g)`.
#[allow(clippy::too_many_arguments)]
fn estimate_gaps(
    instance: &BanditInstance,
    current: &PolicyClass,
    reps: &[usize],
    factor: &CovFactor,
    samples: &[(usize, f64)],
    n: u64,
    delta_l: f64,
    aggregator: Aggregator,
) -> Vec<Vec<f64>> {
    let m = reps.len();
    // u_j = Sigma^{-1} phi_j, then s[h][j] = <phi_h, u_j>
    let solved: Vec<DVector<f64>> = (0..instance.n_pairs())
        .map(|j| factor.solve(&instance.pair_feature(j)))
        .collect();
    let s: Vec<Vec<f64>> = reps
        .iter()
        .map(|&k| solved.iter().map(|u| current.phi(k).dot(u)).collect())
        .collect();
    let mut est = vec![vec![0.0; m]; m];
    match aggregator {
        Aggregator::Mean => {
            let mut sums = vec![0.0; instance.n_pairs()];
            for &(j, r) in samples {
                sums[j] += r;
            }
            let psi: Vec<f64> = s
                .iter()
                .map(|row| row.iter().zip(&sums).map(|(a, b)| a * b).sum::<f64>() / n as f64)
                .collect();
            for h in 0..m {
                for g in 0..m {
                    est[h][g] = psi[h] - psi[g];
                }
            }
        }
        Aggregator::Catoni => {
            let mut values = vec![0.0; samples.len()];
            for h in 0..m {
                for g in (h + 1)..m {
                    for (v, &(j, r)) in values.iter_mut().zip(samples) {
                        *v = (s[h][j] - s[g][j]) * r;
                    }
                    let e = catoni_mean(&values, delta_l);
                    est[h][g] = e;
                    est[g][h] = -e;
                }
            }
        }
    }
    est
}

fn catoni_psi(x: f64) -> f64 {
    x.signum() * (1.0 + x.abs() + 0.5 * x * x).ln()
}

/// Catoni's mean estimate at confidence `delta`, scale set from the sample variance.
pub fn catoni_mean(values: &[f64], delta: f64) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var > 1e-300) {
        return mean;
    }
    let alpha = (2.0 * (1.0 / delta).ln() / (n as f64 * var)).sqrt();
    let score = |mu: f64| values.iter().map(|&v| catoni_psi(alpha * (v - mu))).sum::<f64>();
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // score is decreasing in mu, nonnegative at lo and nonpositive at hi
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Active and passive complexity measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoValues {
    pub active: f64,
    pub passive: f64,
    pub active_report: SolveReport,
    pub passive_report: SolveReport,
}

/// `rho = min_w max_{pi != pi*} ||phi_pi - phi_pi*||^2_{Sigma_w^{-1}} / max(eps, gap_pi)^2`
/// with `gap_pi = V(pi*) - V(pi)`; `w` ranges over all designs (active) or
/// designs with context marginal `p` (passive).
pub fn rho_values(instance: &BanditInstance, epsilon: f64, opts: &DesignOptions) -> Result<RhoValues> {
    if !(epsilon > 0.0) {
        return Err(SclbError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let class = enumerate_policies(instance, POLICY_CAP)?;
    let star = instance.optimal_policy();
    let phi_star = policy_feature(instance, &star)?;
    let v_star = policy_value(instance, &star);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (k, pi) in class.policies().iter().enumerate() {
        let diff = class.phi(k) - &phi_star;
        if *pi == star || diff.iter().all(|x| *x == 0.0) {
            continue;
        }
        let gap = (v_star - policy_value(instance, pi)).max(0.0);
        let v = diff / epsilon.max(gap);
        if seen.insert(v.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<_>>()) {
            cols.push(v);
        }
    }
    if cols.is_empty() {
        let zero = SolveReport {
            objective_value: 0.0,
            certificate_gap: 0.0,
            iterations: 0,
            status: crate::design::SolveStatus::Optimal,
        };
        return Ok(RhoValues {
            active: 0.0,
            passive: 0.0,
            active_report: zero,
            passive_report: zero,
        });
    }
    let targets = DMatrix::from_columns(&cols);
    let (_, act) = difference_design(instance, targets.clone(), false, RAGE_SHIFT, opts)?;
    let (_, pas) = difference_design(instance, targets, true, RAGE_SHIFT, opts)?;
    Ok(RhoValues {
        active: act.objective_value,
        passive: pas.objective_value,
        active_report: act,
        passive_report: pas,
    })
}
