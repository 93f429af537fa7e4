//! Scoring: exact simple regret, the best-constant baseline, Monte-Carlo
//! checks of the passive barrier and of covariance concentration, and
//! sample-matching between regret curves.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, RngExt};
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{check_index, Result, SclbError};
use crate::explore::sample_counts;
use crate::linalg::{covariance_of_counts, covariance_of_design, CovFactor};
use crate::model::{BanditInstance, Design, Policy};
use crate::ridge::gamma_with_factor;
use crate::seed;

/// Default ridge parameter of the barrier estimate, standing in for `lambda -> 0`.
pub const BARRIER_LAMBDA: f64 = 1e-8;

/// `E_{x ~ p}[max_a mu(x, a) - mu(x, pi(x))]`, by enumeration.
pub fn simple_regret(instance: &BanditInstance, policy: &Policy) -> Result<f64> {
    if policy.n_contexts() != instance.n_contexts() {
        return Err(SclbError::Shape(format!(
            "policy covers {} contexts, instance has {}",
            policy.n_contexts(),
            instance.n_contexts()
        )));
    }
    let mut regret = 0.0;
    for (x, &p) in instance.context_dist().iter().enumerate() {
        let a = policy.action(x);
        check_index("action", a, instance.n_actions())?;
        if p == 0.0 {
            continue;
        }
        let best = (0..instance.n_actions())
            .map(|b| instance.mean_reward(x, b))
            .fold(f64::NEG_INFINITY, f64::max);
        regret += p * (best - instance.mean_reward(x, a)).max(0.0);
    }
    Ok(regret)
}

/// Regret of the best policy that plays one action in every context.
pub fn naive_baseline_regret(instance: &BanditInstance) -> Result<f64> {
    let mut best = f64::INFINITY;
    for a in 0..instance.n_actions() {
        let r = simple_regret(instance, &Policy::constant(instance.n_contexts(), a))?;
        best = best.min(r);
    }
    Ok(best)
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

/// A non-adaptive action rule for passively drawn contexts: the action at
/// step `t` may depend on `t`, `x` and fresh randomness, never on rewards.
pub trait ActionRule: Sync {
    fn action(&self, t: usize, x: usize, rng: &mut dyn Rng) -> usize;
}

/// Uniformly random actions.
#[derive(Debug, Clone, Copy)]
pub struct UniformActions {
    pub n_actions: usize,
}

impl ActionRule for UniformActions {
    fn action(&self, _t: usize, _x: usize, rng: &mut dyn Rng) -> usize {
        rng.random_range(0..self.n_actions)
    }
}

/// A deterministic policy played at every step.
impl ActionRule for Policy {
    fn action(&self, _t: usize, x: usize, _rng: &mut dyn Rng) -> usize {
        Policy::action(self, x)
    }
}

/// A fixed conditional action distribution per context.
#[derive(Debug, Clone)]
pub struct StochasticActions {
    per_context: Vec<WeightedIndex<f64>>,
}

impl StochasticActions {
    /// Conditional distributions `w(x, .) / sum_a w(x, a)`; contexts without
    /// mass get uniform actions.
    pub fn from_design(instance: &BanditInstance, design: &Design) -> Result<Self> {
        if design.len() != instance.n_pairs() {
            return Err(SclbError::Shape(format!(
                "design has {} weights, instance has {} pairs",
                design.len(),
                instance.n_pairs()
            )));
        }
        let per_context = design
            .weights()
            .chunks(instance.n_actions())
            .map(|row| {
                let uniform = vec![1.0; row.len()];
                let w = if row.iter().sum::<f64>() > 0.0 { row } else { &uniform[..] };
                WeightedIndex::new(w).map_err(|e| SclbError::Domain(format!("action weights: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_context })
    }
}

impl ActionRule for StochasticActions {
    fn action(&self, _t: usize, x: usize, rng: &mut dyn Rng) -> usize {
        self.per_context[x].sample(rng)
    }
}

/// Monte-Carlo estimate of `E_S[Gamma(S)]` under passive contexts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEstimate {
    pub gamma: MeanStderr,
    /// `T * Gamma`, to compare against `d`.
    pub scaled: MeanStderr,
    pub horizon: usize,
}

/// `Gamma` of `Sigma = lambda I + sum_j counts[j] phi_j phi_j^T`.
pub fn gamma_of_counts(instance: &BanditInstance, counts: &[f64], lambda: f64) -> Result<f64> {
    let cov = covariance_of_counts(instance, counts, lambda)?;
    Ok(gamma_with_factor(instance, &cov.factor()?))
}

/// Draws `trials` logs of `T` passive samples `x_t ~ p, a_t ~ rule(t, x_t)` and
/// averages `Gamma(S)` with ridge `lambda`. Trial `i` uses the stream
/// derived from `(seed, i)`, so results do not depend on thread count.
pub fn barrier_estimate(
    instance: &BanditInstance,
    rule: &dyn ActionRule,
    horizon: usize,
    trials: usize,
    lambda: f64,
    seed: u64,
) -> Result<BarrierEstimate> {
    if horizon == 0 || trials == 0 {
        return Err(SclbError::Domain("need T >= 1 and at least one trial".into()));
    }
    if !(lambda > 0.0) {
        return Err(SclbError::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let contexts = WeightedIndex::new(instance.context_dist())
        .map_err(|e| SclbError::Domain(format!("context distribution: {e}")))?;
    let gammas = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, &[i as u64]);
            let mut counts = vec![0.0; instance.n_pairs()];
            for t in 0..horizon {
                let x = contexts.sample(&mut rng);
                let a = rule.action(t, x, &mut rng);
                check_index("action", a, instance.n_actions())?;
                counts[instance.pair_index(x, a)] += 1.0;
            }
            gamma_of_counts(instance, &counts, lambda)
        })
        .collect::<Result<Vec<f64>>>()?;
    let scaled: Vec<f64> = gammas.iter().map(|g| g * horizon as f64).collect();
    Ok(BarrierEstimate {
        gamma: MeanStderr::of(&gammas),
        scaled: MeanStderr::of(&scaled),
        horizon,
    })
}

/// `ceil(512 d^2 / alpha^2 * ln(4d / delta))` samples.
pub fn concentration_horizon(d: usize, alpha: f64, delta: f64) -> Result<u64> {
    if d == 0 || !(alpha > 0.0 && alpha <= 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(SclbError::Domain(format!(
            "need d >= 1, alpha in (0, 1], delta in (0, 1); got d = {d}, alpha = {alpha}, delta = {delta}"
        )));
    }
    let d = d as f64;
    Ok((512.0 * d * d / (alpha * alpha) * (4.0 * d / delta).ln()).ceil() as u64)
}

/// Outcome of [`concentration_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationReport {
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// `delta / 2` plus three binomial standard errors.
    pub threshold: f64,
    pub passed: bool,
    /// Extreme eigenvalues of `Sigma_w^{-1/2} Sigma_hat Sigma_w^{-1/2}` over all trials.
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// The sample size the sandwich is guaranteed for.
    pub recommended_horizon: u64,
}

/// Checks `(1/2) Sigma_w <= Sigma_hat <= (3/2) Sigma_w` over `trials` draws of
/// `T` i.i.d. pairs from `design`, where `Sigma_hat` is the empirical second
/// moment plus the design's shift.
pub fn concentration_check(
    instance: &BanditInstance,
    design: &Design,
    horizon: u64,
    trials: usize,
    alpha: f64,
    delta: f64,
    seed: u64,
) -> Result<ConcentrationReport> {
    if horizon == 0 || trials == 0 {
        return Err(SclbError::Domain("need T >= 1 and at least one trial".into()));
    }
    let recommended_horizon = concentration_horizon(instance.dim(), alpha, delta)?;
    let l = covariance_of_design(instance, design)?.factor()?;
    let eig = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed, &[i as u64]);
            let counts = sample_counts(design, horizon, &mut rng)?;
            let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / horizon as f64).collect();
            let hat = covariance_of_counts(instance, &freq, design.shift())?;
            Ok(relative_spectrum(&l, hat.matrix()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let failures = eig.iter().filter(|(lo, hi)| *lo < 0.5 || *hi > 1.5).count();
    let failure_rate = failures as f64 / trials as f64;
    let base = delta / 2.0;
    let threshold = base + 3.0 * (base * (1.0 - base) / trials as f64).sqrt();
    Ok(ConcentrationReport {
        trials,
        failures,
        failure_rate,
        threshold,
        passed: failure_rate <= threshold,
        min_eigenvalue: eig.iter().map(|e| e.0).fold(f64::INFINITY, f64::min),
        max_eigenvalue: eig.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max),
        recommended_horizon,
    })
}

/// Extreme eigenvalues of `L^{-1} M L^{-T}`.
fn relative_spectrum(l: &CovFactor, m: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let left = l.whiten_columns(m);
    let both = l.whiten_columns(&left.transpose());
    let sym = (&both + both.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// Nonincreasing least-squares fit by pool-adjacent-violators.
pub fn isotonic_nonincreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 2];
            let (s2, n2) = blocks[blocks.len() - 1];
            if s1 / n1 as f64 >= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

/// Budget a baseline needs to match one reference budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedBudget {
    pub reference: u64,
    pub baseline: u64,
    /// The baseline never matched; `baseline` is its largest budget.
    pub saturated: bool,
}

/// For each reference budget, the smallest baseline budget whose smoothed
/// mean regret is at most the reference's smoothed mean regret. Both curves
/// are `(T, mean regret)` tables and are smoothed by isotonic regression.
pub fn match_samples(reference: &[(u64, f64)], baseline: &[(u64, f64)]) -> Result<Vec<MatchedBudget>> {
    let prepare = |curve: &[(u64, f64)], what: &str| -> Result<Vec<(u64, f64)>> {
        if curve.is_empty() {
            return Err(SclbError::Domain(format!("{what} curve is empty")));
        }
        let mut c = curve.to_vec();
        c.sort_by_key(|e| e.0);
        if c.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SclbError::Domain(format!("{what} curve repeats a budget")));
        }
        if c.iter().any(|e| !e.1.is_finite()) {
            return Err(SclbError::Domain(format!("{what} curve has a non-finite regret")));
        }
        let smooth = isotonic_nonincreasing(&c.iter().map(|e| e.1).collect::<Vec<_>>());
        Ok(c.iter().zip(smooth).map(|(e, r)| (e.0, r)).collect())
    };
    let reference = prepare(reference, "reference")?;
    let baseline = prepare(baseline, "baseline")?;
    let max_budget = baseline.last().unwrap().0;
    Ok(reference
        .iter()
        .map(|&(t, r)| {
            let slack = 1e-12 * r.abs().max(1e-300);
            match baseline.iter().find(|b| b.1 <= r + slack) {
                Some(&(tb, _)) => MatchedBudget {
                    reference: t,
                    baseline: tb,
                    saturated: false,
                },
                None => MatchedBudget {
                    reference: t,
                    baseline: max_budget,
                    saturated: true,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{active_design, DesignOptions, DesignProblem};
    use crate::instances::{hard_instance, random_instance};
    use crate::model::RewardSource;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn regret_examples() {
        let inst = hard_instance(2, 3).unwrap();
        assert_eq!(simple_regret(&inst, &inst.optimal_policy()).unwrap(), 0.0);
        // constant action 1 misses only the rare contexts, each losing 1
        assert_eq!(simple_regret(&inst, &Policy::constant(2, 1)).unwrap(), 0.25);
        for d in [3usize, 5, 10] {
            let inst = hard_instance(d, 4).unwrap();
            // the optimal policy is itself constant, every other constant loses (d-1)/d^2
            assert_eq!(naive_baseline_regret(&inst).unwrap(), 0.0);
            let expected = (d - 1) as f64 / (d * d) as f64;
            for a in 1..4 {
                let r = simple_regret(&inst, &Policy::constant(d, a)).unwrap();
                assert_relative_eq!(r, expected, epsilon = 1e-15);
            }
        }
        let one = BanditInstance::new(
            3,
            1,
            DMatrix::identity(3, 3),
            vec![0.2, 0.3, 0.5],
            RewardSource::Linear {
                theta_star: DVector::from_vec(vec![1.0, -1.0, 2.0]),
                noise_std: 1.0,
            },
        )
        .unwrap();
        assert_eq!(simple_regret(&one, &Policy::constant(3, 0)).unwrap(), 0.0);
        let tab = BanditInstance::new(
            1,
            2,
            DMatrix::identity(2, 2),
            vec![1.0],
            RewardSource::Tabular {
                table: DMatrix::from_row_slice(1, 2, &[0.3, 0.7]),
            },
        )
        .unwrap();
        assert_eq!(naive_baseline_regret(&tab).unwrap(), 0.0);
        assert!(simple_regret(&tab, &Policy::constant(2, 0)).is_err());
    }

    #[test]
    fn single_pair_barrier_is_one_over_t() {
        let inst = BanditInstance::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            RewardSource::Tabular {
                table: DMatrix::zeros(1, 1),
            },
        )
        .unwrap();
        let est = barrier_estimate(&inst, &UniformActions { n_actions: 1 }, 50, 5, 1e-8, 0).unwrap();
        assert_relative_eq!(est.gamma.mean, 1.0 / 50.0, max_relative = 1e-6);
        assert_eq!(est.gamma.stderr, 0.0);
    }

    #[test]
    fn orthonormal_barrier_respects_d_over_t() {
        let d = 4;
        let inst = BanditInstance::new(
            d,
            1,
            DMatrix::identity(d, d),
            vec![0.25; 4],
            RewardSource::Tabular {
                table: DMatrix::zeros(d, 1),
            },
        )
        .unwrap();
        let t = d * 100;
        let est = barrier_estimate(&inst, &UniformActions { n_actions: 1 }, t, 200, 1e-8, 3).unwrap();
        let bound = d as f64 / t as f64;
        assert!(est.gamma.mean >= bound - 3.0 * est.gamma.stderr);
    }

    #[test]
    fn barrier_is_thread_count_independent() {
        let inst = hard_instance(3, 3).unwrap();
        let rule = UniformActions { n_actions: 3 };
        let a = barrier_estimate(&inst, &rule, 100, 16, 1e-8, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| barrier_estimate(&inst, &rule, 100, 16, 1e-8, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn point_mass_sandwich_is_exact() {
        let inst = BanditInstance::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            vec![1.0],
            RewardSource::Tabular {
                table: DMatrix::zeros(1, 1),
            },
        )
        .unwrap();
        let w = Design::point_mass(1, 0, 1e-3).unwrap();
        for t in [1, 7, 1000] {
            let r = concentration_check(&inst, &w, t, 20, 0.5, 0.1, 1).unwrap();
            assert!(r.passed);
            assert_eq!(r.failures, 0);
            assert_relative_eq!(r.min_eigenvalue, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_samples_fail_the_sandwich() {
        let inst = hard_instance(6, 2).unwrap();
        let w = Design::uniform(inst.n_pairs(), 1e-9).unwrap();
        let r = concentration_check(&inst, &w, 1, 50, 0.5, 0.1, 2).unwrap();
        assert!(!r.passed);
        assert_eq!(r.failures, 50);
    }

    #[test]
    fn smoothed_design_concentrates_at_recommended_horizon() {
        let inst = hard_instance(3, 3).unwrap();
        let t0 = concentration_horizon(3, 0.5, 0.1).unwrap();
        // 512 * 9 * 4 * ln(120)
        assert_eq!(t0, (18_432.0f64 * 120f64.ln()).ceil() as u64);
        let problem = DesignProblem::new(&inst, 1e-6, t0 as usize).alpha(0.5);
        let (w, _) = active_design(&problem, &DesignOptions::default()).unwrap();
        let r = concentration_check(&inst, &w, t0, 100, 0.5, 0.1, 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.min_eigenvalue > 0.5 && r.max_eigenvalue < 1.5);
    }

    #[test]
    fn isotonic_examples() {
        assert_eq!(isotonic_nonincreasing(&[3.0, 2.0, 1.0]), vec![3.0, 2.0, 1.0]);
        assert_eq!(isotonic_nonincreasing(&[1.0, 3.0]), vec![2.0, 2.0]);
        assert_eq!(
            isotonic_nonincreasing(&[4.0, 1.0, 2.0, 3.0, 0.0]),
            vec![4.0, 2.0, 2.0, 2.0, 0.0]
        );
        assert!(isotonic_nonincreasing(&[]).is_empty());
    }

    #[test]
    fn matching_examples() {
        let budgets = [100u64, 200, 400, 800, 1600, 3200, 6400];
        let curve = |c: f64| -> Vec<(u64, f64)> {
            budgets.iter().map(|&t| (t, c / (t as f64).sqrt())).collect()
        };
        let same = match_samples(&curve(1.0), &curve(1.0)).unwrap();
        assert!(same.iter().all(|m| m.reference == m.baseline && !m.saturated));

        // regret c sqrt(d) / sqrt(T') matches c / sqrt(T) at T' = d T
        let d = 4.0f64;
        let m = match_samples(&curve(1.0), &curve(d.sqrt())).unwrap();
        for e in &m[..5] {
            assert_eq!(e.baseline, 4 * e.reference);
            assert!(!e.saturated);
        }
        assert!(m[5].saturated && m[6].saturated);
        assert_eq!(m[6].baseline, 6400);

        let worse: Vec<(u64, f64)> = curve(1.0).iter().map(|&(t, r)| (t, r + 1.0)).collect();
        assert!(match_samples(&curve(1.0), &worse).unwrap().iter().all(|m| m.saturated));

        // a noisy bump is smoothed away before inversion
        let noisy = vec![(1, 0.5), (2, 0.3), (3, 0.35), (4, 0.1)];
        // raw curve would answer 2; smoothed it reads 0.5, 0.325, 0.325, 0.1
        let m = match_samples(&[(10, 0.31)], &noisy).unwrap();
        assert_eq!(m[0].baseline, 4);
        assert!(match_samples(&[], &noisy).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn regret_is_nonnegative(seed in 0u64..1000) {
            let mut rng = seed::rng(seed, &[]);
            let inst = random_instance(3, 6, 4, 1.0, &mut rng).unwrap();
            prop_assert_eq!(simple_regret(&inst, &inst.optimal_policy()).unwrap(), 0.0);
            for _ in 0..50 {
                let actions = (0..6).map(|_| rng.random_range(0..4)).collect();
                let pi = Policy::new(actions, 4).unwrap();
                prop_assert!(simple_regret(&inst, &pi).unwrap() >= 0.0);
            }
        }

        #[test]
        fn isotonic_output_is_monotone(v in proptest::collection::vec(-5.0f64..5.0, 0..30)) {
            let fit = isotonic_nonincreasing(&v);
            prop_assert_eq!(fit.len(), v.len());
            prop_assert!(fit.windows(2).all(|w| w[0] >= w[1] - 1e-12));
            let (s1, s2): (f64, f64) = (v.iter().sum(), fit.iter().sum());
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}
