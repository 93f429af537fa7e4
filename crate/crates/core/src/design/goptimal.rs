//! G-optimal design by Frank-Wolfe on `log det` with away steps.
//!
//! Iterates run on the unshifted covariance `sum q_g a_g a_g^T`, whose
//! maximal norm is at least `d` with equality exactly at the optimum; the
//! reported value uses the shifted covariance and is never larger.

use crate::error::{Result, SclbError};
use crate::linalg::{weighted_gram, CovFactor};
use crate::model::{ridge_shift, BanditInstance, Design};

use super::minimax::AtomLayout;
use super::{SolveReport, SolveStatus};

/// Default iteration cap `max(ceil(50 d ln d), 100)`.
pub fn default_g_optimal_cap(d: usize) -> usize {
    let d = d as f64;
    ((50.0 * d * d.ln()).ceil() as usize).max(100)
}

/// Trace entry: best max-norm found so far after each iteration.
pub type MaxNormTrace = Vec<f64>;

/// G-optimal design with the default iteration cap.
pub fn g_optimal_design(
    instance: &BanditInstance,
    lambda: f64,
    horizon: usize,
    tol: f64,
) -> Result<(Design, SolveReport)> {
    let (design, report, _) = g_optimal_design_traced(
        instance,
        lambda,
        horizon,
        tol,
        default_g_optimal_cap(instance.dim()),
    )?;
    Ok((design, report))
}

/// G-optimal design with an explicit cap, also returning the incumbent trace.
pub fn g_optimal_design_traced(
    instance: &BanditInstance,
    lambda: f64,
    horizon: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Design, SolveReport, MaxNormTrace)> {
    let shift = ridge_shift(lambda, horizon)?;
    if !(tol >= 0.0) {
        return Err(SclbError::Domain(format!("tolerance must be nonnegative, got {tol}")));
    }
    let layout = AtomLayout::new(instance, false, None)?;
    let atoms = &layout.atoms;
    let n = layout.n_atoms();
    let d = instance.dim() as f64;

    let mut q = vec![1.0 / n as f64; n];
    let norms_at = |q: &[f64]| -> Result<Vec<f64>> {
        let factor = CovFactor::new(weighted_gram(atoms, q, 0.0)).map_err(|_| {
            SclbError::Infeasible("features do not span the feature space".into())
        })?;
        Ok(factor.column_norms_sq(atoms))
    };

    let mut best_q = q.clone();
    let mut best = f64::INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    loop {
        let g = norms_at(&q)?;
        let (k_max, g_max) = argmax(&g);
        if g_max < best {
            best = g_max;
            best_q.clone_from(&q);
        }
        trace.push(best);
        if g_max <= d * (1.0 + tol) {
            status = SolveStatus::Optimal;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        // least useful support atom for the away step
        let (k_min, g_min) = q
            .iter()
            .zip(&g)
            .enumerate()
            .filter(|(_, (w, _))| **w > 0.0)
            .map(|(k, (_, v))| (k, *v))
            .fold((usize::MAX, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });

        if g_max - d >= d - g_min || k_min == usize::MAX || q[k_min] >= 1.0 {
            let gamma = (g_max / d - 1.0) / (g_max - 1.0);
            q.iter_mut().for_each(|w| *w *= 1.0 - gamma);
            q[k_max] += gamma;
        } else {
            let cap = q[k_min] / (1.0 - q[k_min]);
            let gamma = if g_min <= 1.0 {
                cap
            } else {
                ((d - g_min) / (d * (g_min - 1.0))).min(cap)
            };
            q.iter_mut().for_each(|w| *w *= 1.0 + gamma);
            q[k_min] -= gamma;
            if gamma == cap {
                q[k_min] = 0.0;
            }
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|w| *w /= total);
        }
    }

    let design = Design::new(layout.to_pair_weights(&best_q), shift)?;
    let shifted = CovFactor::new(weighted_gram(atoms, &best_q, shift))?
        .column_norms_sq(atoms)
        .into_iter()
        .fold(0.0, f64::max);
    if status == SolveStatus::MaxIterations && best <= 2.0 * d {
        status = SolveStatus::ToleranceReached;
    }
    let report = SolveReport {
        objective_value: shifted,
        certificate_gap: (best - d).max(0.0),
        iterations,
        status,
    };
    Ok((design, report, trace))
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &x)| if x > acc.1 { (k, x) } else { acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::design_objective;
    use crate::instances::{hard_instance, random_instance};
    use crate::seed;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn orthonormal_features_give_uniform_design() {
        let inst = BanditInstance::new(
            1,
            3,
            DMatrix::identity(3, 3),
            vec![1.0],
            crate::model::RewardSource::Tabular {
                table: DMatrix::zeros(1, 3),
            },
        )
        .unwrap();
        let (q, report) = g_optimal_design(&inst, 0.0, 1, 1e-9).unwrap();
        for &w in q.weights() {
            assert_relative_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(report.objective_value, 3.0, epsilon = 1e-9);
        assert_eq!(report.status, SolveStatus::Optimal);
    }

    #[test]
    fn hard_instance_mass_on_basis_pairs() {
        for d in [2, 5, 10] {
            let inst = hard_instance(d, 4).unwrap();
            let (q, report) = g_optimal_design(&inst, 0.0, 1, 1e-9).unwrap();
            for x in 0..d {
                assert_relative_eq!(q.weight(inst.pair_index(x, 0)), 1.0 / d as f64, epsilon = 1e-6);
            }
            assert!(report.objective_value <= d as f64 * (1.0 + 1e-6));
            let obj = design_objective(&inst, &q).unwrap();
            assert_relative_eq!(obj, d as f64, max_relative = 1e-6);
        }
    }

    #[test]
    fn random_instances_meet_contract_and_trace_is_monotone() {
        let mut rng = seed::rng(3, &[]);
        for _ in 0..10 {
            let inst = random_instance(5, 4, 3, 1.0, &mut rng).unwrap();
            let cap = default_g_optimal_cap(5);
            let (_, report, trace) = g_optimal_design_traced(&inst, 0.0, 1, 1e-6, cap).unwrap();
            assert!(report.objective_value <= 10.0);
            assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        }
    }
}
