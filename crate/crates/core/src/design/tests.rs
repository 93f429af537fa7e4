use super::*;
use crate::instances::{hard_instance, random_instance};
use crate::model::RewardSource;
use crate::seed;
use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sqrt_p_sum(inst: &BanditInstance) -> f64 {
    inst.context_dist().iter().map(|p| p.sqrt()).sum()
}

fn solve(inst: &BanditInstance, passive: bool, opts: &DesignOptions) -> (Design, SolveReport) {
    let mut problem = DesignProblem::new(inst, 1e-6, 1000);
    if passive {
        problem = problem.passive();
    }
    active_design(&problem, opts).unwrap()
}

#[test]
fn hard_instance_matches_closed_form() {
    for d in [2, 5, 10] {
        for a in [2, 10] {
            let inst = hard_instance(d, a).unwrap();
            let (w, report) = solve(&inst, false, &DesignOptions::default());
            let s = sqrt_p_sum(&inst);
            assert_relative_eq!(report.objective_value, s * s, max_relative = 1e-5);
            assert!(report.objective_value <= 4.0);
            assert_eq!(report.status, SolveStatus::Optimal);
            for x in 0..d {
                let z = inst.context_dist()[x].sqrt() / s;
                assert!((w.weight(inst.pair_index(x, 0)) - z).abs() < 1e-4);
            }
        }
    }
    // d = 2: (sqrt(3/4) + sqrt(1/4))^2 = 1 + sqrt(3)/2
    let inst = hard_instance(2, 2).unwrap();
    let (_, report) = solve(&inst, false, &DesignOptions::default());
    assert_relative_eq!(report.objective_value, 1.866_025_403_784_438_6, max_relative = 1e-5);
}

#[test]
fn sqrt_p_design_objective() {
    let inst = hard_instance(2, 2).unwrap();
    let s = sqrt_p_sum(&inst);
    let w = Design::new(
        vec![0.75f64.sqrt() / s, 0.0, 0.25f64.sqrt() / s, 0.0],
        0.0,
    )
    .unwrap();
    assert_relative_eq!(design_objective(&inst, &w).unwrap(), s * s, max_relative = 1e-14);
}

#[test]
fn unit_covariance_objective_is_one() {
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
    let w = Design::point_mass(1, 0, 0.0).unwrap();
    assert_eq!(design_objective(&inst, &w).unwrap(), 1.0);
}

#[test]
fn passive_hard_instance_matches_brute_force() {
    for d in [2usize, 5, 10] {
        let inst = hard_instance(d, 3).unwrap();
        let (w, report) = solve(&inst, true, &DesignOptions::default());
        // every rare context keeps a fraction s on e_x and sends the rest to e_0
        let dd = (d * d) as f64;
        let p0 = 1.0 - (d as f64 - 1.0) / dd;
        let shift = 1e-6 / 1000.0;
        let family = |s: f64| {
            let s00 = p0 + (1.0 - s) * (d as f64 - 1.0) / dd + shift;
            let sxx = s / dd + shift;
            p0 / s00 + (d as f64 - 1.0) / dd * (1.0 / sxx).max(1.0 / s00)
        };
        let brute = (1..=10_000)
            .map(|k| family(k as f64 / 10_000.0))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(report.objective_value, brute, max_relative = 1e-5);
        assert_relative_eq!(report.objective_value, d as f64, max_relative = 1e-4);
        let marg = w.context_marginal(inst.n_actions());
        for (m, p) in marg.iter().zip(inst.context_dist()) {
            assert_relative_eq!(m, p, epsilon = 1e-12);
        }
    }
}

#[test]
fn passive_dominates_active_and_coincides_for_one_context() {
    let mut rng = seed::rng(21, &[]);
    for _ in 0..5 {
        let inst = random_instance(4, 3, 4, 1.0, &mut rng).unwrap().normalized();
        let (_, act) = solve(&inst, false, &DesignOptions::default());
        let (_, pas) = solve(&inst, true, &DesignOptions::default());
        assert!(pas.objective_value >= act.objective_value * (1.0 - 1e-5));
        assert!(act.objective_value <= inst.dim() as f64 * (1.0 + 1e-5));
    }
    let inst = random_instance(3, 1, 6, 1.0, &mut rng).unwrap().normalized();
    let (_, act) = solve(&inst, false, &DesignOptions::default());
    let (_, pas) = solve(&inst, true, &DesignOptions::default());
    assert_relative_eq!(act.objective_value, pas.objective_value, max_relative = 1e-5);
}

#[test]
fn floors_are_respected_and_smoothing_chain_holds() {
    let mut rng = seed::rng(8, &[]);
    for _ in 0..5 {
        let inst = random_instance(4, 5, 3, 1.0, &mut rng).unwrap().normalized();
        let opts = DesignOptions::default();
        let (_, c_b) = active_design(&DesignProblem::new(&inst, 1e-6, 1000), &opts).unwrap();
        let problem = DesignProblem::new(&inst, 1e-6, 1000).alpha(0.5);
        let floors = problem.resolved_floors(&opts).unwrap().unwrap();
        let (w, report) = active_design(&problem, &opts).unwrap();
        for (wj, hj) in w.weights().iter().zip(&floors) {
            assert!(*wj >= hj - 1e-9);
        }
        // smoothed optimum is within 1/(1 - alpha) of C_B
        assert!(report.objective_value <= 2.0 * c_b.objective_value * (1.0 + 1e-6));
        assert!(report.objective_value <= 4.0 * c_b.objective_value);
    }
}

#[test]
fn infeasible_floors_are_rejected() {
    let inst = hard_instance(3, 2).unwrap();
    let h = vec![0.3; 6];
    let r = active_design(
        &DesignProblem::new(&inst, 1e-6, 10).lower_bounds(h),
        &DesignOptions::default(),
    );
    assert!(matches!(r, Err(SclbError::Infeasible(_))));
    // passive: context 2 has p = 1/9 but floors demand 0.2
    let mut h = vec![0.0; 6];
    h[4] = 0.2;
    let r = passive_design(
        &DesignProblem::new(&inst, 1e-6, 10).lower_bounds(h),
        &DesignOptions::default(),
    );
    assert!(matches!(r, Err(SclbError::Infeasible(_))));
}

#[test]
fn permutation_of_contexts_leaves_values_unchanged() {
    let mut rng = seed::rng(4, &[]);
    let inst = random_instance(3, 4, 2, 1.0, &mut rng).unwrap().normalized();
    let perm = [2usize, 0, 3, 1];
    let cols = inst.feature_matrix();
    let mut permuted = DMatrix::zeros(cols.nrows(), cols.ncols());
    let mut p = vec![0.0; 4];
    for (new_x, &old_x) in perm.iter().enumerate() {
        p[new_x] = inst.context_dist()[old_x];
        for a in 0..2 {
            permuted.set_row(new_x * 2 + a, &cols.row(old_x * 2 + a));
        }
    }
    let other = BanditInstance::new(4, 2, permuted, p, inst.reward_source().clone()).unwrap();
    let (_, r1) = solve(&inst, false, &DesignOptions::with_tol(1e-9));
    let (_, r2) = solve(&other, false, &DesignOptions::with_tol(1e-9));
    assert_relative_eq!(r1.objective_value, r2.objective_value, max_relative = 1e-7);

    // fixed design, permuted consistently: exact agreement
    let w: Vec<f64> = (0..8).map(|j| (j + 1) as f64 / 36.0).collect();
    let mut wp = vec![0.0; 8];
    for (new_x, &old_x) in perm.iter().enumerate() {
        for a in 0..2 {
            wp[new_x * 2 + a] = w[old_x * 2 + a];
        }
    }
    let f1 = design_objective(&inst, &Design::new(w, 1e-3).unwrap()).unwrap();
    let f2 = design_objective(&other, &Design::new(wp, 1e-3).unwrap()).unwrap();
    assert_relative_eq!(f1, f2, max_relative = 1e-10);
}

#[test]
fn mixing_examples() {
    let a = Design::new(vec![0.2, 0.8], 0.1).unwrap();
    let b = Design::new(vec![0.6, 0.4], 0.1).unwrap();
    assert_eq!(mix_designs(&a, &b, 0.0).unwrap(), a);
    assert_eq!(mix_designs(&a, &b, 1.0).unwrap(), b);
    let same = mix_designs(&b, &b, 0.3).unwrap();
    for (x, y) in same.weights().iter().zip(b.weights()) {
        assert_relative_eq!(x, y, epsilon = 1e-15);
    }
    let m = mix_designs(&a, &b, 0.25).unwrap();
    assert_relative_eq!(m.weight(0), 0.3, epsilon = 1e-15);
}

#[cfg(feature = "sdp")]
#[test]
fn backends_agree_on_small_instances() {
    let mut rng = seed::rng(99, &[]);
    for i in 0..20usize {
        let d: usize = 2 + i % 4;
        let n_contexts = 2 + i % 3;
        let n_actions = (d + 1).div_ceil(n_contexts).max(2) + i % 3;
        let inst = random_instance(d, n_contexts, n_actions, 1.0, &mut rng)
            .unwrap()
            .normalized();
        assert!(inst.n_pairs() <= 30);
        let passive = i % 4 == 3;
        let (_, fo) = solve(&inst, passive, &DesignOptions::default());
        let (_, sdp) = solve(&inst, passive, &DesignOptions::default().backend(Backend::Sdp));
        assert_relative_eq!(fo.objective_value, sdp.objective_value, max_relative = 1e-2);
    }
    let inst = hard_instance(3, 2).unwrap();
    let (_, sdp) = solve(&inst, false, &DesignOptions::default().backend(Backend::Sdp));
    let s = sqrt_p_sum(&inst);
    assert_relative_eq!(sdp.objective_value, s * s, max_relative = 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn objective_is_midpoint_convex(
        a in proptest::collection::vec(0.01f64..1.0, 8),
        b in proptest::collection::vec(0.01f64..1.0, 8),
    ) {
        let mut rng = seed::rng(17, &[]);
        let inst = random_instance(3, 4, 2, 1.0, &mut rng).unwrap();
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            Design::new(v.iter().map(|x| x / s).collect(), 1e-3).unwrap()
        };
        let (w1, w2) = (norm(a), norm(b));
        let mid = mix_designs(&w1, &w2, 0.5).unwrap();
        let f = |w: &Design| design_objective(&inst, w).unwrap();
        prop_assert!(f(&mid) <= 0.5 * (f(&w1) + f(&w2)) + 1e-9);
    }
}
