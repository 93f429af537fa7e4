//! Uncertainty contract on the hard family: active sampling keeps `T * Gamma`
//! near the design constant (at most 4 here), while every method that takes
//! contexts as they come pays about `d`.

use sclb::design::{active_design, passive_design, DesignOptions, DesignProblem};
use sclb::eval::{concentration_horizon, gamma_of_counts, MeanStderr};
use sclb::explore::{planner_distribution, rf_linucb, sample_counts, ExplorationConfig};
use sclb::instances::hard_instance;
use sclb::seed;
use sclb::{covariance_of_log, gamma_uncertainty, BanditInstance, Design};

const TRIALS: u64 = 100;
const LAMBDA: f64 = 1e-6;
const ALPHA: f64 = 0.5;

fn horizon(d: usize) -> u64 {
    concentration_horizon(d, ALPHA, 0.1).unwrap().max(2000)
}

fn scaled_gamma(inst: &BanditInstance, design: &Design, t: u64, tag: u64) -> MeanStderr {
    let values: Vec<f64> = (0..TRIALS)
        .map(|i| {
            let mut rng = seed::rng(tag, &[i]);
            let counts: Vec<f64> = sample_counts(design, t, &mut rng).unwrap().into_iter().map(|c| c as f64).collect();
            t as f64 * gamma_of_counts(inst, &counts, LAMBDA).unwrap()
        })
        .collect();
    MeanStderr::of(&values)
}

#[test]
fn active_stays_below_eight_design_constants_and_passive_pays_d() {
    for d in [5usize, 10, 50] {
        let inst = hard_instance(d, 10).unwrap();
        let t = horizon(d);
        let opts = DesignOptions::default();
        let (w_star, report) = active_design(&DesignProblem::new(&inst, LAMBDA, t as usize), &opts).unwrap();
        let c_b = report.objective_value;
        let (smoothed, _) = active_design(&DesignProblem::new(&inst, LAMBDA, t as usize).alpha(ALPHA), &opts).unwrap();
        for (name, w) in [("active", &w_star), ("smoothed", &smoothed)] {
            let g = scaled_gamma(&inst, w, t, 1);
            assert!(g.mean <= 8.0 * c_b + 3.0 * g.stderr, "d={d} {name}: {} vs 8 C_B = {}", g.mean, 8.0 * c_b);
        }

        let (passive, _) = passive_design(&DesignProblem::new(&inst, LAMBDA, t as usize).passive(), &opts).unwrap();
        let g = scaled_gamma(&inst, &passive, t, 2);
        assert!(g.mean >= 0.9 * d as f64, "d={d} passive: {}", g.mean);

        let cfg = ExplorationConfig::new(t as usize, LAMBDA, 9);
        let planner = planner_distribution(&inst, &cfg).unwrap();
        let g = scaled_gamma(&inst, &planner, t, 3);
        assert!(g.mean >= 0.9 * d as f64, "d={d} planner: {}", g.mean);
    }
}

// RF-LinUCB is sequential, so it runs only at the smallest dimension.
#[test]
fn reward_free_linucb_pays_d() {
    let d = 5;
    let inst = hard_instance(d, 10).unwrap();
    let t = horizon(d) as usize;
    let values: Vec<f64> = (0..20)
        .map(|i| {
            let run = rf_linucb(&inst, &ExplorationConfig::new(t, LAMBDA, i)).unwrap();
            let cov = covariance_of_log(&inst, &run.log, LAMBDA).unwrap();
            t as f64 * gamma_uncertainty(&inst, &cov).unwrap()
        })
        .collect();
    let g = MeanStderr::of(&values);
    assert!(g.mean >= 0.9 * d as f64, "rf_linucb: {}", g.mean);
}
