//! Passive sampling cannot beat `T * Gamma ~ d`, whatever the action rule.

use sclb::design::{passive_design, DesignOptions, DesignProblem};
use sclb::eval::{barrier_estimate, StochasticActions, UniformActions};
use sclb::instances::hard_instance;

fn main() -> sclb::Result<()> {
    let (trials, lambda) = (200, 1e-8);
    for d in [5, 10, 20] {
        // rare contexts have probability 1/d^2, so T must be a multiple of d^2
        let horizon = 20 * d * d;
        let inst = hard_instance(d, 10)?;
        let uniform = barrier_estimate(&inst, &UniformActions { n_actions: 10 }, horizon, trials, lambda, 1)?;
        let (w, _) = passive_design(&DesignProblem::new(&inst, lambda, horizon).passive(), &DesignOptions::default())?;
        let designed = barrier_estimate(&inst, &StochasticActions::from_design(&inst, &w)?, horizon, trials, lambda, 1)?;
        // uniform actions often leave a direction unsampled, so only the ridge bounds Gamma
        println!(
            "d={d:<3} T={horizon:<5} uniform T*Gamma {:.3e}, passive design T*Gamma {:.3} (>= d)",
            uniform.scaled.mean, designed.scaled.mean
        );
    }
    Ok(())
}
