//! Planning the active design on an estimated context distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sclb::design::{active_design, design_objective, DesignOptions, DesignProblem};
use sclb::instances::{empirical_context_dist, hard_instance, recommended_context_samples, tv_distance};

fn main() -> sclb::Result<()> {
    let inst = hard_instance(20, 10)?;
    let opts = DesignOptions::default();
    let (exact, _) = active_design(&DesignProblem::new(&inst, 1e-6, 1000), &opts)?;
    println!("true p: objective {:.4}", design_objective(&inst, &exact)?);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for m in [100, 1000, recommended_context_samples(20, 0.1)?] {
        let p_hat = empirical_context_dist(&inst, m, &mut rng)?;
        let tv = tv_distance(inst.context_dist(), &p_hat)?;
        let planned = inst.with_context_dist(p_hat)?;
        let (w, _) = active_design(&DesignProblem::new(&planned, 1e-6, 1000), &opts)?;
        // judged under the true distribution; a context missing from the sample gets no mass
        println!("M={m:<7} TV {tv:.4}, objective {:.4}", design_objective(&inst, &w)?);
    }
    Ok(())
}
