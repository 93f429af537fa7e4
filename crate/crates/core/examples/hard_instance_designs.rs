//! G-optimal, active and passive design values on the hard family.
//!
//! The active value stays below 4 for every `d`, while the G-optimal and
//! passive designs both pay `d`.

use sclb::design::{active_design, design_objective, g_optimal_design, passive_design, DesignOptions, DesignProblem};
use sclb::instances::hard_instance;

fn main() -> sclb::Result<()> {
    let opts = DesignOptions::default();
    println!("{:>4} {:>10} {:>10} {:>10}", "d", "g_optimal", "active", "passive");
    for d in [2, 5, 10, 50] {
        let inst = hard_instance(d, 10)?;
        let problem = DesignProblem::new(&inst, 1e-6, 1000);
        let (q, _) = g_optimal_design(&inst, 1e-6, 1000, 1e-6)?;
        let (w_act, _) = active_design(&problem, &opts)?;
        let (w_pas, _) = passive_design(&problem.clone().passive(), &opts)?;
        println!(
            "{d:>4} {:>10.4} {:>10.4} {:>10.4}",
            design_objective(&inst, &q)?,
            design_objective(&inst, &w_act)?,
            design_objective(&inst, &w_pas)?
        );
    }
    Ok(())
}
