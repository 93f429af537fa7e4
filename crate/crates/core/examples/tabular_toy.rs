//! Loading a tabular dataset and exploring it.
//!
//! Run from the workspace root so the `data/` paths resolve.

use std::path::Path;

use sclb::eval::{naive_baseline_regret, simple_regret};
use sclb::explore::{ExplorationConfig, Method};
use sclb::instances::load_tabular;

fn main() -> sclb::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let inst = load_tabular(&root.join("toy_features.csv"), &root.join("toy_rewards.csv"))?;
    println!(
        "{} contexts, {} actions, dim {}; naive baseline regret {:.4}",
        inst.n_contexts(),
        inst.n_actions(),
        inst.dim(),
        naive_baseline_regret(&inst)?
    );
    for method in Method::ALL {
        let run = method.run(&inst, &ExplorationConfig::new(500, 1e-6, 0))?;
        println!("{:<16} regret {:.4}", method.name(), simple_regret(&inst, &run.policy)?);
    }
    Ok(())
}
