//! Simple regret of the four exploration methods on a small hard instance.

use sclb::eval::{simple_regret, MeanStderr};
use sclb::explore::{ExplorationConfig, Method};
use sclb::instances::hard_instance;

fn main() -> sclb::Result<()> {
    let inst = hard_instance(10, 10)?;
    let trials = 30;
    for horizon in [100, 400, 1600] {
        for method in Method::ALL {
            let regrets = (0..trials)
                .map(|seed| {
                    let run = method.run(&inst, &ExplorationConfig::new(horizon, 1e-6, seed))?;
                    simple_regret(&inst, &run.policy)
                })
                .collect::<sclb::Result<Vec<_>>>()?;
            let r = MeanStderr::of(&regrets);
            println!("T={horizon:<5} {:<16} {:.5} +/- {:.5}", method.name(), r.mean, 2.0 * r.stderr);
        }
    }
    Ok(())
}
