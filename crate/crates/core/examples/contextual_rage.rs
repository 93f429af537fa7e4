//! Policy elimination with active contexts, and the active/passive complexities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sclb::design::DesignOptions;
use sclb::instances::hard_instance;
use sclb::rage::{active_contextual_rage, enumerate_policies, rho_values, Aggregator, RageConfig, POLICY_CAP};

fn main() -> sclb::Result<()> {
    let inst = hard_instance(3, 2)?;
    let class = enumerate_policies(&inst, POLICY_CAP)?;
    let star = class.position(&inst.optimal_policy()).expect("optimal policy is enumerated");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for aggregator in [Aggregator::Mean, Aggregator::Catoni] {
        let cfg = RageConfig::new(0.05, 0.1).aggregator(aggregator);
        let result = active_contextual_rage(&inst, &class, &cfg, &mut rng)?;
        println!(
            "{aggregator:?}: {} of {} policies survive (optimum kept: {}), {} samples over {} rounds",
            result.survivors.len(),
            class.len(),
            result.survivors.contains(&star),
            result.total_samples,
            result.rounds.len()
        );
    }
    for d in [2, 4, 8] {
        let rho = rho_values(&hard_instance(d, 2)?, 0.05, &DesignOptions::default())?;
        println!("d={d}: rho_act {:.4}, rho_pas {:.4}", rho.active, rho.passive);
    }
    Ok(())
}
