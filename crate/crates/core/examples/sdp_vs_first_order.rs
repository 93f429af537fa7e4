//! The two design backends agree on small random instances.
//!
//! Needs the default `sdp` feature. The first-order solver prints its
//! certified gap, which on passive problems can stall above the requested
//! tolerance at the iteration cap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sclb::design::{active_design, passive_design, Backend, DesignOptions, DesignProblem};
use sclb::instances::random_instance;

fn main() -> sclb::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let first_order = DesignOptions::default();
    let sdp = DesignOptions::default().backend(Backend::Sdp);
    for i in 0..5 {
        let inst = random_instance(3, 4, 3, 1.0, &mut rng)?;
        let problem = DesignProblem::new(&inst, 1e-3, 100);
        let a_fo = active_design(&problem, &first_order)?.1.objective_value;
        let a_sdp = active_design(&problem, &sdp)?.1.objective_value;
        let passive = problem.clone().passive();
        let p_fo = passive_design(&passive, &first_order)?.1;
        let p_sdp = passive_design(&passive, &sdp)?.1.objective_value;
        // the first-order value is never below the optimum by more than its certified gap
        println!(
            "instance {i}: active {a_fo:.6} / {a_sdp:.6}, passive {:.6} / {p_sdp:.6} (first-order gap {:.1e}, {:?})",
            p_fo.objective_value, p_fo.certificate_gap, p_fo.status
        );
    }
    Ok(())
}
