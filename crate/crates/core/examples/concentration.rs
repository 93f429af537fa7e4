//! Empirical covariance of a smoothed active design versus its population value.

use sclb::design::{active_design, DesignOptions, DesignProblem};
use sclb::eval::{concentration_check, concentration_horizon};
use sclb::instances::hard_instance;

fn main() -> sclb::Result<()> {
    let (d, alpha, delta) = (3, 0.5, 0.1);
    let inst = hard_instance(d, 3)?;
    let guaranteed = concentration_horizon(d, alpha, delta)?;
    for horizon in [100, 1000, guaranteed] {
        let (w, _) = active_design(
            &DesignProblem::new(&inst, 1e-6, horizon as usize).alpha(alpha),
            &DesignOptions::default(),
        )?;
        let r = concentration_check(&inst, &w, horizon, 500, alpha, delta, 4)?;
        println!(
            "T={horizon:<6} failures {:>3}/500, eigenvalues in [{:.3}, {:.3}], passed: {}",
            r.failures, r.min_eigenvalue, r.max_eigenvalue, r.passed
        );
    }
    Ok(())
}
