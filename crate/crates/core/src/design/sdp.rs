//! Exact conic backend: the design problem as a semidefinite program.
//!
//! Variables are the atom masses `y` and one epigraph variable `t_c` per
//! target set. Each target `v` of set `c` contributes the PSD block
//! `[[t_c, v^T], [v, Sigma_y + eps I]]`, equivalent by the Schur complement
//! to `t_c >= v^T (Sigma_y + eps I)^{-1} v`. The regularization `eps` only
//! enlarges `Sigma`, so the conic optimum is a lower bound on the true one
//! and `f(y) - dual objective` is a valid certificate.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ConicStatus, SupportedConeT,
};

use crate::error::{Result, SclbError};

use super::minimax::{MinimaxProblem, MinimaxSolution};
use super::SolveStatus;

/// Solves `problem` with an interior-point conic solver.
pub(crate) fn solve_sdp(
    problem: &MinimaxProblem,
    tol: f64,
    regularization: f64,
    max_iter: usize,
) -> Result<MinimaxSolution> {
    let d = problem.dim();
    let g_count = problem.n_atoms();
    let sets = problem.set_weight.len();
    let n_var = g_count + sets;
    let sqrt2 = std::f64::consts::SQRT_2;

    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0usize;

    // block masses
    for (blk, &mass) in problem.block_mass.iter().enumerate() {
        for (g, &bg) in problem.block_of.iter().enumerate() {
            if bg == blk {
                rows.push(row);
                cols.push(g);
                vals.push(1.0);
            }
        }
        b.push(mass);
        row += 1;
    }
    cones.push(SupportedConeT::ZeroConeT(problem.block_mass.len()));

    // floors
    for g in 0..g_count {
        rows.push(row);
        cols.push(g);
        vals.push(-1.0);
        b.push(-problem.floors[g]);
        row += 1;
    }
    cones.push(SupportedConeT::NonnegativeConeT(g_count));

    // one PSD block per target, svec order: upper triangle by columns
    let n = d + 1;
    let svec = |i: usize, j: usize| j * (j + 1) / 2 + i;
    let diag_shift = problem.shift + regularization;
    for k in 0..problem.targets.ncols() {
        let base = row;
        let c = problem.target_set[k];
        let mut bk = vec![0.0; n * (n + 1) / 2];
        rows.push(base + svec(0, 0));
        cols.push(g_count + c);
        vals.push(-1.0);
        for j in 0..d {
            bk[svec(0, j + 1)] = sqrt2 * problem.targets[(j, k)];
            bk[svec(j + 1, j + 1)] = diag_shift;
        }
        for g in 0..g_count {
            let a = problem.atoms.column(g);
            for j in 0..d {
                if a[j] == 0.0 {
                    continue;
                }
                for i in 0..=j {
                    let v = a[i] * a[j];
                    if v == 0.0 {
                        continue;
                    }
                    rows.push(base + svec(i + 1, j + 1));
                    cols.push(g);
                    vals.push(if i == j { -v } else { -sqrt2 * v });
                }
            }
        }
        b.extend(bk);
        row += n * (n + 1) / 2;
        cones.push(SupportedConeT::PSDTriangleConeT(n));
    }

    let a = CscMatrix::new_from_triplets(row, n_var, rows, cols, vals);
    let p = CscMatrix::zeros((n_var, n_var));
    let mut q = vec![0.0; n_var];
    q[g_count..].copy_from_slice(&problem.set_weight);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(max_iter.min(u32::MAX as usize) as u32)
        .tol_gap_rel(tol.max(1e-12))
        .tol_gap_abs(1e-12)
        .build()
        .map_err(|e| SclbError::Numerical(format!("conic solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| SclbError::Numerical(format!("conic solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    match sol.status {
        ConicStatus::Solved | ConicStatus::AlmostSolved => {}
        ConicStatus::PrimalInfeasible | ConicStatus::AlmostPrimalInfeasible => {
            return Err(SclbError::Infeasible(
                "conic solver reports the design constraints infeasible".into(),
            ))
        }
        other => {
            return Err(SclbError::Numerical(format!(
                "conic solver stopped with status {other:?}"
            )))
        }
    }

    let y = project(problem, &sol.x[..g_count]);
    let value = problem.value(&y);
    if !value.is_finite() {
        return Err(SclbError::Numerical(
            "conic solution has a singular design covariance".into(),
        ));
    }
    let gap = (value - sol.obj_val_dual).max(0.0);
    let status = if gap <= tol * value {
        SolveStatus::Optimal
    } else if value <= 2.0 * sol.obj_val_dual {
        SolveStatus::ToleranceReached
    } else {
        SolveStatus::MaxIterations
    };
    Ok(MinimaxSolution {
        y,
        value,
        gap,
        iterations: sol.iterations as usize,
        status,
    })
}

/// Clamps interior-point output onto the floors and block masses.
fn project(problem: &MinimaxProblem, raw: &[f64]) -> Vec<f64> {
    let mut y = problem.floors.clone();
    for (blk, &mass) in problem.block_mass.iter().enumerate() {
        let members: Vec<usize> = (0..raw.len()).filter(|&g| problem.block_of[g] == blk).collect();
        let floor: f64 = members.iter().map(|&g| problem.floors[g]).sum();
        let excess: Vec<f64> = members
            .iter()
            .map(|&g| (raw[g] - problem.floors[g]).max(0.0))
            .collect();
        let total: f64 = excess.iter().sum();
        let free = (mass - floor).max(0.0);
        for (i, &g) in members.iter().enumerate() {
            y[g] += if total > 0.0 {
                free * excess[i] / total
            } else {
                free / members.len() as f64
            };
        }
    }
    y
}
