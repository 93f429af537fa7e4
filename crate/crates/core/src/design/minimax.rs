//! Generic minimax design problem and its first-order solver.
//!
//! minimize `sum_c omega_c max_{v in V_c} v^T Sigma_y^{-1} v`
//! over `y` with `Sigma_y = shift I + sum_g y_g a_g a_g^T`, where the atoms
//! `a_g` are partitioned into blocks of fixed mass and each atom carries a
//! floor `y_g >= f_g`.
//!
//! The solver runs exponentiated gradient on a log-sum-exp smoothing of the
//! inner maxima, with Armijo backtracking and a decreasing temperature. The
//! returned gap is certified: for softmax weights `mu`, the averaged
//! objective `h_mu` is convex and below `f`, so its linearization minimized
//! over the feasible set bounds the optimum from below.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Result, SclbError};
use crate::linalg::{weighted_gram, CovFactor};
use crate::model::BanditInstance;

use super::SolveStatus;

#[derive(Debug, Clone)]
pub(crate) struct MinimaxProblem {
    pub shift: f64,
    /// `d x G`.
    pub atoms: DMatrix<f64>,
    pub block_of: Vec<usize>,
    pub block_mass: Vec<f64>,
    pub floors: Vec<f64>,
    /// `d x K`.
    pub targets: DMatrix<f64>,
    /// Set index of each target column.
    pub target_set: Vec<usize>,
    pub set_weight: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct MinimaxSolution {
    pub y: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// How atoms map back to context-action pairs.
#[derive(Debug, Clone)]
pub(crate) struct AtomLayout {
    /// Pairs sharing each atom, ascending.
    pub members: Vec<Vec<usize>>,
    pub atoms: DMatrix<f64>,
    pub block_of: Vec<usize>,
    pub block_mass: Vec<f64>,
    pub atom_floors: Vec<f64>,
    pub pair_floors: Vec<f64>,
    n_pairs: usize,
}

fn feature_key(v: nalgebra::DVectorView<'_, f64>) -> Vec<u64> {
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

impl AtomLayout {
    /// Collapses pairs with identical features into atoms. Passive layouts
    /// key atoms by context as well and give each context with `p(x) > 0` a
    /// block of mass `p(x)`; active layouts use one block of mass 1.
    pub fn new(instance: &BanditInstance, passive: bool, pair_floors: Option<&[f64]>) -> Result<Self> {
        let n_pairs = instance.n_pairs();
        let floors: Vec<f64> = match pair_floors {
            Some(h) => {
                if h.len() != n_pairs {
                    return Err(SclbError::Shape(format!(
                        "lower bounds have length {}, instance has {} pairs",
                        h.len(),
                        n_pairs
                    )));
                }
                if let Some(j) = h.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(SclbError::Domain(format!(
                        "lower bound at pair {j} is {}",
                        h[j]
                    )));
                }
                h.to_vec()
            }
            None => vec![0.0; n_pairs],
        };
        let total_floor: f64 = floors.iter().sum();
        if total_floor > 1.0 + 1e-9 {
            return Err(SclbError::Infeasible(format!(
                "lower bounds sum to {total_floor} > 1"
            )));
        }

        let p = instance.context_dist();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut atom_cols: Vec<usize> = Vec::new();
        let mut block_of = Vec::new();
        let mut block_mass = Vec::new();
        let mut index: HashMap<(usize, Vec<u64>), usize> = HashMap::new();

        if passive {
            for x in 0..instance.n_contexts() {
                let row_floor: f64 = (0..instance.n_actions())
                    .map(|a| floors[instance.pair_index(x, a)])
                    .sum();
                if row_floor > p[x] + 1e-9 {
                    return Err(SclbError::Infeasible(format!(
                        "lower bounds of context {x} sum to {row_floor}, above its marginal p = {}",
                        p[x]
                    )));
                }
                if p[x] == 0.0 {
                    continue;
                }
                let b = block_mass.len();
                block_mass.push(p[x]);
                for a in 0..instance.n_actions() {
                    let j = instance.pair_index(x, a);
                    let key = (x, feature_key(instance.pair_feature(j)));
                    match index.get(&key) {
                        Some(&g) => members[g].push(j),
                        None => {
                            index.insert(key, members.len());
                            members.push(vec![j]);
                            atom_cols.push(j);
                            block_of.push(b);
                        }
                    }
                }
            }
        } else {
            block_mass.push(1.0);
            for j in 0..n_pairs {
                let key = (0, feature_key(instance.pair_feature(j)));
                match index.get(&key) {
                    Some(&g) => members[g].push(j),
                    None => {
                        index.insert(key, members.len());
                        members.push(vec![j]);
                        atom_cols.push(j);
                        block_of.push(0);
                    }
                }
            }
        }

        let cols = instance.feature_columns();
        let atoms = DMatrix::from_fn(cols.nrows(), atom_cols.len(), |i, g| cols[(i, atom_cols[g])]);
        let atom_floors = members
            .iter()
            .map(|m| m.iter().map(|&j| floors[j]).sum())
            .collect();
        Ok(Self {
            members,
            atoms,
            block_of,
            block_mass,
            atom_floors,
            pair_floors: floors,
            n_pairs,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.members.len()
    }

    /// Pair weights: each pair gets its floor, the atom's excess goes to its
    /// lowest-index member.
    pub fn to_pair_weights(&self, y: &[f64]) -> Vec<f64> {
        let mut w = self.pair_floors.clone();
        for (g, m) in self.members.iter().enumerate() {
            let excess = (y[g] - self.atom_floors[g]).max(0.0);
            w[m[0]] += excess;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        debug_assert_eq!(w.len(), self.n_pairs);
        w
    }

    pub fn with_targets(
        &self,
        shift: f64,
        targets: DMatrix<f64>,
        target_set: Vec<usize>,
        set_weight: Vec<f64>,
    ) -> MinimaxProblem {
        MinimaxProblem {
            shift,
            atoms: self.atoms.clone(),
            block_of: self.block_of.clone(),
            block_mass: self.block_mass.clone(),
            floors: self.atom_floors.clone(),
            targets,
            target_set,
            set_weight,
        }
    }
}

/// Per-context targets of the design objective: the distinct features of
/// every context with positive probability, weighted by `p(x)`.
pub(crate) fn context_targets(instance: &BanditInstance) -> (DMatrix<f64>, Vec<usize>, Vec<f64>) {
    let mut cols = Vec::new();
    let mut set = Vec::new();
    let mut weight = Vec::new();
    for (x, &px) in instance.context_dist().iter().enumerate() {
        if px == 0.0 {
            continue;
        }
        let s = weight.len();
        weight.push(px);
        let mut seen = std::collections::HashSet::new();
        for a in 0..instance.n_actions() {
            let j = instance.pair_index(x, a);
            if seen.insert(feature_key(instance.pair_feature(j))) {
                cols.push(j);
                set.push(s);
            }
        }
    }
    let src = instance.feature_columns();
    let targets = DMatrix::from_fn(src.nrows(), cols.len(), |i, k| src[(i, cols[k])]);
    (targets, set, weight)
}

/// Internal state for one evaluation point.
struct Eval {
    /// True objective.
    f: f64,
    /// Smoothed objective.
    f_tau: f64,
    /// Gradient of the smoothed objective w.r.t. `y`.
    grad: Vec<f64>,
    /// `h_mu(y)`.
    h_mu: f64,
}

impl MinimaxProblem {
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    fn n_sets(&self) -> usize {
        self.set_weight.len()
    }

    fn factor(&self, y: &[f64]) -> Option<CovFactor> {
        CovFactor::new(weighted_gram(&self.atoms, y, self.shift)).ok()
    }

    /// True objective at `y`; infinite when `Sigma_y` is singular.
    pub fn value(&self, y: &[f64]) -> f64 {
        match self.factor(y) {
            Some(f) => self.value_with(&f),
            None => f64::INFINITY,
        }
    }

    fn value_with(&self, factor: &CovFactor) -> f64 {
        let norms = factor.column_norms_sq(&self.targets);
        let mut best = vec![f64::NEG_INFINITY; self.n_sets()];
        for (k, &n) in norms.iter().enumerate() {
            let s = self.target_set[k];
            best[s] = best[s].max(n);
        }
        best.iter()
            .zip(&self.set_weight)
            .filter(|(_, &w)| w > 0.0)
            .map(|(b, w)| w * b)
            .sum()
    }

    /// Smoothed value only (for line search).
    fn smoothed_value(&self, y: &[f64], tau: f64) -> f64 {
        let Some(factor) = self.factor(y) else {
            return f64::INFINITY;
        };
        let norms = factor.column_norms_sq(&self.targets);
        self.smooth(&norms, tau).0
    }

    /// Returns `(F_tau, per-target coefficients omega_c mu_v, h_mu, f)`.
    fn smooth(&self, norms: &[f64], tau: f64) -> (f64, Vec<f64>, f64, f64) {
        let m = self.n_sets();
        let mut best = vec![f64::NEG_INFINITY; m];
        for (k, &n) in norms.iter().enumerate() {
            let s = self.target_set[k];
            best[s] = best[s].max(n);
        }
        let mut coef = vec![0.0; norms.len()];
        let mut z = vec![0.0; m];
        if tau > 0.0 {
            for (k, &n) in norms.iter().enumerate() {
                let s = self.target_set[k];
                let e = ((n - best[s]) / tau).exp();
                coef[k] = e;
                z[s] += e;
            }
        } else {
            // hard selection: first maximizer per set
            let mut taken = vec![false; m];
            for (k, &n) in norms.iter().enumerate() {
                let s = self.target_set[k];
                if !taken[s] && n == best[s] {
                    taken[s] = true;
                    coef[k] = 1.0;
                    z[s] = 1.0;
                }
            }
        }
        let mut f = 0.0;
        let mut f_tau = 0.0;
        for s in 0..m {
            let w = self.set_weight[s];
            if w == 0.0 {
                continue;
            }
            f += w * best[s];
            f_tau += w * (best[s] + if tau > 0.0 { tau * z[s].ln() } else { 0.0 });
        }
        let mut h_mu = 0.0;
        for (k, c) in coef.iter_mut().enumerate() {
            let s = self.target_set[k];
            *c *= self.set_weight[s] / z[s];
            h_mu += *c * norms[k];
        }
        (f_tau, coef, h_mu, f)
    }

    fn evaluate(&self, y: &[f64], tau: f64) -> Option<Eval> {
        let factor = self.factor(y)?;
        let w = factor.whiten_columns(&self.targets);
        let norms: Vec<f64> = w.column_iter().map(|c| c.norm_squared()).collect();
        let (f_tau, coef, h_mu, f) = self.smooth(&norms, tau);
        // M' = sum_k coef_k w_k w_k^T in whitened coordinates
        let active: Vec<usize> = (0..coef.len()).filter(|&k| coef[k] > 0.0).collect();
        let d = self.dim();
        let mut ws = DMatrix::zeros(d, active.len());
        let mut wp = DMatrix::zeros(d, active.len());
        for (i, &k) in active.iter().enumerate() {
            wp.set_column(i, &w.column(k));
            ws.set_column(i, &(w.column(k) * coef[k]));
        }
        let m = ws * wp.transpose();
        let z = factor.whiten_columns(&self.atoms);
        let mz = &m * &z;
        let grad = z
            .column_iter()
            .zip(mz.column_iter())
            .map(|(a, b)| -a.dot(&b))
            .collect();
        Some(Eval {
            f,
            f_tau,
            grad,
            h_mu,
        })
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.block_mass.len()];
        for (g, &b) in self.block_of.iter().enumerate() {
            out[b].push(g);
        }
        out
    }

    fn free_mass(&self, blocks: &[Vec<usize>]) -> Result<Vec<f64>> {
        blocks
            .iter()
            .enumerate()
            .map(|(b, members)| {
                let floor: f64 = members.iter().map(|&g| self.floors[g]).sum();
                let r = self.block_mass[b] - floor;
                if r < -1e-9 {
                    Err(SclbError::Infeasible(format!(
                        "floors of block {b} sum to {floor}, above its mass {}",
                        self.block_mass[b]
                    )))
                } else {
                    Ok(r.max(0.0))
                }
            })
            .collect()
    }

    /// `sum_g grad_g f_g + sum_b r_b min_{g in b} grad_g`: the minimum of the
    /// linear functional `grad` over the feasible set.
    fn linear_min(&self, grad: &[f64], blocks: &[Vec<usize>], free: &[f64]) -> f64 {
        let mut v: f64 = grad.iter().zip(&self.floors).map(|(g, f)| g * f).sum();
        for (b, members) in blocks.iter().enumerate() {
            let m = members.iter().map(|&g| grad[g]).fold(f64::INFINITY, f64::min);
            v += free[b] * m;
        }
        v
    }

    fn assemble(&self, u: &[f64], blocks: &[Vec<usize>], free: &[f64]) -> Vec<f64> {
        let mut y = self.floors.clone();
        for (b, members) in blocks.iter().enumerate() {
            for &g in members {
                y[g] += free[b] * u[g];
            }
        }
        y
    }

    /// Exponentiated-gradient solve to relative gap `tol` or `max_iter` steps.
    pub fn solve_first_order(&self, tol: f64, max_iter: usize) -> Result<MinimaxSolution> {
        let blocks = self.blocks();
        let free = self.free_mass(&blocks)?;
        let mut u = vec![0.0; self.n_atoms()];
        for members in &blocks {
            for &g in members {
                u[g] = 1.0 / members.len() as f64;
            }
        }
        let mut y = self.assemble(&u, &blocks, &free);

        let f0 = self.value(&y);
        if !f0.is_finite() {
            return Err(SclbError::Numerical(
                "design covariance is singular at the uniform start; the atoms do not span the \
                 feature space and the shift is zero"
                    .into(),
            ));
        }
        let set_sizes = {
            let mut s = vec![0usize; self.n_sets()];
            self.target_set.iter().for_each(|&c| s[c] += 1);
            s
        };
        let log_mass: f64 = set_sizes
            .iter()
            .zip(&self.set_weight)
            .map(|(&n, &w)| w * (n as f64).ln())
            .sum();
        // smoothing bias of F_tau is at most tau * log_mass
        let mut tau = if log_mass > 0.0 { 0.1 * f0 / log_mass } else { 0.0 };

        let mut eta = 1.0 / f0.max(1e-300);
        let mut best_f = f64::INFINITY;
        let mut best_y = y.clone();
        let mut best_lb = f64::NEG_INFINITY;
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;

        let mut current = self
            .evaluate(&y, tau)
            .ok_or_else(|| SclbError::Numerical("singular design covariance".into()))?;

        while iterations < max_iter {
            let lin_y: f64 = current.grad.iter().zip(&y).map(|(g, v)| g * v).sum();
            let lin_min = self.linear_min(&current.grad, &blocks, &free);
            let fw_gap = (lin_y - lin_min).max(0.0);
            let lb = current.h_mu - fw_gap;
            if current.f < best_f {
                best_f = current.f;
                best_y.clone_from(&y);
            }
            best_lb = best_lb.max(lb);
            if best_f - best_lb <= tol * best_f {
                status = SolveStatus::Optimal;
                break;
            }
            if tau > 0.0 && fw_gap <= tau * log_mass {
                tau *= 0.25;
                if tau < 1e-14 * best_f {
                    tau = 0.0;
                }
                current = self
                    .evaluate(&y, tau)
                    .ok_or_else(|| SclbError::Numerical("singular design covariance".into()))?;
                continue;
            }
            iterations += 1;

            // backtracking mirror step
            let mut accepted = None;
            for _ in 0..60 {
                let mut u_new = u.clone();
                for (b, members) in blocks.iter().enumerate() {
                    if free[b] == 0.0 || members.len() == 1 {
                        continue;
                    }
                    let gmin = members
                        .iter()
                        .map(|&g| current.grad[g])
                        .fold(f64::INFINITY, f64::min);
                    let mut total = 0.0;
                    for &g in members {
                        let e = u[g] * (-eta * free[b] * (current.grad[g] - gmin)).exp();
                        u_new[g] = e;
                        total += e;
                    }
                    for &g in members {
                        u_new[g] /= total;
                    }
                }
                let y_new = self.assemble(&u_new, &blocks, &free);
                let f_new = self.smoothed_value(&y_new, tau);
                let lin: f64 = current
                    .grad
                    .iter()
                    .zip(y_new.iter().zip(&y))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                let kl: f64 = u_new
                    .iter()
                    .zip(&u)
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(a, b)| a * (a / b).ln())
                    .sum();
                if f_new.is_finite() && f_new <= current.f_tau + lin + kl / eta + 1e-15 * current.f_tau.abs() {
                    accepted = Some((u_new, y_new));
                    break;
                }
                eta *= 0.5;
            }
            let Some((u_new, y_new)) = accepted else {
                // no progress possible at this temperature
                if tau > 0.0 {
                    tau *= 0.25;
                    current = self
                        .evaluate(&y, tau)
                        .ok_or_else(|| SclbError::Numerical("singular design covariance".into()))?;
                    continue;
                }
                break;
            };
            // keep weights strictly positive so that every atom can re-enter
            u = u_new.iter().map(|v| v.max(1e-300)).collect();
            y = y_new;
            eta *= 2.0;
            current = self
                .evaluate(&y, tau)
                .ok_or_else(|| SclbError::Numerical("singular design covariance".into()))?;
        }

        if current.f < best_f {
            best_f = current.f;
            best_y.clone_from(&y);
        }
        let gap = (best_f - best_lb).max(0.0);
        if status != SolveStatus::Optimal {
            status = if gap <= tol * best_f {
                SolveStatus::Optimal
            } else if best_lb > 0.0 && best_f <= 2.0 * best_lb {
                SolveStatus::ToleranceReached
            } else {
                SolveStatus::MaxIterations
            };
        }
        Ok(MinimaxSolution {
            y: best_y,
            value: best_f,
            gap,
            iterations,
            status,
        })
    }
}
