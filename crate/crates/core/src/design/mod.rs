//! Sampling designs: the G-optimal smoothing distribution, the active and
//! passive designs, and design evaluation.
//!
//! The design objective is `f(w) = E_{x ~ p} max_a ||phi(x, a)||^2_{Sigma_w^{-1}}`,
//! convex in `w`. Pairs with identical features are interchangeable in `f`;
//! solvers work on distinct features and hand each feature's mass (beyond
//! the floors) to its lowest-index pair.

mod goptimal;
mod minimax;
#[cfg(feature = "sdp")]
mod sdp;

pub use goptimal::{default_g_optimal_cap, g_optimal_design, g_optimal_design_traced, MaxNormTrace};
pub(crate) use minimax::{context_targets, AtomLayout, MinimaxProblem, MinimaxSolution};

use crate::error::{Result, SclbError};
use crate::linalg::covariance_of_design;
use crate::model::{ridge_shift, BanditInstance, Design};
use crate::ridge::gamma_uncertainty;

/// How a solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Certified gap within the requested relative tolerance.
    Optimal,
    /// Tolerance missed, but the value is certified within a factor 2 of optimal.
    ToleranceReached,
    /// Iteration cap hit without either certificate.
    MaxIterations,
}

/// Outcome of a design solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub objective_value: f64,
    /// Certified upper bound on `objective_value - optimum` (for G-optimal
    /// designs: the excess of the unshifted max-norm over `d`).
    pub certificate_gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Solver backend for the active and passive designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Exponentiated gradient with a certified gap; scales to large instances.
    #[default]
    FirstOrder,
    /// Interior-point SDP; exact but limited to small instances.
    Sdp,
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Relative gap at which a solve counts as optimal.
    pub tol: f64,
    /// Iteration cap; `None` picks the backend default.
    pub max_iter: Option<usize>,
    pub backend: Backend,
    /// Diagonal regularization inside the SDP blocks.
    pub sdp_regularization: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: None,
            backend: Backend::FirstOrder,
            sdp_regularization: 1e-6,
        }
    }
}

impl DesignOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }
}

pub(crate) const FIRST_ORDER_MAX_ITER: usize = 50_000;
const SDP_MAX_ITER: usize = 200;

/// A design problem: objective, ridge shift `lambda / T`, optional floors
/// and optional marginal constraints.
#[derive(Debug, Clone)]
pub struct DesignProblem<'a> {
    pub instance: &'a BanditInstance,
    pub lambda: f64,
    pub horizon: usize,
    /// Smoothing weight; when positive and no floors are given, floors
    /// `alpha * q` are built from the G-optimal design `q`.
    pub alpha: f64,
    pub lower_bounds: Option<Vec<f64>>,
    /// Force `sum_a w(x, a) = p(x)`.
    pub marginal_constraints: bool,
}

impl<'a> DesignProblem<'a> {
    pub fn new(instance: &'a BanditInstance, lambda: f64, horizon: usize) -> Self {
        Self {
            instance,
            lambda,
            horizon,
            alpha: 0.0,
            lower_bounds: None,
            marginal_constraints: false,
        }
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn lower_bounds(mut self, h: Vec<f64>) -> Self {
        self.lower_bounds = Some(h);
        self
    }

    pub fn passive(mut self) -> Self {
        self.marginal_constraints = true;
        self
    }

    fn shift(&self) -> Result<f64> {
        ridge_shift(self.lambda, self.horizon)
    }

    /// Floors actually imposed: explicit ones, else `alpha * q`, else none.
    pub fn resolved_floors(&self, opts: &DesignOptions) -> Result<Option<Vec<f64>>> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(SclbError::Domain(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(h) = &self.lower_bounds {
            return Ok(Some(h.clone()));
        }
        if self.alpha > 0.0 {
            let (q, _) = g_optimal_design(self.instance, self.lambda, self.horizon, opts.tol.max(1e-9))?;
            return Ok(Some(q.weights().iter().map(|v| self.alpha * v).collect()));
        }
        Ok(None)
    }
}

/// Minimizes the design objective over the simplex (or the marginal-constrained
/// set when `problem.marginal_constraints` is set) subject to the floors.
pub fn active_design(problem: &DesignProblem<'_>, opts: &DesignOptions) -> Result<(Design, SolveReport)> {
    let shift = problem.shift()?;
    let floors = problem.resolved_floors(opts)?;
    let layout = AtomLayout::new(problem.instance, problem.marginal_constraints, floors.as_deref())?;
    let (targets, sets, weights) = context_targets(problem.instance);
    let mm = layout.with_targets(shift, targets, sets, weights);
    let sol = solve_minimax(&mm, opts)?;
    let design = Design::new(layout.to_pair_weights(&sol.y), shift)?;
    let objective_value = design_objective(problem.instance, &design)?;
    let report = SolveReport {
        objective_value,
        certificate_gap: sol.gap + (objective_value - sol.value).max(0.0),
        iterations: sol.iterations,
        status: sol.status,
    };
    Ok((design, report))
}

/// [`active_design`] restricted to designs whose context marginal is `p`.
pub fn passive_design(problem: &DesignProblem<'_>, opts: &DesignOptions) -> Result<(Design, SolveReport)> {
    let problem = problem.clone().passive();
    active_design(&problem, opts)
}

pub(crate) fn solve_minimax(problem: &MinimaxProblem, opts: &DesignOptions) -> Result<MinimaxSolution> {
    if !(opts.tol > 0.0) {
        return Err(SclbError::Domain(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    match opts.backend {
        Backend::FirstOrder => {
            problem.solve_first_order(opts.tol, opts.max_iter.unwrap_or(FIRST_ORDER_MAX_ITER))
        }
        #[cfg(feature = "sdp")]
        Backend::Sdp => sdp::solve_sdp(
            problem,
            opts.tol,
            opts.sdp_regularization,
            opts.max_iter.unwrap_or(SDP_MAX_ITER),
        ),
        #[cfg(not(feature = "sdp"))]
        Backend::Sdp => {
            let _ = SDP_MAX_ITER;
            Err(SclbError::Unavailable(
                "built without the `sdp` feature".into(),
            ))
        }
    }
}

/// `E_{x ~ p} max_a ||phi(x, a)||^2_{Sigma_w^{-1}}`, with the shift stored on the design.
pub fn design_objective(instance: &BanditInstance, design: &Design) -> Result<f64> {
    gamma_uncertainty(instance, &covariance_of_design(instance, design)?)
}

/// `(1 - alpha) w1 + alpha w2`.
pub fn mix_designs(w1: &Design, w2: &Design, alpha: f64) -> Result<Design> {
    if w1.len() != w2.len() {
        return Err(SclbError::Shape(format!(
            "designs have {} and {} weights",
            w1.len(),
            w2.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SclbError::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if w1.shift() != w2.shift() {
        return Err(SclbError::Domain(format!(
            "designs carry different shifts {} and {}",
            w1.shift(),
            w2.shift()
        )));
    }
    if alpha == 0.0 {
        return Ok(w1.clone());
    }
    if alpha == 1.0 {
        return Ok(w2.clone());
    }
    let w = w1
        .weights()
        .iter()
        .zip(w2.weights())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    Design::new(w, w1.shift())
}

#[cfg(test)]
mod tests;
