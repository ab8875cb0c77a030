//! Linear programs in bounded form and a revised simplex solver that returns
//! exact basic duals.
//!
//! Models are `min c^T x + offset` subject to `A_eq x = b_eq`,
//! `A_le x <= b_le` and `l <= x <= u`. Duals follow the sensitivity
//! convention: each multiplier is the derivative of the optimal objective
//! with respect to the constraint's right-hand side, so inequality duals are
//! non-positive.

mod lu;
mod simplex;

use simplex::{Outcome, Simplex, State};

/// Sparse linear expression as `(variable, coefficient)` pairs.
pub type Terms = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("constraint references variable {var} but the model has {num_vars} variables")]
    UnknownVariable { var: usize, num_vars: usize },
    #[error("variable {var}: lower bound {lower} exceeds upper bound {upper}")]
    BoundOrder { var: usize, lower: f64, upper: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("iteration limit of {0} exceeded")]
    IterationLimit(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// The element the solver was working on when it proved infeasibility. It is
/// part of an infeasible subsystem but not necessarily minimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibilityHint {
    Equality(usize),
    Inequality(usize),
    Variable(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub hint: Option<InfeasibilityHint>,
}

/// Final basis of a solve, reusable as the starting point for a model with
/// the same variables and constraints but different bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    states: Vec<State>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Zero selects a limit proportional to the model size.
    pub max_iterations: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 0,
            primal_tol: 1e-9,
            dual_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpModel {
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    offset: f64,
    eq: Vec<Terms>,
    eq_rhs: Vec<f64>,
    le: Vec<Terms>,
    le_rhs: Vec<f64>,
}

impl LpModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with bounds `[lower, upper]` (either may be infinite)
    /// and objective coefficient `cost`; returns its index.
    pub fn add_var(&mut self, lower: f64, upper: f64, cost: f64) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    /// Adds `terms = rhs`; returns the equality's index.
    pub fn add_eq(&mut self, terms: Terms, rhs: f64) -> usize {
        self.eq.push(terms);
        self.eq_rhs.push(rhs);
        self.eq.len() - 1
    }

    /// Adds `terms <= rhs`; returns the inequality's index.
    pub fn add_le(&mut self, terms: Terms, rhs: f64) -> usize {
        self.le.push(terms);
        self.le_rhs.push(rhs);
        self.le.len() - 1
    }

    pub fn add_objective_offset(&mut self, value: f64) {
        self.offset += value;
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.cost[var] = cost;
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.le.len()
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn objective_offset(&self) -> f64 {
        self.offset
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn equality(&self, i: usize) -> (&[(usize, f64)], f64) {
        (&self.eq[i], self.eq_rhs[i])
    }

    pub fn inequality(&self, i: usize) -> (&[(usize, f64)], f64) {
        (&self.le[i], self.le_rhs[i])
    }

    /// Objective value of `x`, including the constant offset.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.offset + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest bound or constraint violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        let act = |t: &Terms| t.iter().map(|&(j, a)| a * x[j]).sum::<f64>();
        for (t, b) in self.eq.iter().zip(&self.eq_rhs) {
            worst = worst.max((act(t) - b).abs());
        }
        for (t, b) in self.le.iter().zip(&self.le_rhs) {
            worst = worst.max(act(t) - b);
        }
        worst
    }

    pub fn check(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(LpError::BoundOrder {
                    var: j,
                    lower: self.lower[j],
                    upper: self.upper[j],
                });
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(LpError::NonFinite(format!("bounds of variable {j}")));
            }
            if !self.cost[j].is_finite() {
                return Err(LpError::NonFinite(format!("cost of variable {j}")));
            }
        }
        for (kind, rows, rhs) in [("equality", &self.eq, &self.eq_rhs), ("inequality", &self.le, &self.le_rhs)] {
            for (i, (t, b)) in rows.iter().zip(rhs.iter()).enumerate() {
                if !b.is_finite() {
                    return Err(LpError::NonFinite(format!("right-hand side of {kind} {i}")));
                }
                for &(var, a) in t {
                    if var >= n {
                        return Err(LpError::UnknownVariable { var, num_vars: n });
                    }
                    if !a.is_finite() {
                        return Err(LpError::NonFinite(format!("{kind} {i}")));
                    }
                }
            }
        }
        if !self.offset.is_finite() {
            return Err(LpError::NonFinite("objective offset".into()));
        }
        Ok(())
    }
}

pub fn solve_lp(model: &LpModel) -> Result<LpSolution, LpError> {
    solve_lp_with(model, &SolverOptions::default())
}

/// Solves the model with a bounded dual simplex followed by primal clean-up.
/// Pivoting is deterministic: every choice breaks ties by lowest index.
pub fn solve_lp_with(model: &LpModel, options: &SolverOptions) -> Result<LpSolution, LpError> {
    solve_lp_from(model, options, None).map(|(sol, _)| sol)
}

/// Like [`solve_lp_with`], optionally starting from an earlier basis, and
/// returning the final one. A basis from a model of another shape is
/// ignored. Under degeneracy the duals found can depend on the start.
pub fn solve_lp_from(
    model: &LpModel,
    options: &SolverOptions,
    start: Option<&Basis>,
) -> Result<(LpSolution, Basis), LpError> {
    model.check()?;
    let mut rows: Vec<Terms> = Vec::with_capacity(model.num_eq() + model.num_ineq());
    let mut row_lower = Vec::with_capacity(rows.capacity());
    let mut row_upper = Vec::with_capacity(rows.capacity());
    for (t, &b) in model.eq.iter().zip(&model.eq_rhs) {
        rows.push(merge_terms(t));
        row_lower.push(b);
        row_upper.push(b);
    }
    for (t, &b) in model.le.iter().zip(&model.le_rhs) {
        rows.push(merge_terms(t));
        row_lower.push(f64::NEG_INFINITY);
        row_upper.push(b);
    }
    let mut solver = Simplex::new(
        &model.cost,
        &model.lower,
        &model.upper,
        rows,
        &row_lower,
        &row_upper,
        options,
    );
    if let Some(b) = start {
        solver.warm_start(&b.states, &b.order);
    }
    let outcome = solver.run()?;
    let (states, order) = solver.basis();
    let n = model.num_vars();
    let neq = model.num_eq();
    let (x, y, d) = solver.solution();
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Infeasible { .. } => LpStatus::Infeasible,
        Outcome::Unbounded => LpStatus::Unbounded,
    };
    let hint = match outcome {
        Outcome::Infeasible { var } if var < n => Some(InfeasibilityHint::Variable(var)),
        Outcome::Infeasible { var } if var - n < neq => Some(InfeasibilityHint::Equality(var - n)),
        Outcome::Infeasible { var } => Some(InfeasibilityHint::Inequality(var - n - neq)),
        _ => None,
    };
    let objective = match status {
        LpStatus::Optimal => model.evaluate(&x[..n]),
        LpStatus::Infeasible => f64::NAN,
        LpStatus::Unbounded => f64::NEG_INFINITY,
    };
    let sol = LpSolution {
        status,
        objective,
        eq_duals: y[..neq].to_vec(),
        ineq_duals: y[neq..].to_vec(),
        reduced_costs: d[..n].to_vec(),
        x: x[..n].to_vec(),
        iterations: solver.iterations(),
        hint,
    };
    Ok((sol, Basis { states, order }))
}

/// Sums repeated variables and drops zero coefficients.
fn merge_terms(terms: &[(usize, f64)]) -> Terms {
    let mut t = terms.to_vec();
    t.sort_by_key(|e| e.0);
    let mut out: Terms = Vec::with_capacity(t.len());
    for (j, a) in t {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}
