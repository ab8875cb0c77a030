//! Bounded revised simplex over `A x - s = 0` with one logical variable `s_i`
//! per row carrying the row's bounds.

use super::lu::{LuFactor, Singular};
use super::{LpError, SolverOptions, Terms};

const REFACTOR_EVERY: usize = 100;
const PIVOT_TOL: f64 = 1e-9;
/// Temporary bound magnitude used to make dual infeasible columns boxed.
const ARTIFICIAL_BOUND: f64 = 1e9;
/// Consecutive degenerate dual steps before switching to smallest-index rules.
const STALL_LIMIT: usize = 2000;
const MAX_ROUNDS: usize = 10;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum State {
    Basic,
    Lower,
    Upper,
    /// Nonbasic away from its bounds (free columns, or columns released from
    /// an artificial bound).
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible { var: usize },
    Unbounded,
}

pub(crate) struct Simplex {
    n: usize,
    m: usize,
    cols: Vec<Terms>,
    rows: Vec<Terms>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    true_lower: Vec<f64>,
    true_upper: Vec<f64>,
    artificial: bool,
    x: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    pos: Vec<usize>,
    d: Vec<f64>,
    y: Vec<f64>,
    lu: LuFactor,
    iterations: usize,
    max_iterations: usize,
    tol_p: f64,
    tol_d: f64,
    bland: bool,
    row_buf: Vec<f64>,
    row_mark: Vec<bool>,
    row_touched: Vec<usize>,
}

impl Simplex {
    pub fn new(
        cost: &[f64],
        lower: &[f64],
        upper: &[f64],
        rows: Vec<Terms>,
        row_lower: &[f64],
        row_upper: &[f64],
        options: &SolverOptions,
    ) -> Self {
        let n = cost.len();
        let m = rows.len();
        let total = n + m;
        let mut cols: Vec<Terms> = vec![Vec::new(); n];
        for (i, r) in rows.iter().enumerate() {
            for &(j, a) in r {
                cols[j].push((i, a));
            }
        }
        let mut all_cost = cost.to_vec();
        all_cost.resize(total, 0.0);
        let mut lo = lower.to_vec();
        lo.extend_from_slice(row_lower);
        let mut hi = upper.to_vec();
        hi.extend_from_slice(row_upper);
        let max_iterations = if options.max_iterations == 0 {
            20 * total + 10_000
        } else {
            options.max_iterations
        };
        let mut s = Simplex {
            n,
            m,
            cols,
            rows,
            cost: all_cost,
            true_lower: lo.clone(),
            true_upper: hi.clone(),
            lower: lo,
            upper: hi,
            artificial: false,
            x: vec![0.0; total],
            state: vec![State::Free; total],
            basis: (n..total).collect(),
            pos: vec![NONE; total],
            d: vec![0.0; total],
            y: vec![0.0; m],
            lu: LuFactor::default(),
            iterations: 0,
            max_iterations,
            tol_p: options.primal_tol,
            tol_d: options.dual_tol,
            bland: false,
            row_buf: vec![0.0; total],
            row_mark: vec![false; total],
            row_touched: Vec::new(),
        };
        for i in 0..m {
            s.state[n + i] = State::Basic;
            s.pos[n + i] = i;
        }
        for j in 0..n {
            let (l, u, c) = (s.lower[j], s.upper[j], s.cost[j]);
            s.state[j] = match (l.is_finite(), u.is_finite()) {
                (true, true) if c >= 0.0 => State::Lower,
                (true, true) => State::Upper,
                (true, false) => State::Lower,
                (false, true) => State::Upper,
                (false, false) => State::Free,
            };
            s.x[j] = match s.state[j] {
                State::Lower => l,
                State::Upper => u,
                _ => 0.0,
            };
        }
        s
    }

    /// Starts from a basis saved by [`Simplex::basis`] for a model of the
    /// same shape. Nonbasic columns move to their current bounds. Returns
    /// false, leaving the slack basis in place, when the shapes differ.
    pub fn warm_start(&mut self, states: &[State], order: &[usize]) -> bool {
        let total = self.n + self.m;
        if states.len() != total
            || order.len() != self.m
            || order.iter().any(|&j| j >= total || states[j] != State::Basic)
        {
            return false;
        }
        self.basis = order.to_vec();
        self.pos = vec![NONE; total];
        for (p, &j) in order.iter().enumerate() {
            self.pos[j] = p;
        }
        for j in 0..total {
            let (l, u) = (self.lower[j], self.upper[j]);
            self.state[j] = match states[j] {
                State::Basic if self.pos[j] != NONE => State::Basic,
                State::Upper if u.is_finite() => State::Upper,
                State::Lower if l.is_finite() => State::Lower,
                _ if l.is_finite() => State::Lower,
                _ if u.is_finite() => State::Upper,
                _ => State::Free,
            };
            self.x[j] = match self.state[j] {
                State::Lower => l,
                State::Upper => u,
                _ => 0.0,
            };
        }
        true
    }

    pub fn basis(&self) -> (Vec<State>, Vec<usize>) {
        (self.state.clone(), self.basis.clone())
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Values, row duals and reduced costs over all columns (structural then
    /// logical).
    pub fn solution(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (self.x.clone(), self.y.clone(), self.d.clone())
    }

    pub fn run(&mut self) -> Result<Outcome, LpError> {
        self.refactor()?;
        for _ in 0..MAX_ROUNDS {
            self.make_dual_feasible();
            if let Outcome::Infeasible { var } = self.dual_phase()? {
                return Ok(Outcome::Infeasible { var });
            }
            self.release_artificial_bounds();
            if self.primal_phase()? == Outcome::Unbounded {
                return Ok(Outcome::Unbounded);
            }
            self.pivot_in_free()?;
            self.refactor()?;
            if self.primal_infeasible_count() == 0 && !self.dual_infeasible() {
                return Ok(Outcome::Optimal);
            }
        }
        Err(LpError::Numerical(
            "simplex did not settle on a feasible optimal basis".into(),
        ))
    }

    fn needs_refactor(&self) -> bool {
        self.lu.update_count() >= REFACTOR_EVERY || self.lu.eta_nnz() > 20 * self.m + 1000
    }

    fn column(&self, j: usize) -> ColumnIter<'_> {
        if j < self.n {
            ColumnIter::Structural(self.cols[j].iter())
        } else {
            ColumnIter::Logical(Some(j - self.n))
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        loop {
            let columns: Vec<Terms> = self
                .basis
                .iter()
                .map(|&j| self.column(j).collect())
                .collect();
            match LuFactor::factorize(self.m, &columns) {
                Ok(lu) => {
                    self.lu = lu;
                    break;
                }
                Err(Singular { positions, rows }) => {
                    if positions.is_empty() || positions.len() != rows.len() {
                        return Err(LpError::Numerical("singular basis could not be repaired".into()));
                    }
                    for (&p, &r) in positions.iter().zip(&rows) {
                        let out = self.basis[p];
                        let incoming = self.n + r;
                        if self.pos[incoming] != NONE {
                            return Err(LpError::Numerical("singular basis could not be repaired".into()));
                        }
                        self.make_nonbasic(out);
                        self.basis[p] = incoming;
                        self.pos[incoming] = p;
                        self.state[incoming] = State::Basic;
                    }
                }
            }
        }
        self.recompute_primal();
        self.recompute_duals();
        Ok(())
    }

    /// Moves a column out of the basis onto its nearest bound.
    fn make_nonbasic(&mut self, j: usize) {
        self.pos[j] = NONE;
        let (l, u, v) = (self.lower[j], self.upper[j], self.x[j]);
        self.state[j] = if l.is_finite() && (!u.is_finite() || (v - l).abs() <= (u - v).abs()) {
            State::Lower
        } else if u.is_finite() {
            State::Upper
        } else {
            State::Free
        };
        self.x[j] = match self.state[j] {
            State::Lower => l,
            State::Upper => u,
            _ => v,
        };
    }

    fn recompute_primal(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                let v = self.x[j];
                for (i, a) in self.column(j) {
                    rhs[i] -= a * v;
                }
            }
        }
        let mut xb = vec![0.0; self.m];
        self.lu.ftran(&mut rhs, &mut xb);
        for (p, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[p];
        }
    }

    fn recompute_duals(&mut self) {
        let mut cb: Vec<f64> = self.basis.iter().map(|&j| self.cost[j]).collect();
        let mut y = vec![0.0; self.m];
        self.lu.btran(&mut cb, &mut y);
        self.y = y;
        for j in 0..self.n + self.m {
            self.d[j] = if self.state[j] == State::Basic {
                0.0
            } else {
                self.cost[j] - self.column(j).map(|(i, a)| a * self.y[i]).sum::<f64>()
            };
        }
    }

    fn ftran_column(&self, j: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; self.m];
        for (i, a) in self.column(j) {
            rhs[i] = a;
        }
        let mut out = vec![0.0; self.m];
        self.lu.ftran(&mut rhs, &mut out);
        out
    }

    /// Fills `row_buf` with row `r` of `B^{-1} A` for nonbasic columns.
    fn compute_pivot_row(&mut self, r: usize) {
        for &j in &self.row_touched {
            self.row_buf[j] = 0.0;
            self.row_mark[j] = false;
        }
        self.row_touched.clear();
        let mut e = vec![0.0; self.m];
        e[r] = 1.0;
        let mut rho = vec![0.0; self.m];
        self.lu.btran(&mut e, &mut rho);
        for (i, &ri) in rho.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            for &(j, a) in &self.rows[i] {
                if !self.row_mark[j] {
                    self.row_mark[j] = true;
                    self.row_touched.push(j);
                }
                self.row_buf[j] += ri * a;
            }
            let lj = self.n + i;
            self.row_buf[lj] = -ri;
            self.row_mark[lj] = true;
            self.row_touched.push(lj);
        }
    }

    fn bound_tol(&self, b: f64) -> f64 {
        self.tol_p * (1.0 + b.abs())
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        if v < self.lower[j] - self.bound_tol(self.lower[j]) {
            self.lower[j] - v
        } else if v > self.upper[j] + self.bound_tol(self.upper[j]) {
            v - self.upper[j]
        } else {
            0.0
        }
    }

    fn primal_infeasible_count(&self) -> usize {
        (0..self.n + self.m).filter(|&j| self.infeasibility(j) > 0.0).count()
    }

    fn dual_violation(&self, j: usize) -> f64 {
        let d = self.d[j];
        match self.state[j] {
            State::Basic => 0.0,
            _ if self.lower[j] == self.upper[j] => 0.0,
            State::Lower => (-d).max(0.0),
            State::Upper => d.max(0.0),
            State::Free => {
                let mut v = 0.0f64;
                if self.x[j] < self.upper[j] {
                    v = v.max(-d);
                }
                if self.x[j] > self.lower[j] {
                    v = v.max(d);
                }
                v
            }
        }
    }

    fn dual_infeasible(&self) -> bool {
        (0..self.n + self.m).any(|j| self.dual_violation(j) > self.tol_d)
    }

    /// Puts every dual infeasible nonbasic column on the bound its reduced
    /// cost prefers, introducing a temporary bound where none exists.
    fn make_dual_feasible(&mut self) {
        let mut moved = false;
        for j in 0..self.n + self.m {
            if self.state[j] == State::Basic || self.dual_violation(j) <= self.tol_d {
                continue;
            }
            if self.d[j] < 0.0 {
                if !self.upper[j].is_finite() {
                    self.upper[j] = self.x[j].max(self.lower[j]).max(0.0) + ARTIFICIAL_BOUND;
                    self.artificial = true;
                }
                self.state[j] = State::Upper;
                self.x[j] = self.upper[j];
            } else {
                if !self.lower[j].is_finite() {
                    self.lower[j] = self.x[j].min(self.upper[j]).min(0.0) - ARTIFICIAL_BOUND;
                    self.artificial = true;
                }
                self.state[j] = State::Lower;
                self.x[j] = self.lower[j];
            }
            moved = true;
        }
        if moved {
            self.recompute_primal();
        }
    }

    fn release_artificial_bounds(&mut self) {
        if !self.artificial {
            return;
        }
        for j in 0..self.n + self.m {
            if self.lower[j] != self.true_lower[j] || self.upper[j] != self.true_upper[j] {
                self.lower[j] = self.true_lower[j];
                self.upper[j] = self.true_upper[j];
                if self.state[j] == State::Lower && self.x[j] != self.lower[j]
                    || self.state[j] == State::Upper && self.x[j] != self.upper[j]
                {
                    self.state[j] = State::Free;
                }
            }
        }
        self.artificial = false;
    }

    fn check_iterations(&self) -> Result<(), LpError> {
        if self.iterations >= self.max_iterations {
            Err(LpError::IterationLimit(self.max_iterations))
        } else {
            Ok(())
        }
    }

    /// Replaces the basic column at position `r` by column `q`.
    fn change_basis(&mut self, r: usize, q: usize, leaving_state: State, alpha: &[f64]) {
        let leaving = self.basis[r];
        self.state[leaving] = leaving_state;
        self.pos[leaving] = NONE;
        self.state[q] = State::Basic;
        self.pos[q] = r;
        self.basis[r] = q;
        self.lu.update(r, alpha);
        self.iterations += 1;
    }

    fn dual_phase(&mut self) -> Result<Outcome, LpError> {
        let mut degenerate_run = 0usize;
        let mut retried = false;
        loop {
            self.check_iterations()?;
            if self.needs_refactor() {
                self.refactor()?;
            }

            // Leaving row: largest bound violation, ties to lowest column index;
            // under the anti-cycling rule, the lowest infeasible column index.
            let mut leave: Option<(usize, f64)> = None;
            for p in 0..self.m {
                let j = self.basis[p];
                let inf = self.infeasibility(j);
                if inf <= 0.0 {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some((bp, bv)) => {
                        let bj = self.basis[bp];
                        if self.bland {
                            j < bj
                        } else {
                            inf > bv || (inf == bv && j < bj)
                        }
                    }
                };
                if better {
                    leave = Some((p, inf));
                }
            }
            let Some((r, _)) = leave else {
                return Ok(Outcome::Optimal);
            };
            let p_var = self.basis[r];
            let to_upper = self.x[p_var] > self.upper[p_var];
            let s = if to_upper { 1.0 } else { -1.0 };

            self.compute_pivot_row(r);

            // Two-pass ratio test with bounded dual infeasibility.
            let mut theta_max = f64::INFINITY;
            let mut cands: Vec<(usize, f64, f64)> = Vec::new(); // (col, ratio, |alpha|)
            for &j in &self.row_touched {
                if self.state[j] == State::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let at = s * self.row_buf[j];
                if at.abs() <= PIVOT_TOL {
                    continue;
                }
                let d = self.d[j];
                let slack = match self.state[j] {
                    State::Lower if at > 0.0 => d.max(0.0),
                    State::Upper if at < 0.0 => (-d).max(0.0),
                    State::Free => {
                        if (at > 0.0 && self.x[j] >= self.upper[j])
                            || (at < 0.0 && self.x[j] <= self.lower[j])
                        {
                            continue;
                        }
                        d.abs()
                    }
                    _ => continue,
                };
                let ratio = slack / at.abs();
                theta_max = theta_max.min((slack + self.tol_d) / at.abs());
                cands.push((j, ratio, at.abs()));
            }
            if cands.is_empty() {
                return Ok(Outcome::Infeasible { var: p_var });
            }
            let q = if self.bland {
                cands
                    .iter()
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .unwrap()
                    .0
            } else {
                cands
                    .iter()
                    .filter(|c| c.1 <= theta_max)
                    .max_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0
            };
            let alpha_q = self.row_buf[q];
            let col = self.ftran_column(q);
            let alpha_r = col[r];
            if (alpha_r - alpha_q).abs() > 1e-7 * (1.0 + alpha_r.abs()) && !retried {
                retried = true;
                self.refactor()?;
                continue;
            }
            retried = false;
            if alpha_r.abs() <= PIVOT_TOL * 1e-3 {
                return Err(LpError::Numerical("vanishing pivot in dual simplex".into()));
            }

            // Primal update.
            let bound = if to_upper { self.upper[p_var] } else { self.lower[p_var] };
            let delta = (self.x[p_var] - bound) / alpha_r;
            let entering_was_free = self.state[q] == State::Free;
            self.x[q] += delta;
            for (i, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    let j = self.basis[i];
                    self.x[j] -= delta * a;
                }
            }
            self.x[p_var] = bound;

            // Dual update.
            let t = self.d[q] / alpha_r;
            for &j in &self.row_touched {
                if self.state[j] != State::Basic {
                    self.d[j] -= t * self.row_buf[j];
                }
            }
            self.d[q] = 0.0;
            self.d[p_var] = -t;

            let leaving_state = if to_upper { State::Upper } else { State::Lower };
            self.change_basis(r, q, leaving_state, &col);

            if t.abs() < 1e-12 && !entering_was_free {
                degenerate_run += 1;
                if degenerate_run > STALL_LIMIT {
                    self.bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
    }

    fn primal_phase(&mut self) -> Result<Outcome, LpError> {
        loop {
            self.check_iterations()?;
            if self.needs_refactor() {
                self.refactor()?;
            } else {
                self.recompute_duals();
            }
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                let v = self.dual_violation(j);
                if v <= self.tol_d {
                    continue;
                }
                let better = match enter {
                    None => true,
                    Some((_, bv)) => !self.bland && v > bv,
                };
                if better {
                    enter = Some((j, v));
                }
            }
            let Some((q, _)) = enter else {
                return Ok(Outcome::Optimal);
            };
            let dir = if self.d[q] < 0.0 { 1.0 } else { -1.0 };
            let col = self.ftran_column(q);
            match self.primal_step(q, dir, &col, true)? {
                Step::Unbounded => return Ok(Outcome::Unbounded),
                Step::Moved => {}
            }
        }
    }

    /// Moves column `q` in direction `dir` until a basic column or `q` itself
    /// reaches a bound.
    fn primal_step(&mut self, q: usize, dir: f64, col: &[f64], allow_flip: bool) -> Result<Step, LpError> {
        let own = if dir > 0.0 {
            self.upper[q] - self.x[q]
        } else {
            self.x[q] - self.lower[q]
        };
        let own = if allow_flip { own.max(0.0) } else { f64::INFINITY };
        let mut best: Option<(usize, f64, f64, bool)> = None; // (pos, ratio, |a|, to_lower)
        for (i, &a0) in col.iter().enumerate() {
            let a = dir * a0;
            if a.abs() <= PIVOT_TOL {
                continue;
            }
            let j = self.basis[i];
            let (ratio, to_lower) = if a > 0.0 {
                if !self.lower[j].is_finite() {
                    continue;
                }
                ((self.x[j] - self.lower[j]).max(0.0) / a, true)
            } else {
                if !self.upper[j].is_finite() {
                    continue;
                }
                ((self.upper[j] - self.x[j]).max(0.0) / -a, false)
            };
            let better = match best {
                None => true,
                Some((bp, br, ba, _)) => {
                    let bj = self.basis[bp];
                    if self.bland {
                        ratio < br || (ratio == br && j < bj)
                    } else {
                        ratio < br
                            || (ratio == br && (a.abs() > ba || (a.abs() == ba && j < bj)))
                    }
                }
            };
            if better {
                best = Some((i, ratio, a.abs(), to_lower));
            }
        }
        let limit = best.map_or(f64::INFINITY, |b| b.1);
        if !own.is_finite() && !limit.is_finite() {
            return Ok(Step::Unbounded);
        }
        if own <= limit {
            // Bound flip: `q` reaches its own bound and stays nonbasic.
            let t = own;
            for (i, &a) in col.iter().enumerate() {
                if a != 0.0 {
                    let j = self.basis[i];
                    self.x[j] -= dir * t * a;
                }
            }
            if dir > 0.0 {
                self.x[q] = self.upper[q];
                self.state[q] = State::Upper;
            } else {
                self.x[q] = self.lower[q];
                self.state[q] = State::Lower;
            }
            self.iterations += 1;
            return Ok(Step::Moved);
        }
        let (r, t, _, to_lower) = best.unwrap();
        let leaving = self.basis[r];
        self.x[q] += dir * t;
        for (i, &a) in col.iter().enumerate() {
            if a != 0.0 {
                let j = self.basis[i];
                self.x[j] -= dir * t * a;
            }
        }
        let leaving_state = if to_lower {
            self.x[leaving] = self.lower[leaving];
            State::Lower
        } else {
            self.x[leaving] = self.upper[leaving];
            State::Upper
        };
        self.change_basis(r, q, leaving_state, col);
        Ok(Step::Moved)
    }

    /// Pivots nonbasic columns that sit away from their bounds into the basis
    /// (or onto a bound), so the final solution is basic.
    fn pivot_in_free(&mut self) -> Result<(), LpError> {
        for q in 0..self.n + self.m {
            if self.state[q] != State::Free {
                continue;
            }
            self.check_iterations()?;
            if self.needs_refactor() {
                self.refactor()?;
            }
            let col = self.ftran_column(q);
            for dir in [1.0, -1.0] {
                if let Step::Moved = self.primal_step(q, dir, &col, true)? {
                    break;
                }
            }
        }
        Ok(())
    }
}

enum Step {
    Moved,
    Unbounded,
}

enum ColumnIter<'a> {
    Structural(std::slice::Iter<'a, (usize, f64)>),
    Logical(Option<usize>),
}

impl Iterator for ColumnIter<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColumnIter::Structural(it) => it.next().copied(),
            ColumnIter::Logical(row) => row.take().map(|i| (i, -1.0)),
        }
    }
}
