//! Lossless DC optimal power flow and locational marginal prices.
//!
//! Angles enter the model scaled by the base power (`psi = base * theta`), so
//! a branch flow in MW is `(psi_from - psi_to) / x` and every coefficient
//! stays near the size of the inverse reactance.

use std::io::{self, Write};

use serde::Serialize;

use crate::case::{build_adjacency, BusKind, NetworkCase};
use crate::lp::{solve_lp_from, Basis, InfeasibilityHint, LpError, LpModel, LpStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpfError {
    #[error("network is not connected ({0} components)")]
    Disconnected(usize),
    #[error("no reference bus and no bus hosting an in-service generator")]
    NoSlack,
    #[error("requested slack bus {0} does not exist")]
    UnknownSlack(u32),
    #[error("branch {branch}: reactance {reactance} must be positive")]
    BadReactance { branch: u32, reactance: f64 },
    #[error("OPF is infeasible (near {0})")]
    Infeasible(String),
    #[error("OPF is unbounded")]
    Unbounded,
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfOptions {
    /// Bus id whose angle is pinned; `None` applies the default rule.
    pub slack: Option<u32>,
    /// Flow margin (MW) under which a rated branch counts as binding.
    pub binding_tol: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            slack: None,
            binding_tol: 1e-6,
        }
    }
}

/// Where each grid element lives in the LP produced by [`formulate_dcopf`].
#[derive(Debug, Clone, PartialEq)]
pub struct OpfIndex {
    /// Output variable per generator (`None` when out of service).
    pub generator_var: Vec<Option<usize>>,
    /// Cost segment variables per generator; empty for single-slope costs.
    pub segment_vars: Vec<Vec<usize>>,
    /// Scaled angle variable per bus.
    pub angle_var: Vec<usize>,
    /// Balance equality per bus.
    pub balance_row: Vec<usize>,
    /// Equality pinning the slack angle to zero.
    pub slack_row: usize,
    /// Position of the slack bus.
    pub slack_bus: usize,
    /// Upper and lower flow inequalities per rated in-service branch.
    pub flow_rows: Vec<Option<(usize, usize)>>,
    /// Equalities tying a segmented generator's output to its segments.
    pub link_rows: Vec<Option<usize>>,
}

impl OpfIndex {
    fn describe(&self, case: &NetworkCase, hint: InfeasibilityHint) -> String {
        match hint {
            InfeasibilityHint::Equality(i) => {
                if let Some(n) = self.balance_row.iter().position(|&r| r == i) {
                    format!("balance of bus {}", case.buses[n].id)
                } else if i == self.slack_row {
                    "slack angle".to_string()
                } else if let Some(g) = self.link_rows.iter().position(|&r| r == Some(i)) {
                    format!("cost segments of generator {}", case.generators[g].id)
                } else {
                    format!("equality {i}")
                }
            }
            InfeasibilityHint::Inequality(i) => {
                match self
                    .flow_rows
                    .iter()
                    .position(|r| matches!(r, Some((a, b)) if *a == i || *b == i))
                {
                    Some(b) => format!("rating of branch {}", case.branches[b].id),
                    None => format!("inequality {i}"),
                }
            }
            InfeasibilityHint::Variable(v) => {
                if let Some(g) = self.generator_var.iter().position(|&x| x == Some(v)) {
                    format!("limits of generator {}", case.generators[g].id)
                } else {
                    format!("variable {v}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcOpfSolution {
    pub bus_ids: Vec<u32>,
    pub generator_ids: Vec<u32>,
    pub branch_ids: Vec<u32>,
    /// MW per generator, zero for out-of-service units.
    pub dispatch: Vec<f64>,
    /// Marginal cost of each generator dispatched strictly inside its limits.
    pub marginal_cost: Vec<Option<f64>>,
    /// Radians per bus; the slack angle is exactly zero.
    pub angles: Vec<f64>,
    /// MW per branch in the from-to direction, zero when out of service.
    pub flows: Vec<f64>,
    pub ratings: Vec<Option<f64>>,
    /// Currency/MWh per bus.
    pub lmp: Vec<f64>,
    /// Ids of rated branches at their limit, ascending.
    pub binding_branches: Vec<u32>,
    /// Currency/h.
    pub objective: f64,
    pub slack_bus: u32,
    pub iterations: usize,
}

/// Picks the reference bus: the lowest-id bus marked as reference, else the
/// lowest-id bus with an in-service generator.
pub fn default_slack(case: &NetworkCase) -> Option<u32> {
    let reference = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Reference)
        .map(|b| b.id)
        .min();
    reference.or_else(|| {
        case.generators
            .iter()
            .filter(|g| g.in_service)
            .map(|g| g.bus)
            .min()
    })
}

/// Builds the OPF linear program. Variables are generator outputs (plus cost
/// segments for piecewise-linear costs) and scaled bus angles; equalities are
/// one balance per bus, `Σ gen - Σ outgoing flow = demand`, and the slack pin;
/// inequalities bound the flow of every rated in-service branch from both
/// sides.
pub fn formulate_dcopf(
    case: &NetworkCase,
    options: &OpfOptions,
) -> Result<(LpModel, OpfIndex), OpfError> {
    let comps = build_adjacency(case).components();
    if comps.len() > 1 {
        return Err(OpfError::Disconnected(comps.len()));
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        if !(br.reactance > 0.0) {
            return Err(OpfError::BadReactance {
                branch: br.id,
                reactance: br.reactance,
            });
        }
    }
    let index = case.bus_index();
    let slack_id = match options.slack {
        Some(id) if index.contains_key(&id) => id,
        Some(id) => return Err(OpfError::UnknownSlack(id)),
        None => default_slack(case).ok_or(OpfError::NoSlack)?,
    };
    let slack_bus = index[&slack_id];

    let mut lp = LpModel::new();
    let ng = case.generators.len();
    let mut generator_var = vec![None; ng];
    let mut segment_vars = vec![Vec::new(); ng];
    let mut link_terms: Vec<Option<crate::lp::Terms>> = vec![None; ng];
    let mut link_rhs = vec![0.0; ng];
    for (g, gen) in case.generators.iter().enumerate() {
        if !gen.in_service {
            continue;
        }
        let segs = gen.cost.segments(gen.p_min, gen.p_max);
        if segs.len() == 1 {
            let v = lp.add_var(gen.p_min, gen.p_max, segs[0].slope);
            lp.add_objective_offset(gen.cost.eval(gen.p_min) - segs[0].slope * gen.p_min);
            generator_var[g] = Some(v);
        } else {
            let v = lp.add_var(gen.p_min, gen.p_max, 0.0);
            lp.add_objective_offset(gen.cost.eval(gen.p_min));
            let mut terms = vec![(v, 1.0)];
            for s in &segs {
                let sv = lp.add_var(0.0, s.length, s.slope);
                segment_vars[g].push(sv);
                terms.push((sv, -1.0));
            }
            generator_var[g] = Some(v);
            link_terms[g] = Some(terms);
            link_rhs[g] = gen.p_min;
        }
    }
    let angle_var: Vec<usize> = (0..case.buses.len())
        .map(|_| lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0))
        .collect();

    let mut balance: Vec<crate::lp::Terms> = vec![Vec::new(); case.buses.len()];
    for (g, gen) in case.generators.iter().enumerate() {
        if let Some(v) = generator_var[g] {
            balance[index[&gen.bus]].push((v, 1.0));
        }
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        let b = 1.0 / br.reactance;
        // Flow f->t leaves bus f and enters bus t.
        balance[f].push((angle_var[f], -b));
        balance[f].push((angle_var[t], b));
        balance[t].push((angle_var[f], b));
        balance[t].push((angle_var[t], -b));
    }
    let balance_row: Vec<usize> = balance
        .into_iter()
        .zip(&case.buses)
        .map(|(terms, bus)| lp.add_eq(terms, bus.demand))
        .collect();
    let slack_row = lp.add_eq(vec![(angle_var[slack_bus], 1.0)], 0.0);
    let mut link_rows = vec![None; ng];
    for g in 0..ng {
        if let Some(terms) = link_terms[g].take() {
            link_rows[g] = Some(lp.add_eq(terms, link_rhs[g]));
        }
    }

    let mut flow_rows = vec![None; case.branches.len()];
    for (k, br) in case.branches.iter().enumerate() {
        let Some(rating) = br.rating.filter(|_| br.in_service) else {
            continue;
        };
        let f = angle_var[index[&br.from_bus]];
        let t = angle_var[index[&br.to_bus]];
        let b = 1.0 / br.reactance;
        let up = lp.add_le(vec![(f, b), (t, -b)], rating);
        let down = lp.add_le(vec![(f, -b), (t, b)], rating);
        flow_rows[k] = Some((up, down));
    }

    Ok((
        lp,
        OpfIndex {
            generator_var,
            segment_vars,
            angle_var,
            balance_row,
            slack_row,
            slack_bus,
            flow_rows,
            link_rows,
        },
    ))
}

pub fn solve_dcopf(case: &NetworkCase) -> Result<DcOpfSolution, OpfError> {
    solve_dcopf_with(case, &OpfOptions::default())
}

pub fn solve_dcopf_with(case: &NetworkCase, options: &OpfOptions) -> Result<DcOpfSolution, OpfError> {
    solve_dcopf_from(case, options, None).map(|(sol, _)| sol)
}

/// Solves starting from the basis of an earlier solve of the same network,
/// typically one that differs only in generator limits. Returns the final
/// basis alongside the solution.
pub fn solve_dcopf_from(
    case: &NetworkCase,
    options: &OpfOptions,
    start: Option<&Basis>,
) -> Result<(DcOpfSolution, Basis), OpfError> {
    let (lp, idx) = formulate_dcopf(case, options)?;
    let (sol, basis) = solve_lp_from(&lp, &SolverOptions::default(), start)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            let near = sol
                .hint
                .map(|h| idx.describe(case, h))
                .unwrap_or_else(|| "unknown element".into());
            return Err(OpfError::Infeasible(near));
        }
        LpStatus::Unbounded => return Err(OpfError::Unbounded),
    }

    let dispatch: Vec<f64> = idx
        .generator_var
        .iter()
        .map(|v| v.map_or(0.0, |v| sol.x[v]))
        .collect();
    let marginal_cost = case
        .generators
        .iter()
        .zip(&dispatch)
        .map(|(g, &p)| {
            let tol = options.binding_tol;
            (g.in_service && p > g.p_min + tol && p < g.p_max - tol).then(|| g.cost.marginal(p, tol))
        })
        .collect();
    let psi: Vec<f64> = idx.angle_var.iter().map(|&v| sol.x[v]).collect();
    let mut angles: Vec<f64> = psi.iter().map(|p| p / case.base_power).collect();
    angles[idx.slack_bus] = 0.0;
    let index = case.bus_index();
    let flows: Vec<f64> = case
        .branches
        .iter()
        .map(|br| {
            if br.in_service {
                (psi[index[&br.from_bus]] - psi[index[&br.to_bus]]) / br.reactance
            } else {
                0.0
            }
        })
        .collect();
    let lmp: Vec<f64> = idx
        .balance_row
        .iter()
        .map(|&r| snap_price(sol.eq_duals[r]))
        .collect();
    let mut out = DcOpfSolution {
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        generator_ids: case.generators.iter().map(|g| g.id).collect(),
        branch_ids: case.branches.iter().map(|b| b.id).collect(),
        dispatch,
        marginal_cost,
        angles,
        flows,
        ratings: case
            .branches
            .iter()
            .map(|b| b.rating.filter(|_| b.in_service))
            .collect(),
        lmp,
        binding_branches: Vec::new(),
        objective: sol.objective,
        slack_bus: case.buses[idx.slack_bus].id,
        iterations: sol.iterations,
    };
    out.binding_branches = detect_congestion(&out, options.binding_tol);
    Ok((out, basis))
}

/// Rounds a price to the nearest multiple of 1e-9. Factorization noise in
/// the duals would otherwise split buses with equal prices into different
/// zones.
pub fn snap_price(p: f64) -> f64 {
    (p * PRICE_GRID).round() / PRICE_GRID + 0.0
}

const PRICE_GRID: f64 = 1e9;

/// Rated branches whose flow magnitude is within `tol` MW of the rating.
pub fn detect_congestion(sol: &DcOpfSolution, tol: f64) -> Vec<u32> {
    let mut ids: Vec<u32> = sol
        .branch_ids
        .iter()
        .zip(&sol.flows)
        .zip(&sol.ratings)
        .filter_map(|((&id, &f), r)| match r {
            Some(r) if f.abs() >= r - tol => Some(id),
            _ => None,
        })
        .collect();
    ids.sort_unstable();
    ids
}

/// Formats a float for artifacts: shortest round-trip text, no negative zero.
pub fn fmt_num(v: f64) -> String {
    format!("{}", v + 0.0)
}

pub fn write_lmp_csv<W: Write>(sol: &DcOpfSolution, mut w: W) -> io::Result<()> {
    writeln!(w, "bus_id,lmp")?;
    for (id, p) in sol.bus_ids.iter().zip(&sol.lmp) {
        writeln!(w, "{id},{}", fmt_num(*p))?;
    }
    Ok(())
}

/// Writes `generator_id,bus_id,dispatch,marginal_cost`; the last column is
/// empty for units at a limit.
pub fn write_dispatch_csv<W: Write>(sol: &DcOpfSolution, gen_buses: &[u32], mut w: W) -> io::Result<()> {
    writeln!(w, "generator_id,bus_id,dispatch,marginal_cost")?;
    for (((id, bus), p), mc) in sol
        .generator_ids
        .iter()
        .zip(gen_buses)
        .zip(&sol.dispatch)
        .zip(&sol.marginal_cost)
    {
        let mc = mc.map(fmt_num).unwrap_or_default();
        writeln!(w, "{id},{bus},{},{mc}", fmt_num(*p))?;
    }
    Ok(())
}

pub fn write_flow_csv<W: Write>(sol: &DcOpfSolution, mut w: W) -> io::Result<()> {
    writeln!(w, "branch_id,flow,rating,binding")?;
    for ((id, f), r) in sol.branch_ids.iter().zip(&sol.flows).zip(&sol.ratings) {
        let rating = r.map(fmt_num).unwrap_or_default();
        let binding = sol.binding_branches.binary_search(id).is_ok();
        writeln!(w, "{id},{},{rating},{binding}", fmt_num(*f))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpfSummary {
    pub status: LpStatus,
    pub objective: f64,
    pub slack_bus: u32,
    pub binding_branches: Vec<u32>,
    pub iterations: usize,
}

pub fn summary(sol: &DcOpfSolution) -> OpfSummary {
    OpfSummary {
        status: LpStatus::Optimal,
        objective: sol.objective + 0.0,
        slack_bus: sol.slack_bus,
        binding_branches: sol.binding_branches.clone(),
        iterations: sol.iterations,
    }
}
