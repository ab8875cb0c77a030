use std::fmt;

use super::{build_adjacency, NetworkCase};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// The in-service branch graph has several components, listed by bus id.
    Disconnected { components: Vec<Vec<u32>> },
    BoundOrder { generator: u32, p_min: f64, p_max: f64 },
    NegativeLowerBound { generator: u32, p_min: f64 },
    NonPositiveReactance { branch: u32, reactance: f64 },
    SelfLoop { branch: u32, bus: u32 },
    NonConvexCost { generator: u32 },
    NonFiniteCost { generator: u32 },
    InvalidDemand { bus: u32, demand: f64 },
    NoGenerator,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Disconnected { components } => {
                write!(f, "network has {} components:", components.len())?;
                for c in components {
                    let shown: Vec<String> = c.iter().take(8).map(|b| b.to_string()).collect();
                    let more = if c.len() > 8 { ", ..." } else { "" };
                    write!(f, " [{}{more}]", shown.join(", "))?;
                }
                Ok(())
            }
            Violation::BoundOrder { generator, p_min, p_max } => {
                write!(f, "generator {generator}: p_min {p_min} exceeds p_max {p_max}")
            }
            Violation::NegativeLowerBound { generator, p_min } => {
                write!(f, "generator {generator}: negative p_min {p_min}")
            }
            Violation::NonPositiveReactance { branch, reactance } => {
                write!(f, "branch {branch}: reactance {reactance} is not positive")
            }
            Violation::SelfLoop { branch, bus } => {
                write!(f, "branch {branch}: both ends at bus {bus}")
            }
            Violation::NonConvexCost { generator } => {
                write!(f, "generator {generator}: cost curve is not convex")
            }
            Violation::NonFiniteCost { generator } => {
                write!(f, "generator {generator}: cost has non-finite slope")
            }
            Violation::InvalidDemand { bus, demand } => {
                write!(f, "bus {bus}: demand {demand} is negative or not finite")
            }
            Violation::NoGenerator => write!(f, "case has no in-service generator"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Collects every modelling problem in the case. Violations are returned,
/// never raised.
pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut violations = Vec::new();

    for b in &case.buses {
        if !(b.demand.is_finite() && b.demand >= 0.0) {
            violations.push(Violation::InvalidDemand {
                bus: b.id,
                demand: b.demand,
            });
        }
    }
    for g in &case.generators {
        if g.p_min > g.p_max {
            violations.push(Violation::BoundOrder {
                generator: g.id,
                p_min: g.p_min,
                p_max: g.p_max,
            });
        }
        if g.p_min < 0.0 {
            violations.push(Violation::NegativeLowerBound {
                generator: g.id,
                p_min: g.p_min,
            });
        }
        if g.cost.slopes().iter().any(|s| !s.is_finite()) {
            violations.push(Violation::NonFiniteCost { generator: g.id });
        } else if !g.cost.is_convex() {
            violations.push(Violation::NonConvexCost { generator: g.id });
        }
    }
    if !case.generators.iter().any(|g| g.in_service) {
        violations.push(Violation::NoGenerator);
    }
    for br in &case.branches {
        if br.from_bus == br.to_bus {
            violations.push(Violation::SelfLoop {
                branch: br.id,
                bus: br.from_bus,
            });
        }
        if !(br.reactance > 0.0) {
            violations.push(Violation::NonPositiveReactance {
                branch: br.id,
                reactance: br.reactance,
            });
        }
    }

    let graph = build_adjacency(case);
    let comps = graph.components();
    if comps.len() > 1 {
        let components = comps
            .into_iter()
            .map(|c| c.into_iter().map(|i| case.buses[i].id).collect())
            .collect();
        violations.push(Violation::Disconnected { components });
    }

    ValidationReport { violations }
}
