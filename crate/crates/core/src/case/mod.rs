//! Transmission network case: buses, generators, branches and their costs.
//!
//! Cases are read from MATPOWER-style text (see [`parse_case`]) and are
//! treated as immutable values afterwards; every transformation returns a
//! new case.

mod attach;
mod graph;
mod parse;
mod validate;

pub use attach::{attach_wind_farms, WindBranchParams};
pub use graph::{build_adjacency, AdjacencyGraph};
pub use parse::{load_coordinates, parse_case, parse_case_with, serialize_case, ParseOptions};
pub use validate::{validate_case, ValidationReport, Violation};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing table `mpc.{0}`")]
    MissingTable(&'static str),
    #[error("{table} row {row}: {message}")]
    BadRow {
        table: &'static str,
        row: usize,
        message: String,
    },
    #[error("{table} row {row} references bus {bus}, which is not in the bus table")]
    DanglingBus {
        table: &'static str,
        row: usize,
        bus: u32,
    },
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("coordinates file line {line}: {message}")]
    Coordinates { line: usize, message: String },
    #[error("no bus with voltage level in {levels:?} kV has coordinates")]
    NoEligibleBus { levels: Vec<f64> },
    #[error("wind farm `{0}` has no usable coordinates")]
    FarmWithoutCoordinates(String),
}

/// Planar coordinates of a bus, farm or station.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Load,
    Generator,
    Reference,
    Isolated,
}

impl BusKind {
    fn from_code(code: f64) -> Self {
        match code as i64 {
            2 => BusKind::Generator,
            3 => BusKind::Reference,
            4 => BusKind::Isolated,
            _ => BusKind::Load,
        }
    }

    fn code(self) -> f64 {
        match self {
            BusKind::Load => 1.0,
            BusKind::Generator => 2.0,
            BusKind::Reference => 3.0,
            BusKind::Isolated => 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Active power demand in MW.
    pub demand: f64,
    /// Nominal voltage in kV.
    pub voltage_level: f64,
    pub coords: Option<Point>,
    /// Every column of the source row; unmodelled columns are written back
    /// unchanged on serialization.
    pub raw: Vec<f64>,
}

/// Generator cost as a function of active output.
#[derive(Debug, Clone, PartialEq)]
pub enum CostCurve {
    /// `offset + slope * p`.
    Linear { slope: f64, offset: f64 },
    /// Breakpoints `(p, cost)` with strictly increasing `p`.
    Piecewise { points: Vec<(f64, f64)> },
}

/// One linear piece of a cost curve restricted to the generator's range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSegment {
    pub length: f64,
    pub slope: f64,
}

impl CostCurve {
    pub fn zero() -> Self {
        CostCurve::Linear {
            slope: 0.0,
            offset: 0.0,
        }
    }

    /// Slopes of consecutive pieces (a single entry for linear costs).
    pub fn slopes(&self) -> Vec<f64> {
        match self {
            CostCurve::Linear { slope, .. } => vec![*slope],
            CostCurve::Piecewise { points } => points
                .windows(2)
                .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                .collect(),
        }
    }

    pub fn is_convex(&self) -> bool {
        let slopes = self.slopes();
        slopes.iter().all(|s| s.is_finite()) && slopes.windows(2).all(|w| w[1] >= w[0] - 1e-12)
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            CostCurve::Linear { slope, offset } => offset + slope * p,
            CostCurve::Piecewise { points } => {
                let n = points.len();
                if n == 1 {
                    return points[0].1;
                }
                // Extend the first and last pieces beyond the breakpoints.
                let k = points
                    .windows(2)
                    .position(|w| p <= w[1].0)
                    .unwrap_or(n - 2);
                let (x0, y0) = points[k];
                let (x1, y1) = points[k + 1];
                y0 + (p - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Marginal cost at output `p`, taking the right derivative at breakpoints.
    pub fn marginal(&self, p: f64, tol: f64) -> f64 {
        match self {
            CostCurve::Linear { slope, .. } => *slope,
            CostCurve::Piecewise { points } => {
                let slopes = self.slopes();
                if slopes.is_empty() {
                    return 0.0;
                }
                let k = points
                    .windows(2)
                    .position(|w| p < w[1].0 - tol)
                    .unwrap_or(slopes.len() - 1);
                slopes[k]
            }
        }
    }

    /// Splits the curve over `[p_min, p_max]` into consecutive linear pieces.
    pub fn segments(&self, p_min: f64, p_max: f64) -> Vec<CostSegment> {
        match self {
            CostCurve::Linear { slope, .. } => vec![CostSegment {
                length: p_max - p_min,
                slope: *slope,
            }],
            CostCurve::Piecewise { points } => {
                if points.len() < 2 {
                    return vec![CostSegment {
                        length: p_max - p_min,
                        slope: 0.0,
                    }];
                }
                let slopes = self.slopes();
                let last = points.len() - 1;
                let mut out = Vec::new();
                for (k, &slope) in slopes.iter().enumerate() {
                    let lo = if k == 0 { f64::NEG_INFINITY } else { points[k].0 };
                    let hi = if k + 1 == last {
                        f64::INFINITY
                    } else {
                        points[k + 1].0
                    };
                    let a = lo.max(p_min);
                    let b = hi.min(p_max);
                    if b > a {
                        out.push(CostSegment {
                            length: b - a,
                            slope,
                        });
                    }
                }
                if out.is_empty() {
                    out.push(CostSegment {
                        length: 0.0,
                        slope: self.marginal(p_min, 0.0),
                    });
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// 1-based position in the generator table.
    pub id: u32,
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    pub cost: CostCurve,
    pub in_service: bool,
    /// Set for generators created by [`attach_wind_farms`].
    pub wind_farm: Option<String>,
    pub raw: Vec<f64>,
    /// Raw gencost row, kept for serialization of unmodelled columns.
    pub raw_cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// 1-based position in the branch table.
    pub id: u32,
    pub from_bus: u32,
    pub to_bus: u32,
    /// Series reactance in per unit.
    pub reactance: f64,
    /// Long-term rating in MW; `None` means unlimited.
    pub rating: Option<f64>,
    pub in_service: bool,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    /// System base in MVA.
    pub base_power: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
}

impl NetworkCase {
    /// Map from bus id to its position in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.demand).sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators
            .iter()
            .filter(|g| g.in_service)
            .map(|g| g.p_max)
            .sum()
    }

    /// Assigns coordinates to buses; ids not present in the case are ignored.
    pub fn with_coordinates(mut self, coords: &HashMap<u32, Point>) -> Self {
        for bus in &mut self.buses {
            if let Some(p) = coords.get(&bus.id) {
                bus.coords = Some(*p);
            }
        }
        self
    }
}
