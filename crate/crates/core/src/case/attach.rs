use super::{Branch, Bus, BusKind, CaseError, CostCurve, Generator, NetworkCase};
use crate::wind::WindFarm;

/// Electrical parameters of the branch that links a farm to the grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct WindBranchParams {
    /// Series reactance in per unit.
    pub reactance: f64,
    /// Rating in MW; `None` leaves the branch unlimited.
    pub rating: Option<f64>,
    /// Voltage levels (kV) a farm may connect to.
    pub eligible_levels: Vec<f64>,
}

impl Default for WindBranchParams {
    fn default() -> Self {
        Self {
            reactance: 0.01,
            rating: Some(1000.0),
            eligible_levels: vec![220.0, 400.0],
        }
    }
}

/// Adds one bus, one branch and one zero-cost generator per farm. Each farm
/// bus is linked to the nearest eligible bus; equidistant candidates resolve
/// to the lowest bus id.
pub fn attach_wind_farms(
    case: &NetworkCase,
    farms: &[WindFarm],
    params: &WindBranchParams,
) -> Result<NetworkCase, CaseError> {
    let mut out = case.clone();
    if farms.is_empty() {
        return Ok(out);
    }
    let eligible: Vec<&Bus> = case
        .buses
        .iter()
        .filter(|b| {
            b.coords.is_some()
                && params
                    .eligible_levels
                    .iter()
                    .any(|kv| (b.voltage_level - kv).abs() < 0.5)
        })
        .collect();
    if eligible.is_empty() {
        return Err(CaseError::NoEligibleBus {
            levels: params.eligible_levels.clone(),
        });
    }

    let mut next_bus = case.buses.iter().map(|b| b.id).max().unwrap_or(0) + 1;
    for farm in farms {
        if !farm.coords.is_finite() {
            return Err(CaseError::FarmWithoutCoordinates(farm.id.clone()));
        }
        let target = eligible
            .iter()
            .map(|b| (b.coords.unwrap().distance(&farm.coords), b))
            .min_by(|(da, a), (db, b)| da.total_cmp(db).then(a.id.cmp(&b.id)))
            .map(|(_, b)| *b)
            .unwrap();

        let bus_id = next_bus;
        next_bus += 1;
        out.buses.push(Bus {
            id: bus_id,
            kind: BusKind::Generator,
            demand: 0.0,
            voltage_level: target.voltage_level,
            coords: Some(farm.coords),
            raw: vec![
                bus_id as f64, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0,
                target.voltage_level, 1.0, 1.1, 0.9,
            ],
        });
        let rating = params.rating.unwrap_or(0.0);
        out.branches.push(Branch {
            id: out.branches.len() as u32 + 1,
            from_bus: bus_id,
            to_bus: target.id,
            reactance: params.reactance,
            rating: params.rating,
            in_service: true,
            raw: vec![
                bus_id as f64, target.id as f64, 0.0, params.reactance, 0.0, rating, rating,
                rating, 0.0, 0.0, 1.0, -360.0, 360.0,
            ],
        });
        out.generators.push(Generator {
            id: out.generators.len() as u32 + 1,
            bus: bus_id,
            p_min: 0.0,
            p_max: farm.capacity,
            cost: CostCurve::zero(),
            in_service: true,
            wind_farm: Some(farm.id.clone()),
            raw: vec![
                bus_id as f64, 0.0, 0.0, 0.0, 0.0, 1.0, case.base_power, 1.0, farm.capacity, 0.0,
            ],
            raw_cost: vec![2.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        });
    }
    Ok(out)
}
