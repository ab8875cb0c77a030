//! Wind measurements, farm output model and per-scenario generator limits.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Datelike, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{NetworkCase, Point};

#[derive(Debug, Error, PartialEq)]
pub enum WindError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no wind scenario left after filtering")]
    Empty,
    #[error("no weather stations to assign farms to")]
    NoStations,
    #[error("wind farm `{0}` has no assigned station")]
    Unassigned(String),
    #[error("station `{station}` has no reading in scenario `{scenario}`")]
    MissingReading { station: String, scenario: String },
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("no generator belongs to wind farm `{0}`")]
    NoFarmGenerator(String),
}

/// Logistic farm power curve `capacity / (1 + scale * exp(-steepness * v))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub scale: f64,
    pub steepness: f64,
}

impl Default for PowerCurve {
    /// Fit for a 3 MW class turbine.
    fn default() -> Self {
        Self {
            scale: 439.0,
            steepness: 0.8,
        }
    }
}

impl PowerCurve {
    pub fn output(&self, speed: f64, capacity: f64) -> f64 {
        capacity / (1.0 + self.scale * (-self.steepness * speed).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherStation {
    pub id: String,
    pub coords: Point,
    /// Anemometer height in meters.
    pub measurement_height: f64,
}

/// Station wind speeds (m/s, at measurement height) for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct WindScenario {
    pub id: String,
    pub speeds: BTreeMap<String, f64>,
}

impl WindScenario {
    /// Every station reads `speed`.
    pub fn uniform(id: &str, stations: &[WeatherStation], speed: f64) -> Self {
        Self {
            id: id.to_string(),
            speeds: stations.iter().map(|s| (s.id.clone(), speed)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindFarm {
    pub id: String,
    pub coords: Point,
    /// Installed capacity in MW.
    pub capacity: f64,
    /// Turbine hub height in meters.
    pub hub_height: f64,
    pub assigned_station: Option<String>,
    /// Overrides the shared power curve for this farm.
    pub curve: Option<PowerCurve>,
}

impl WindFarm {
    pub fn new(id: &str, coords: Point, capacity: f64) -> Self {
        Self {
            id: id.to_string(),
            coords,
            capacity,
            hub_height: DEFAULT_HUB_HEIGHT,
            assigned_station: None,
            curve: None,
        }
    }
}

pub const DEFAULT_HUB_HEIGHT: f64 = 80.0;
pub const DEFAULT_MEASUREMENT_HEIGHT: f64 = 10.0;
pub const DEFAULT_HELLMAN_EXPONENT: f64 = 1.0 / 7.0;

/// Calendar restriction applied while loading weather data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DateFilter {
    /// Months (1-12) to keep; empty keeps all.
    #[serde(default)]
    pub months: Vec<u32>,
    /// Inclusive year range.
    #[serde(default)]
    pub years: Option<(i32, i32)>,
}

impl DateFilter {
    pub fn accepts(&self, date: NaiveDate) -> bool {
        (self.months.is_empty() || self.months.contains(&date.month()))
            && self
                .years
                .map_or(true, |(lo, hi)| (lo..=hi).contains(&date.year()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherOptions {
    pub filter: DateFilter,
    pub measurement_height: f64,
    /// Scenarios missing readings from a larger share of stations are dropped.
    pub max_missing_fraction: f64,
}

impl Default for WeatherOptions {
    fn default() -> Self {
        Self {
            filter: DateFilter::default(),
            measurement_height: DEFAULT_MEASUREMENT_HEIGHT,
            max_missing_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub stations: Vec<WeatherStation>,
    /// One scenario per retained date, in date order.
    pub scenarios: Vec<WindScenario>,
    /// Dates discarded for missing too many readings.
    pub dropped: Vec<String>,
}

/// Reads `station_id,x,y,date,wind_speed_ms` rows into daily scenarios.
///
/// A station without a reading on some date is imputed with its mean over
/// the retained rows; dates lacking more than `max_missing_fraction` of the
/// stations are dropped.
pub fn load_weather_series(text: &str, opts: &WeatherOptions) -> Result<WeatherSeries, WindError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut coords: BTreeMap<String, Point> = BTreeMap::new();
    let mut readings: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| WindError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_err = |message: String| WindError::Row { line, message };
        if rec.len() != 5 {
            return Err(row_err(format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |k: usize, what: &str| -> Result<f64, WindError> {
            rec[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| row_err(format!("invalid {what} `{}`", &rec[k])))
        };
        let station = rec[0].to_string();
        if station.is_empty() {
            return Err(row_err("empty station id".into()));
        }
        let p = Point::new(num(1, "x")?, num(2, "y")?);
        let date = NaiveDate::parse_from_str(&rec[3], "%Y-%m-%d")
            .map_err(|_| row_err(format!("invalid date `{}`", &rec[3])))?;
        let speed = num(4, "wind speed")?;
        if speed < 0.0 {
            return Err(row_err(format!("negative wind speed {speed}")));
        }
        match coords.get(&station) {
            Some(q) if *q != p => {
                return Err(row_err(format!("station `{station}` moved")));
            }
            Some(_) => {}
            None => {
                coords.insert(station.clone(), p);
            }
        }
        if !opts.filter.accepts(date) {
            continue;
        }
        if readings
            .entry(date)
            .or_default()
            .insert(station.clone(), speed)
            .is_some()
        {
            return Err(row_err(format!("duplicate reading for `{station}` on {date}")));
        }
    }

    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for day in readings.values() {
        for (s, v) in day {
            let e = sums.entry(s.as_str()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let means: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(s, (sum, n))| (s.to_string(), sum / n as f64))
        .collect();
    let stations: Vec<WeatherStation> = means
        .keys()
        .map(|id| WeatherStation {
            id: id.clone(),
            coords: coords[id],
            measurement_height: opts.measurement_height,
        })
        .collect();

    let mut scenarios = Vec::new();
    let mut dropped = Vec::new();
    for (date, day) in readings {
        let id = date.format("%Y-%m-%d").to_string();
        let missing = stations.len() - day.len();
        if missing as f64 > opts.max_missing_fraction * stations.len() as f64 {
            warn!(
                "dropping scenario {id}: {missing} of {} stations missing",
                stations.len()
            );
            dropped.push(id);
            continue;
        }
        let speeds = means
            .iter()
            .map(|(s, mean)| (s.clone(), day.get(s).copied().unwrap_or(*mean)))
            .collect();
        scenarios.push(WindScenario { id, speeds });
    }
    if scenarios.is_empty() {
        return Err(WindError::Empty);
    }
    Ok(WeatherSeries {
        stations,
        scenarios,
        dropped,
    })
}

/// Reads `farm_id,x,y,capacity_mw,hub_height_m`; an empty hub height
/// falls back to the default.
pub fn load_farms(text: &str) -> Result<Vec<WindFarm>, WindError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut farms = Vec::new();
    let mut ids = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| WindError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_err = |message: String| WindError::Row { line, message };
        if rec.len() < 4 {
            return Err(row_err("expected farm_id,x,y,capacity_mw[,hub_height_m]".into()));
        }
        let num = |k: usize| -> Result<f64, WindError> {
            rec[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| row_err(format!("invalid number `{}`", &rec[k])))
        };
        let mut farm = WindFarm::new(&rec[0], Point::new(num(1)?, num(2)?), num(3)?);
        if rec.len() > 4 && !rec[4].is_empty() {
            farm.hub_height = num(4)?;
        }
        if !(farm.capacity > 0.0) || !(farm.hub_height > 0.0) {
            return Err(row_err("capacity and hub height must be positive".into()));
        }
        if !ids.insert(farm.id.clone()) {
            return Err(row_err(format!("duplicate farm id `{}`", farm.id)));
        }
        farms.push(farm);
    }
    Ok(farms)
}

/// Assigns each farm its nearest station (Euclidean); ties go to the
/// lexicographically smallest station id.
pub fn assign_stations(
    farms: &[WindFarm],
    stations: &[WeatherStation],
) -> Result<Vec<WindFarm>, WindError> {
    if stations.is_empty() {
        return Err(WindError::NoStations);
    }
    Ok(farms
        .iter()
        .map(|f| {
            let nearest = stations
                .iter()
                .min_by(|a, b| {
                    a.coords
                        .distance(&f.coords)
                        .total_cmp(&b.coords.distance(&f.coords))
                        .then_with(|| a.id.cmp(&b.id))
                })
                .unwrap();
            WindFarm {
                assigned_station: Some(nearest.id.clone()),
                ..f.clone()
            }
        })
        .collect())
}

/// Power-law vertical extrapolation of wind speed from height `h0` to `h`.
pub fn extrapolate_speed(v0: f64, h0: f64, h: f64, alpha: f64) -> f64 {
    v0 * (h / h0).powf(alpha)
}

/// Farm output (MW) under the default power curve.
pub fn farm_power(speed: f64, capacity: f64) -> f64 {
    PowerCurve::default().output(speed, capacity)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    /// Hellman exponent.
    pub alpha: f64,
    pub curve: PowerCurve,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_HELLMAN_EXPONENT,
            curve: PowerCurve::default(),
        }
    }
}

fn farm_generators(
    case: &NetworkCase,
    farms: &[WindFarm],
) -> Result<Vec<(usize, usize)>, WindError> {
    let by_farm: HashMap<&str, usize> = case
        .generators
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.wind_farm.as_deref().map(|f| (f, i)))
        .collect();
    farms
        .iter()
        .enumerate()
        .map(|(k, f)| {
            by_farm
                .get(f.id.as_str())
                .map(|&g| (k, g))
                .ok_or_else(|| WindError::NoFarmGenerator(f.id.clone()))
        })
        .collect()
}

/// Sets every farm generator's upper limit to the output implied by the
/// scenario; everything else in the case is left untouched.
pub fn apply_scenario(
    case: &NetworkCase,
    farms: &[WindFarm],
    stations: &[WeatherStation],
    scenario: &WindScenario,
    params: &WindParams,
) -> Result<NetworkCase, WindError> {
    let heights: HashMap<&str, f64> = stations
        .iter()
        .map(|s| (s.id.as_str(), s.measurement_height))
        .collect();
    let mut out = case.clone();
    for (k, g) in farm_generators(case, farms)? {
        let farm = &farms[k];
        let station = farm
            .assigned_station
            .as_deref()
            .ok_or_else(|| WindError::Unassigned(farm.id.clone()))?;
        let h0 = *heights
            .get(station)
            .ok_or_else(|| WindError::UnknownStation(station.to_string()))?;
        let v0 = *scenario
            .speeds
            .get(station)
            .ok_or_else(|| WindError::MissingReading {
                station: station.to_string(),
                scenario: scenario.id.clone(),
            })?;
        let v = extrapolate_speed(v0, h0, farm.hub_height, params.alpha);
        let curve = farm.curve.unwrap_or(params.curve);
        let gen = &mut out.generators[g];
        gen.p_min = 0.0;
        gen.p_max = curve.output(v, farm.capacity);
    }
    Ok(out)
}

/// Every farm available at full capacity.
pub fn apply_full_output(case: &NetworkCase, farms: &[WindFarm]) -> Result<NetworkCase, WindError> {
    let mut out = case.clone();
    for (k, g) in farm_generators(case, farms)? {
        out.generators[g].p_min = 0.0;
        out.generators[g].p_max = farms[k].capacity;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{attach_wind_farms, parse_case, WindBranchParams};

    #[test]
    fn extrapolation_examples() {
        // 8^(1/7) = exp(ln 8 / 7) = 1.3459001926...
        let v = extrapolate_speed(10.0, 10.0, 80.0, 1.0 / 7.0);
        assert!((v - 13.459).abs() < 1e-3, "{v}");
        assert_eq!(extrapolate_speed(7.3, 55.0, 55.0, 0.3), 7.3);
        assert_eq!(extrapolate_speed(7.3, 10.0, 80.0, 0.0), 7.3);
    }

    #[test]
    fn power_curve_examples() {
        assert_eq!(farm_power(0.0, 120.0), 120.0 / 440.0);
        assert!((farm_power(40.0, 120.0) - 120.0).abs() / 120.0 < 1e-6);
        // 439 e^{-0.8 v} = 1  <=>  v = ln(439) / 0.8 = 6.08450 / 0.8 = 7.6056
        let v_half = 439f64.ln() / 0.8;
        assert!((v_half - 7.6056).abs() < 1e-4, "{v_half}");
        assert!((farm_power(v_half, 120.0) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn nearest_station() {
        let st = |id: &str, x, y| WeatherStation {
            id: id.into(),
            coords: Point::new(x, y),
            measurement_height: 10.0,
        };
        let farm = WindFarm::new("f", Point::new(0.0, 0.0), 10.0);
        let out = assign_stations(&[farm.clone()], &[st("b", 0.0, 2.0), st("a", 1.0, 0.0)]).unwrap();
        assert_eq!(out[0].assigned_station.as_deref(), Some("a"));
        let out = assign_stations(&[farm.clone()], &[st("z", 0.0, 0.0), st("a", 1.0, 0.0)]).unwrap();
        assert_eq!(out[0].assigned_station.as_deref(), Some("z"));
        let out = assign_stations(&[farm.clone()], &[st("q", 0.0, 3.0), st("p", 3.0, 0.0)]).unwrap();
        assert_eq!(out[0].assigned_station.as_deref(), Some("p"));
        assert_eq!(assign_stations(&[farm], &[]), Err(WindError::NoStations));
    }

    #[test]
    fn weather_two_dates() {
        let text = "station_id,x,y,date,wind_speed_ms\nA,0,0,2010-01-02,5.5\nA,0,0,2010-01-01,3\n";
        let series = load_weather_series(text, &WeatherOptions::default()).unwrap();
        assert_eq!(series.scenarios.len(), 2);
        assert_eq!(series.scenarios[0].id, "2010-01-01");
        assert_eq!(series.scenarios[1].speeds["A"], 5.5);
        assert_eq!(series.stations.len(), 1);
    }

    #[test]
    fn weather_negative_speed_names_row() {
        let text = "station_id,x,y,date,wind_speed_ms\nA,0,0,2010-01-02,5.5\nA,0,0,2010-01-03,-1\n";
        match load_weather_series(text, &WeatherOptions::default()) {
            Err(WindError::Row { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("negative"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weather_filter_and_imputation() {
        let mut text = String::from("station_id,x,y,date,wind_speed_ms\n");
        for (s, d, v) in [
            ("A", "2011-11-30", 2.0),
            ("B", "2011-11-30", 4.0),
            ("C", "2011-11-30", 6.0),
            ("D", "2011-11-30", 1.0),
            ("E", "2011-11-30", 1.0),
            ("A", "2011-12-01", 4.0),
            ("B", "2011-12-01", 8.0),
            ("C", "2011-12-01", 6.0),
            ("D", "2011-12-01", 3.0),
            ("A", "2011-12-02", 9.0),
            ("B", "2011-12-02", 9.0),
            ("C", "2011-12-02", 9.0),
            ("A", "2011-06-01", 100.0),
        ] {
            text.push_str(&format!("{s},0,0,{d},{v}\n"));
        }
        let opts = WeatherOptions {
            filter: DateFilter {
                months: vec![11, 12, 1, 2],
                years: Some((2007, 2012)),
            },
            ..WeatherOptions::default()
        };
        let series = load_weather_series(&text, &opts).unwrap();
        // 2011-12-02 misses 2 of 5 stations (40% > 20%) and is dropped.
        assert_eq!(series.dropped, vec!["2011-12-02".to_string()]);
        assert_eq!(series.scenarios.len(), 2);
        // E is imputed on 2011-12-01 with its mean over retained rows (1.0).
        assert_eq!(series.scenarios[1].speeds["E"], 1.0);
        // June reading is filtered out before computing A's mean.
        assert_eq!(series.scenarios[1].speeds["A"], 4.0);

        let none = WeatherOptions {
            filter: DateFilter {
                months: vec![7],
                years: None,
            },
            ..WeatherOptions::default()
        };
        assert_eq!(load_weather_series(&text, &none), Err(WindError::Empty));
    }

    #[test]
    fn farm_csv() {
        let farms = load_farms("farm_id,x,y,capacity_mw,hub_height_m\nf1,1,2,120,\nf2,0,0,30,100\n").unwrap();
        assert_eq!(farms[0].hub_height, 80.0);
        assert_eq!(farms[1].hub_height, 100.0);
        assert!(load_farms("farm_id,x,y,capacity_mw\nf1,1,2,-3\n").is_err());
    }

    fn wind_case() -> (NetworkCase, Vec<WindFarm>, Vec<WeatherStation>) {
        let text = "mpc.bus = [1 3 50 0 0 0 1 1 0 400; 2 1 50 0 0 0 1 1 0 220];
mpc.gen = [1 0 0 0 0 1 100 1 200 10];
mpc.branch = [1 2 0 0.1 0 100];
mpc.gencost = [2 0 0 2 30 0];";
        let mut coords = HashMap::new();
        coords.insert(1, Point::new(0.0, 0.0));
        coords.insert(2, Point::new(10.0, 0.0));
        let case = parse_case(text).unwrap().with_coordinates(&coords);
        let stations = vec![
            WeatherStation {
                id: "s1".into(),
                coords: Point::new(0.0, 1.0),
                measurement_height: 10.0,
            },
            WeatherStation {
                id: "s2".into(),
                coords: Point::new(10.0, 1.0),
                measurement_height: 10.0,
            },
        ];
        let farms = vec![
            WindFarm::new("west", Point::new(1.0, 1.0), 120.0),
            WindFarm::new("east", Point::new(9.0, 1.0), 44.0),
        ];
        let farms = assign_stations(&farms, &stations).unwrap();
        let case = attach_wind_farms(&case, &farms, &WindBranchParams::default()).unwrap();
        (case, farms, stations)
    }

    #[test]
    fn calm_and_gale_scenarios() {
        let (case, farms, stations) = wind_case();
        let params = WindParams::default();
        let calm = apply_scenario(&case, &farms, &stations, &WindScenario::uniform("calm", &stations, 0.0), &params).unwrap();
        assert_eq!(calm.generators[1].p_max, 120.0 / 440.0);
        assert_eq!(calm.generators[2].p_max, 44.0 / 440.0);
        let gale = apply_scenario(&case, &farms, &stations, &WindScenario::uniform("gale", &stations, 40.0), &params).unwrap();
        assert!((gale.generators[1].p_max - 120.0).abs() < 1e-6);
        // Non-wind data stays bit-identical.
        assert_eq!(gale.generators[0], case.generators[0]);
        assert_eq!(gale.buses, case.buses);
        assert_eq!(gale.branches, case.branches);
        assert_eq!(gale.total_demand(), case.total_demand());
    }

    #[test]
    fn per_farm_curve_override() {
        let (case, mut farms, stations) = wind_case();
        farms[1].curve = Some(PowerCurve {
            scale: 1.0,
            steepness: 1.0,
        });
        let out = apply_scenario(&case, &farms, &stations, &WindScenario::uniform("calm", &stations, 0.0), &WindParams::default()).unwrap();
        assert_eq!(out.generators[2].p_max, 22.0);
    }

    #[test]
    fn missing_reading_and_assignment() {
        let (case, farms, stations) = wind_case();
        let mut sc = WindScenario::uniform("x", &stations, 3.0);
        sc.speeds.remove("s2");
        assert!(matches!(
            apply_scenario(&case, &farms, &stations, &sc, &WindParams::default()),
            Err(WindError::MissingReading { .. })
        ));
        let mut unassigned = farms.clone();
        unassigned[0].assigned_station = None;
        assert_eq!(
            apply_scenario(&case, &unassigned, &stations, &WindScenario::uniform("x", &stations, 3.0), &WindParams::default()),
            Err(WindError::Unassigned("west".into()))
        );
    }

    #[test]
    fn full_output() {
        let (case, farms, _) = wind_case();
        let out = apply_full_output(&case, &farms).unwrap();
        assert_eq!(out.generators[1].p_max, 120.0);
        assert_eq!(out.generators[2].p_max, 44.0);
    }
}
