//! Independent reference implementations and data generators for the
//! integration tests. Nothing here calls into the solver, clustering or
//! consensus code it is used to check.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gridzones::case::{parse_case, AdjacencyGraph, CostCurve, NetworkCase};
use gridzones::partition::Partition;
use num_rational::Rational64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected edge list: a random tree plus each remaining pair with
/// probability `extra`.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, extra: f64) -> Vec<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.insert((j, i));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(extra) {
                edges.insert((a, b));
            }
        }
    }
    edges.into_iter().collect()
}

/// Small MATPOWER case with integer demands, limits and linear costs.
/// Branches are rated with probability `rated`; unrated ones are unlimited.
pub fn random_case(rng: &mut ChaCha8Rng, rated: f64) -> NetworkCase {
    let n = rng.gen_range(3..=6);
    let mut text = String::from("mpc.baseMVA = 100;\nmpc.bus = [\n");
    for i in 0..n {
        let kind = if i == 0 { 3 } else { 1 };
        let _ = writeln!(text, "{} {kind} {} 0 0 0 1 1 0 400;", i + 1, rng.gen_range(0..=80));
    }
    text.push_str("];\nmpc.gen = [\n");
    let g = rng.gen_range(1..=4);
    let mut costs = String::new();
    for _ in 0..g {
        let bus = rng.gen_range(1..=n);
        let pmin = if rng.gen_bool(0.3) { rng.gen_range(0..=20) } else { 0 };
        let pmax = pmin + rng.gen_range(20..=200);
        let _ = writeln!(text, "{bus} 0 0 0 0 1 100 1 {pmax} {pmin};");
        let _ = writeln!(costs, "2 0 0 2 {} 0;", rng.gen_range(1..=50));
    }
    text.push_str("];\nmpc.branch = [\n");
    for (a, b) in random_edges(rng, n, 0.3) {
        let x = rng.gen_range(1..=10);
        let rate = if rng.gen_bool(rated) { rng.gen_range(10..=150) } else { 0 };
        let _ = writeln!(text, "{} {} 0 0.{x:02} 0 {rate} 0 0 0 0 1;", a + 1, b + 1);
    }
    let _ = write!(text, "];\nmpc.gencost = [\n{costs}];\n");
    parse_case(&text).expect("generated case parses")
}

/// Dense Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn subsets(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// Optimum of a DC OPF found by enumerating every vertex of the dispatch
/// polytope, plus every optimal dual vertex expressed as nodal prices.
#[derive(Debug, Clone)]
pub struct OpfOracle {
    pub objective: f64,
    /// Distinct optimal vertices, one dispatch entry per generator.
    pub dispatches: Vec<Vec<f64>>,
    /// Distinct optimal dual vertices as prices per bus.
    pub lmps: Vec<Vec<f64>>,
}

struct Row {
    a: Vec<f64>,
    b: f64,
    /// Derivative of `b` with respect to each bus demand.
    db: Vec<f64>,
}

/// Brute-force DC OPF for cases with linear costs and in-service units.
///
/// Angles are eliminated through transfer factors, which leaves an LP in the
/// dispatch alone: one energy balance row plus generator bounds and two rows
/// per rated branch. A vertex makes G−1 of those inequalities tight.
/// Returns `None` when the case is infeasible.
pub fn opf_oracle(case: &NetworkCase) -> Option<OpfOracle> {
    const TOL: f64 = 1e-7;
    let n = case.buses.len();
    let index = case.bus_index();
    let mut bmat = vec![vec![0.0; n]; n];
    for br in case.branches.iter().filter(|b| b.in_service) {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let y = 1.0 / br.reactance;
        bmat[f][f] += y;
        bmat[t][t] += y;
        bmat[f][t] -= y;
        bmat[t][f] -= y;
    }
    // Reactance matrix with bus 0 as reference: solve the reduced system for
    // each unit injection.
    let red: Vec<Vec<f64>> = (1..n).map(|i| (1..n).map(|j| bmat[i][j]).collect()).collect();
    let mut xmat = vec![vec![0.0; n]; n];
    for k in 1..n {
        let rhs: Vec<f64> = (1..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
        let col = solve_dense(red.clone(), rhs).expect("connected network");
        for i in 1..n {
            xmat[i][k] = col[i - 1];
        }
    }
    let gens: Vec<(usize, f64, f64, f64)> = case
        .generators
        .iter()
        .map(|g| {
            assert!(g.in_service);
            let slope = match g.cost {
                CostCurve::Linear { slope, .. } => slope,
                _ => panic!("oracle handles linear costs only"),
            };
            (index[&g.bus], g.p_min, g.p_max, slope)
        })
        .collect();
    let ng = gens.len();
    let demand: Vec<f64> = case.buses.iter().map(|b| b.demand).collect();
    let total: f64 = demand.iter().sum();

    let mut rows = Vec::new();
    for (g, &(_, pmin, pmax, _)) in gens.iter().enumerate() {
        let mut a = vec![0.0; ng];
        a[g] = 1.0;
        rows.push(Row { a: a.clone(), b: pmax, db: vec![0.0; n] });
        a[g] = -1.0;
        rows.push(Row { a, b: -pmin, db: vec![0.0; n] });
    }
    for br in case.branches.iter().filter(|b| b.in_service) {
        let Some(rating) = br.rating else { continue };
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let h: Vec<f64> = (0..n).map(|k| (xmat[f][k] - xmat[t][k]) / br.reactance).collect();
        let hg: Vec<f64> = gens.iter().map(|g| h[g.0]).collect();
        let hd: f64 = h.iter().zip(&demand).map(|(a, b)| a * b).sum();
        rows.push(Row { a: hg.clone(), b: rating + hd, db: h.clone() });
        rows.push(Row {
            a: hg.iter().map(|v| -v).collect(),
            b: rating - hd,
            db: h.iter().map(|v| -v).collect(),
        });
    }

    let cost = |p: &[f64]| p.iter().zip(&gens).map(|(p, g)| p * g.3).sum::<f64>();
    let mut vertices: Vec<(f64, Vec<f64>)> = Vec::new();
    subsets(rows.len(), ng - 1, &mut |s| {
        let mut a = vec![vec![1.0; ng]];
        let mut b = vec![total];
        for &i in s {
            a.push(rows[i].a.clone());
            b.push(rows[i].b);
        }
        if let Some(p) = solve_dense(a, b) {
            let feasible = rows
                .iter()
                .all(|r| r.a.iter().zip(&p).map(|(a, x)| a * x).sum::<f64>() <= r.b + TOL);
            if feasible {
                vertices.push((cost(&p), p));
            }
        }
    });
    let best = vertices.iter().map(|v| v.0).min_by(f64::total_cmp)?;
    let mut dispatches: Vec<Vec<f64>> = Vec::new();
    for (c, p) in &vertices {
        if (c - best).abs() <= TOL * (1.0 + best.abs())
            && !dispatches.iter().any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() < TOL))
        {
            dispatches.push(p.clone());
        }
    }

    let x = &dispatches[0];
    let active: Vec<usize> = (0..rows.len())
        .filter(|&i| (rows[i].a.iter().zip(x).map(|(a, p)| a * p).sum::<f64>() - rows[i].b).abs() <= TOL)
        .collect();
    let c: Vec<f64> = gens.iter().map(|g| g.3).collect();
    let mut lmps: Vec<Vec<f64>> = Vec::new();
    subsets(active.len(), ng - 1, &mut |s| {
        // Stationarity: c = y0 * 1 + Σ y_i a_i with every y_i ≤ 0.
        let cols: Vec<&Vec<f64>> = s.iter().map(|&i| &rows[active[i]].a).collect();
        let a: Vec<Vec<f64>> = (0..ng)
            .map(|g| std::iter::once(1.0).chain(cols.iter().map(|col| col[g])).collect())
            .collect();
        let Some(y) = solve_dense(a, c.clone()) else { return };
        if y[1..].iter().any(|&v| v > 1e-9) {
            return;
        }
        let lmp: Vec<f64> = (0..n)
            .map(|k| y[0] + s.iter().zip(&y[1..]).map(|(&i, yi)| yi * rows[active[i]].db[k]).sum::<f64>())
            .collect();
        if !lmps.iter().any(|q| q.iter().zip(&lmp).all(|(a, b)| (a - b).abs() < 1e-7)) {
            lmps.push(lmp);
        }
    });
    Some(OpfOracle {
        objective: best,
        dispatches,
        lmps,
    })
}

/// `Σ (p - mean)^2` in exact arithmetic.
pub fn exact_ess(prices: &[i64]) -> Rational64 {
    let n = prices.len() as i64;
    let mean = Rational64::new(prices.iter().sum(), n);
    prices
        .iter()
        .map(|&p| {
            let d = Rational64::from_integer(p) - mean;
            d * d
        })
        .sum()
}

/// Ward agglomeration that recomputes the full ESS of every adjacent
/// candidate at every step. Returns `(left, right, increase)` per merge using
/// creation indices; ties go to the smallest `(left, right)`.
pub fn naive_ward(prices: &[i64], edges: &[(usize, usize)]) -> Vec<(usize, usize, Rational64)> {
    let n = prices.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut owner = vec![0; n];
        for (ci, (_, m)) in clusters.iter().enumerate() {
            for &v in m {
                owner[v] = ci;
            }
        }
        let mut pairs = BTreeSet::new();
        for &(a, b) in edges {
            let (x, y) = (owner[a], owner[b]);
            if x != y {
                pairs.insert((x.min(y), x.max(y)));
            }
        }
        let members = |ci: usize| -> Vec<i64> { clusters[ci].1.iter().map(|&v| prices[v]).collect() };
        let mut best: Option<(Rational64, (usize, usize), (usize, usize))> = None;
        for (x, y) in pairs {
            let (ix, iy) = (clusters[x].0, clusters[y].0);
            let key = (ix.min(iy), ix.max(iy));
            let mut joint = members(x);
            joint.extend(members(y));
            let delta = exact_ess(&joint) - exact_ess(&members(x)) - exact_ess(&members(y));
            if best.as_ref().map_or(true, |(d, k, _)| delta < *d || (delta == *d && key < *k)) {
                best = Some((delta, key, (x, y)));
            }
        }
        let (delta, key, (x, y)) = best.expect("connected graph");
        let mut merged = clusters[x].1.clone();
        merged.extend(clusters[y].1.iter().copied());
        let id = n + out.len();
        out.push((key.0, key.1, delta));
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((id, merged));
    }
    out
}

/// [`naive_ward`] for real-valued prices, with the ESS of every candidate
/// recomputed directly from member prices in floating point.
pub fn naive_ward_f64(prices: &[f64], edges: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let ess = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
    };
    let n = prices.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, (usize, usize), (usize, usize))> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (a, b) = (&clusters[x].1, &clusters[y].1);
                if !edges.iter().any(|&(u, v)| (a.contains(&u) && b.contains(&v)) || (a.contains(&v) && b.contains(&u))) {
                    continue;
                }
                let pa: Vec<f64> = a.iter().map(|&v| prices[v]).collect();
                let pb: Vec<f64> = b.iter().map(|&v| prices[v]).collect();
                let joint: Vec<f64> = pa.iter().chain(&pb).copied().collect();
                let delta = ess(&joint) - ess(&pa) - ess(&pb);
                let key = (clusters[x].0.min(clusters[y].0), clusters[x].0.max(clusters[y].0));
                if best.map_or(true, |(d, k, _)| delta < d - 1e-9 || ((delta - d).abs() <= 1e-9 && key < k)) {
                    best = Some((delta, key, (x, y)));
                }
            }
        }
        let (delta, key, (x, y)) = best.expect("connected graph");
        let mut merged = clusters[x].1.clone();
        merged.extend(clusters[y].1.iter().copied());
        out.push((key.0, key.1, delta));
        let id = n + out.len() - 1;
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((id, merged));
    }
    out
}

/// Co-assignment count of two nodes over an ensemble.
pub fn pair_count(parts: &[Partition], u: usize, v: usize) -> u64 {
    parts.iter().filter(|p| p.label(u) == p.label(v)).count() as u64
}

/// Mean ensemble similarity between two node sets, averaged entry by entry
/// in floating point.
pub fn mean_similarity(parts: &[Partition], a: &[usize], b: &[usize]) -> f64 {
    let m = parts.len() as f64;
    let mut s = 0.0;
    for &u in a {
        for &v in b {
            s += pair_count(parts, u, v) as f64 / m;
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Average-linkage consensus computed from scratch at every step. Returns
/// the member sets merged at each step and the final partition.
pub fn naive_consensus(
    parts: &[Partition],
    k: usize,
    edges: Option<&[(usize, usize)]>,
) -> (Vec<(Vec<usize>, Vec<usize>)>, Option<Partition>) {
    let n = parts[0].len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > k {
        let mut best: Option<(u128, u128, (usize, usize), (usize, usize))> = None;
        for x in 0..clusters.len() {
            for y in x + 1..clusters.len() {
                let (a, b) = (&clusters[x].1, &clusters[y].1);
                if let Some(edges) = edges {
                    let joined = edges.iter().any(|&(u, v)| {
                        (a.contains(&u) && b.contains(&v)) || (a.contains(&v) && b.contains(&u))
                    });
                    if !joined {
                        continue;
                    }
                }
                let sum: u128 = a
                    .iter()
                    .flat_map(|&u| b.iter().map(move |&v| (u, v)))
                    .map(|(u, v)| pair_count(parts, u, v) as u128)
                    .sum();
                let size = (a.len() * b.len()) as u128;
                let (ix, iy) = (clusters[x].0, clusters[y].0);
                let key = (ix.min(iy), ix.max(iy));
                let better = match &best {
                    None => true,
                    Some((s2, z2, k2, _)) => sum * z2 > s2 * size || (sum * z2 == s2 * size && key < *k2),
                };
                if better {
                    best = Some((sum, size, key, (x, y)));
                }
            }
        }
        let Some((_, _, _, (x, y))) = best else {
            return (merges, None);
        };
        let mut a = clusters[x].1.clone();
        let mut b = clusters[y].1.clone();
        a.sort_unstable();
        b.sort_unstable();
        merges.push((a.clone(), b.clone()));
        a.extend(b);
        let id = n + merges.len() - 1;
        clusters.remove(y);
        clusters.remove(x);
        clusters.push((id, a));
    }
    let mut labels = vec![0; n];
    for (z, (_, m)) in clusters.iter().enumerate() {
        for &v in m {
            labels[v] = z;
        }
    }
    (merges, Some(Partition::canonical_from(&labels).unwrap()))
}

/// Random partition of `n` nodes into at most `k` labels.
pub fn random_partition(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Partition {
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    Partition::canonical_from(&labels).unwrap()
}

/// Breadth-first check that every zone induces a connected subgraph.
pub fn zones_connected_bfs(p: &Partition, graph: &AdjacencyGraph) -> bool {
    for zone in p.zones() {
        let inside: BTreeSet<usize> = zone.iter().copied().collect();
        let mut seen = BTreeSet::from([zone[0]]);
        let mut queue = vec![zone[0]];
        while let Some(v) = queue.pop() {
            for &w in graph.neighbors(v) {
                if inside.contains(&w) && seen.insert(w) {
                    queue.push(w);
                }
            }
        }
        if seen.len() != zone.len() {
            return false;
        }
    }
    true
}

/// Files of a synthetic study written by [`write_synthetic_grid`].
#[derive(Debug, Clone)]
pub struct SyntheticGrid {
    pub case: PathBuf,
    pub coordinates: PathBuf,
    pub farms: PathBuf,
    pub weather: PathBuf,
    pub buses: usize,
}

/// Writes a `side × side` meshed grid with 400 kV spines every fifth row and
/// column, thermal units on about one bus in seven, `farms` wind farms and
/// `days` daily readings from a 5 × 5 station network.
pub fn write_synthetic_grid(dir: &Path, side: usize, farms: usize, days: usize, seed: u64) -> SyntheticGrid {
    let mut rng = rng(seed);
    let n = side * side;
    let id = |r: usize, c: usize| r * side + c + 1;
    let spine = |r: usize, c: usize| r % 5 == 0 || c % 5 == 0;
    let mut text = String::from("function mpc = synthetic\nmpc.baseMVA = 100;\nmpc.bus = [\n");
    let mut coords = String::from("bus_id,x,y\n");
    for r in 0..side {
        for c in 0..side {
            let kind = if r == 0 && c == 0 { 3 } else { 1 };
            let kv = if spine(r, c) { 400 } else { 220 };
            let _ = writeln!(text, "{} {kind} {} 0 0 0 1 1 0 {kv};", id(r, c), rng.gen_range(2..=18));
            let _ = writeln!(coords, "{},{},{}", id(r, c), c * 10, r * 10);
        }
    }
    text.push_str("];\nmpc.gen = [\n");
    let mut costs = String::new();
    for b in 1..=n {
        if b % 7 == 1 {
            let pmax = rng.gen_range(60..=150);
            let _ = writeln!(text, "{b} 0 0 0 0 1 100 1 {pmax} 0;");
            let _ = writeln!(costs, "2 0 0 2 {} 0;", rng.gen_range(15..=90));
        }
    }
    text.push_str("];\nmpc.branch = [\n");
    for r in 0..side {
        for c in 0..side {
            let mut link = |r2: usize, c2: usize| {
                let strong = spine(r, c) && spine(r2, c2);
                let x = if strong { rng.gen_range(5..=15) } else { rng.gen_range(20..=60) };
                let rate = if strong { rng.gen_range(400..=900) } else { rng.gen_range(60..=200) };
                let _ = writeln!(text, "{} {} 0 0.{x:03} 0 {rate} 0 0 0 0 1;", id(r, c), id(r2, c2));
            };
            if c + 1 < side {
                link(r, c + 1);
            }
            if r + 1 < side {
                link(r + 1, c);
            }
        }
    }
    let _ = write!(text, "];\nmpc.gencost = [\n{costs}];\n");

    let span = ((side - 1) * 10) as f64;
    let mut farm_text = String::from("farm_id,x,y,capacity_mw,hub_height_m\n");
    for f in 0..farms {
        let _ = writeln!(
            farm_text,
            "wf{f:03},{:.1},{:.1},{},{}",
            rng.gen_range(0.0..span),
            rng.gen_range(0.0..span),
            rng.gen_range(50..=400),
            [80, 100, 120].choose(&mut rng).unwrap()
        );
    }
    let mut weather = String::from("station_id,x,y,date,wind_speed_ms\n");
    let first = chrono::NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    let start: Vec<String> = first.iter_days().take(days).map(|d| d.to_string()).collect();
    for (sr, sc) in (0..5).flat_map(|a| (0..5).map(move |b| (a, b))) {
        let (x, y) = (span * sc as f64 / 4.0, span * sr as f64 / 4.0);
        for (d, date) in start.iter().enumerate() {
            let base = 3.0 + 9.0 * ((d as f64 * 0.37 + sr as f64 * 0.5).sin() * 0.5 + 0.5);
            let v: f64 = (base + rng.gen_range(-1.5..1.5)).max(0.0);
            let _ = writeln!(weather, "st{sr}{sc},{x},{y},{date},{v:.1}");
        }
    }

    let grid = SyntheticGrid {
        case: dir.join("grid.m"),
        coordinates: dir.join("coords.csv"),
        farms: dir.join("farms.csv"),
        weather: dir.join("weather.csv"),
        buses: n,
    };
    std::fs::write(&grid.case, text).unwrap();
    std::fs::write(&grid.coordinates, coords).unwrap();
    std::fs::write(&grid.farms, farm_text).unwrap();
    std::fs::write(&grid.weather, weather).unwrap();
    grid
}
