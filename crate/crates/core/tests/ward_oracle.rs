mod common;

use common::{exact_ess, naive_ward, random_edges, rng, zones_connected_bfs};
use gridzones::case::AdjacencyGraph;
use gridzones::ward::{cut_tree, ward_cluster, ward_delta, ward_merge_delta, ClusterState};
use num_rational::Rational64;
use proptest::prelude::*;
use rand::Rng;

fn as_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn check(prices: &[i64], edges: &[(usize, usize)], label: &str) {
    let n = prices.len();
    let graph = AdjacencyGraph::from_edges(n, edges.iter().copied());
    let fprices: Vec<f64> = prices.iter().map(|&p| p as f64).collect();
    let tree = ward_cluster(&fprices, &graph).unwrap();
    let naive = naive_ward(prices, edges);
    assert_eq!(tree.merges.len(), naive.len(), "{label}");
    for (t, (m, (l, r, d))) in tree.merges.iter().zip(&naive).enumerate() {
        assert_eq!((m.left, m.right), (*l, *r), "{label}: merge {t}");
        let want = as_f64(*d);
        assert!((m.delta - want).abs() <= 1e-9 * want.abs().max(1.0), "{label}: merge {t}");
    }
    let mut last = f64::INFINITY;
    for k in 1..=n {
        let p = cut_tree(&tree, k).unwrap();
        assert_eq!(p.k(), k);
        assert!(zones_connected_bfs(&p, &graph), "{label}: k = {k}");
        let ess = p.total_ess(&fprices);
        assert!(ess <= last + 1e-9, "{label}: ESS grows at k = {k}");
        last = ess;
    }
}

#[test]
fn random_graphs_match_naive_ward() {
    for seed in 0..150 {
        let mut r = rng(seed);
        let n = r.gen_range(2..=50);
        let extra = r.gen_range(0.0..0.15);
        let edges = random_edges(&mut r, n, extra);
        let prices: Vec<i64> = (0..n).map(|_| r.gen_range(0..=20)).collect();
        check(&prices, &edges, &format!("seed {seed}"));
    }
}

#[test]
fn star_graph() {
    let edges = [(0, 1), (0, 2), (0, 3)];
    check(&[0, 1, 2, 3], &edges, "star");
    // Center 0 with leaf 1 is cheapest (1/2), then {0,1} with 2 (ESS rises by
    // 2/3 * (0.5 - 2)^2 = 1.5), then with 3.
    let naive = naive_ward(&[0, 1, 2, 3], &edges);
    assert_eq!(naive[0], (0, 1, Rational64::new(1, 2)));
    assert_eq!(naive[1], (2, 4, Rational64::new(3, 2)));
    assert_eq!((naive[2].0, naive[2].1), (3, 5));
}

#[test]
fn path_plateaus() {
    let edges = [(0, 1), (1, 2), (2, 3)];
    check(&[1, 1, 10, 10], &edges, "path");
    let naive = naive_ward(&[1, 1, 10, 10], &edges);
    assert_eq!(naive[2].2, Rational64::from_integer(81));
}

#[test]
fn constant_prices_follow_creation_order() {
    for seed in 0..20 {
        let mut r = rng(500 + seed);
        let n = r.gen_range(2..=30);
        let edges = random_edges(&mut r, n, 0.1);
        check(&vec![7; n], &edges, &format!("constant {seed}"));
    }
}

proptest! {
    #[test]
    fn closed_form_matches_direct_ess(
        a in prop::collection::vec(-1000i64..1000, 1..100),
        b in prop::collection::vec(-1000i64..1000, 1..100),
    ) {
        let ca = ClusterState {
            id: 0,
            members: (0..a.len()).collect(),
            sum: a.iter().sum::<i64>() as f64,
            ess: as_f64(exact_ess(&a)),
            neighbors: [1].into(),
        };
        let cb = ClusterState {
            id: 1,
            members: (a.len()..a.len() + b.len()).collect(),
            sum: b.iter().sum::<i64>() as f64,
            ess: as_f64(exact_ess(&b)),
            neighbors: [0].into(),
        };
        let mut joint = a.clone();
        joint.extend(&b);
        let direct = as_f64(exact_ess(&joint) - exact_ess(&a) - exact_ess(&b));
        let closed = ward_merge_delta(&ca, &cb);
        prop_assert!((closed - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert_eq!(closed, ward_delta(a.len(), ca.sum, b.len(), cb.sum));
        prop_assert!(closed >= 0.0);
    }
}
