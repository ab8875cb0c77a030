mod common;

use common::{random_case, random_edges, random_partition, rng, zones_connected_bfs};
use gridzones::case::{build_adjacency, AdjacencyGraph};
use gridzones::opf::solve_dcopf;
use gridzones::partition::{pair_agreement, Partition};
use gridzones::pipeline::{interzone_transfers, merge_tiny_zones};
use gridzones::ward::{cut_tree, ward_cluster};
use proptest::prelude::*;
use rand::Rng;

fn naive_agreement(a: &Partition, b: &Partition) -> f64 {
    let n = a.len();
    let (mut agree, mut total) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            agree += ((a.label(i) == a.label(j)) == (b.label(i) == b.label(j))) as u64;
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tiny_zone_merging(seed in any::<u64>(), min_size in 0usize..8) {
        let mut r = rng(seed);
        let n = r.gen_range(2..=40);
        let edges = random_edges(&mut r, n, 0.1);
        let graph = AdjacencyGraph::from_edges(n, edges.iter().copied());
        let prices: Vec<f64> = (0..n).map(|_| r.gen_range(0..50) as f64).collect();
        let tree = ward_cluster(&prices, &graph).unwrap();
        let cut = cut_tree(&tree, r.gen_range(1..=n.min(8))).unwrap();
        let merged = merge_tiny_zones(&cut, min_size, &prices, &graph).unwrap();

        prop_assert!(merged.k() == 1 || merged.zone_sizes().iter().all(|&s| s >= min_size));
        prop_assert!(zones_connected_bfs(&merged, &graph));
        // Merging only coarsens.
        for i in 0..n {
            for j in 0..n {
                if cut.label(i) == cut.label(j) {
                    prop_assert_eq!(merged.label(i), merged.label(j));
                }
            }
        }
        if cut.zone_sizes().iter().all(|&s| s >= min_size) {
            prop_assert_eq!(merged, cut.canonical());
        }
    }

    #[test]
    fn agreement_counts_pairs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=30);
        let ka = r.gen_range(1..=n.min(5));
        let a = random_partition(&mut r, n, ka);
        let kb = r.gen_range(1..=n.min(5));
        let b = random_partition(&mut r, n, kb);
        let v = pair_agreement(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!((v - naive_agreement(&a, &b)).abs() < 1e-12);
        prop_assert_eq!(v, pair_agreement(&b, &a));
        prop_assert_eq!(pair_agreement(&a, &a), 1.0);
        // Relabeling zones does not matter.
        let flipped: Vec<usize> = a.labels().iter().map(|&l| a.k() - 1 - l).collect();
        let flipped = Partition::from_labels(flipped).unwrap();
        prop_assert_eq!(pair_agreement(&flipped, &b), v);
    }

    #[test]
    fn transfers_are_antisymmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let case = random_case(&mut r, 0.5);
        let Ok(sol) = solve_dcopf(&case) else { return Ok(()) };
        let n = case.buses.len();
        let k = r.gen_range(1..=n);
        let p = random_partition(&mut r, n, k);
        let k = p.k();
        let t = interzone_transfers(&p, &sol, &case);
        let mut total = 0.0;
        for a in 0..k {
            prop_assert_eq!(t.get(a, a), 0.0);
            for b in 0..k {
                prop_assert_eq!(t.get(a, b), -t.get(b, a));
            }
            total += t.net_export(a);
        }
        prop_assert!(total.abs() < 1e-9);
        for pair in t.pairs() {
            prop_assert!(pair.gw >= 0.0);
            prop_assert_eq!(t.get(pair.from, pair.to), pair.gw);
        }
        prop_assert!(build_adjacency(&case).is_connected());
    }
}
