mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use hiest::graph::{biconnected_components, build_mor, regional_adjacency, tarjan_bcc, SensorGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{oracle_bcc, random_graph, reachable_avoiding};

fn decompose(n: usize, edges: &[(usize, usize)]) -> (SensorGraph, hiest::graph::BccDecomposition) {
    let g = SensorGraph::from_edges(n, edges).unwrap();
    let d = tarjan_bcc(&g);
    (g, d)
}

#[test]
fn tarjan_matches_exhaustive_oracle_on_500_graphs() {
    for seed in 0..500 {
        let (n, edges) = random_graph(seed, 12);
        let (_, d) = decompose(n, &edges);
        let got: BTreeSet<Vec<usize>> = d.components.iter().cloned().collect();
        assert_eq!(got.len(), d.components.len(), "seed {seed}: duplicate component");
        let (want, cuts) = oracle_bcc(n, &edges);
        assert_eq!(got, want, "seed {seed}: {edges:?}");
        assert_eq!(d.cut_vertices, cuts, "seed {seed}: {edges:?}");
    }
}

#[test]
fn separated_nodes_only_connect_through_cut_vertices() {
    for seed in 1000..1200 {
        let (n, edges) = random_graph(seed, 10);
        let (_, d) = decompose(n, &edges);
        let member = d.memberships(n);
        for a in 0..n {
            for b in a + 1..n {
                let share = member[a].iter().any(|c| member[b].contains(c));
                let endpoint_is_cut = d.cut_vertices.contains(&a) || d.cut_vertices.contains(&b);
                if share || endpoint_is_cut {
                    continue;
                }
                assert!(
                    !reachable_avoiding(n, &edges, a, b, &d.cut_vertices),
                    "seed {seed}: {a} reaches {b} around every cut vertex"
                );
            }
        }
    }
}

/// Random sparse graph with about three edges per node.
fn sparse_graph(n: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj = vec![Vec::new(); n];
    for _ in 0..3 * n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    adj
}

#[test]
fn runtime_grows_linearly() {
    let best_of = |adj: &[Vec<usize>]| {
        (0..3)
            .map(|_| {
                let start = Instant::now();
                std::hint::black_box(biconnected_components(adj));
                start.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let small = best_of(&sparse_graph(200_000, 1));
    let large = best_of(&sparse_graph(400_000, 2));
    assert!(large <= 2.5 * small + 0.005, "200k nodes {small:.4}s, 400k nodes {large:.4}s");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mapping_columns_sum_to_one(seed in 0u64..1_000_000) {
        let (n, edges) = random_graph(seed, 14);
        let (g, d) = decompose(n, &edges);
        let m = build_mor(&d, n).unwrap();
        prop_assert_eq!(m.region_count(), d.len());
        for r in 0..m.region_count() {
            let s: f64 = (0..n).map(|i| m.matrix().at(&[i, r])).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        // Every node carries weight exactly where it is a member, and at
        // least the share it gets from its largest component.
        let member = d.memberships(n);
        for i in 0..n {
            let regions: Vec<usize> = m.regions_of(i).into_iter().map(|(r, _)| r).collect();
            prop_assert_eq!(&regions, &member[i]);
            let row: f64 = m.regions_of(i).iter().map(|(_, w)| w).sum();
            let floor = member[i].iter().map(|&c| 1.0 / d.components[c].len() as f64).fold(f64::INFINITY, f64::min);
            prop_assert!(row >= floor - 1e-12);
        }
        let a_r = regional_adjacency(&g, &m).unwrap();
        let k = m.region_count();
        for i in 0..k {
            for j in 0..k {
                let (x, y) = (a_r.at(&[i, j]), a_r.at(&[j, i]));
                prop_assert!(x >= 0.0);
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn relabeling_nodes_permutes_the_decomposition(seed in 0u64..1_000_000, shift in 1usize..11) {
        let (n, edges) = random_graph(seed, 12);
        let relabel = |v: usize| (v + shift) % n;
        let moved: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (relabel(a), relabel(b))).collect();
        let (_, d) = decompose(n, &edges);
        let (_, e) = decompose(n, &moved);
        let expected: BTreeSet<Vec<usize>> = d
            .components
            .iter()
            .map(|c| {
                let mut c: Vec<usize> = c.iter().map(|&v| relabel(v)).collect();
                c.sort_unstable();
                c
            })
            .collect();
        prop_assert_eq!(e.components.iter().cloned().collect::<BTreeSet<_>>(), expected);
        let mut cuts: Vec<usize> = d.cut_vertices.iter().map(|&v| relabel(v)).collect();
        cuts.sort_unstable();
        prop_assert_eq!(e.cut_vertices, cuts);
    }
}
