#![allow(dead_code)]

use std::collections::BTreeSet;

use hiest::data::{split_and_window, synth_hierarchical, FeatureSet, Splits, SplitRatios, Standardizer, SynthConfig};
use hiest::graph::{build_adjacency, DistanceRecord, SensorGraph};
use hiest::model::{HiestConfig, HierarchyGraphs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random simple graph with 1..=max_nodes nodes and a random edge density.
pub fn random_graph(seed: u64, max_nodes: usize) -> (usize, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_nodes);
    let p: f64 = rng.random_range(0.1..0.6);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    (n, edges)
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for &(i, j) in edges {
        a[i][j] = true;
        a[j][i] = true;
    }
    a
}

/// Whether the nodes in `mask` form one connected piece of `adj`.
fn connected_within(adj: &[Vec<bool>], mask: u32) -> bool {
    let Some(start) = (0..adj.len()).find(|&v| mask & (1 << v) != 0) else {
        return true;
    };
    let mut seen = 1u32 << start;
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for w in 0..adj.len() {
            if adj[v][w] && mask & (1 << w) != 0 && seen & (1 << w) == 0 {
                seen |= 1 << w;
                stack.push(w);
            }
        }
    }
    seen == mask
}

fn components_count(adj: &[Vec<bool>], mask: u32) -> usize {
    let mut left = mask;
    let mut count = 0;
    while left != 0 {
        let start = left.trailing_zeros() as usize;
        let mut stack = vec![start];
        left &= !(1 << start);
        while let Some(v) = stack.pop() {
            for w in 0..adj.len() {
                if adj[v][w] && left & (1 << w) != 0 {
                    left &= !(1 << w);
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    count
}

fn biconnected(adj: &[Vec<bool>], mask: u32) -> bool {
    let nodes: Vec<usize> = (0..adj.len()).filter(|&v| mask & (1 << v) != 0).collect();
    match nodes.len() {
        0 | 1 => false,
        2 => adj[nodes[0]][nodes[1]],
        _ => connected_within(adj, mask) && nodes.iter().all(|&v| connected_within(adj, mask & !(1 << v))),
    }
}

/// Exhaustive reference: cut vertices by removal, components as the
/// inclusion-maximal biconnected node sets plus isolated singletons.
pub fn oracle_bcc(n: usize, edges: &[(usize, usize)]) -> (BTreeSet<Vec<usize>>, Vec<usize>) {
    assert!(n <= 16);
    let adj = adjacency(n, edges);
    let all = (1u32 << n) - 1;
    let base = components_count(&adj, all);
    let cuts = (0..n)
        .filter(|&v| {
            // Removing v also removes it as a component of its own when isolated.
            let isolated = !adj[v].iter().any(|&e| e);
            !isolated && components_count(&adj, all & !(1 << v)) > base
        })
        .collect();
    let candidates: Vec<u32> = (1..=all).filter(|&m| biconnected(&adj, m)).collect();
    let mut comps = BTreeSet::new();
    for &m in &candidates {
        if !candidates.iter().any(|&o| o != m && o & m == m) {
            comps.insert((0..n).filter(|&v| m & (1 << v) != 0).collect());
        }
    }
    for v in 0..n {
        if !adj[v].iter().any(|&e| e) {
            comps.insert(vec![v]);
        }
    }
    (comps, cuts)
}

/// Whether some path joins `a` and `b` without visiting a node in `blocked`.
pub fn reachable_avoiding(n: usize, edges: &[(usize, usize)], a: usize, b: usize, blocked: &[usize]) -> bool {
    let adj = adjacency(n, edges);
    let mut mask: u32 = (1u32 << n) - 1;
    for &v in blocked {
        mask &= !(1 << v);
    }
    if mask & (1 << a) == 0 || mask & (1 << b) == 0 {
        return false;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![a];
    seen[a] = true;
    while let Some(v) = stack.pop() {
        if v == b {
            return true;
        }
        for w in 0..n {
            if adj[v][w] && mask & (1 << w) != 0 && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    false
}

/// Distances for `ids` where listed pairs are close and every other pair far.
pub fn distances_for(ids: &[&str], near: &[(usize, usize)]) -> Vec<DistanceRecord> {
    let mut out = Vec::new();
    for (i, a) in ids.iter().enumerate() {
        for (j, b) in ids.iter().enumerate() {
            let close = i == j || near.contains(&(i, j)) || near.contains(&(j, i));
            let d = if i == j {
                0.0
            } else if close {
                300.0
            } else {
                3000.0
            };
            out.push(DistanceRecord::new(*a, *b, d));
        }
    }
    out
}

/// Two triangles J-K-L and J-M-N sharing J.
pub fn two_triangles() -> SensorGraph {
    let ids = ["J", "K", "L", "M", "N"];
    let near = [(0, 1), (1, 2), (0, 2), (0, 3), (3, 4), (0, 4)];
    build_adjacency(&distances_for(&ids, &near), 0.1, None).unwrap()
}

/// Default-sized synthetic problem, already split and normalized.
pub struct SynthProblem {
    pub hier: HierarchyGraphs,
    pub splits: Splits,
    pub norm: Standardizer,
}

pub fn synth_problem(synth: &SynthConfig, model: &HiestConfig) -> SynthProblem {
    let ds = synth_hierarchical(synth).unwrap();
    let hier = HierarchyGraphs::from_graph(&ds.graph, model).unwrap();
    let splits = split_and_window(
        &ds.readings,
        SplitRatios::default(),
        model.history,
        model.horizon,
        FeatureSet::Value,
    )
    .unwrap();
    let norm = Standardizer::fit(&splits.train).unwrap();
    SynthProblem { hier, splits, norm }
}
