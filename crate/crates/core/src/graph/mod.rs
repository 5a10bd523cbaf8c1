//! Sensor graphs and the fixed original → regional hierarchy.

mod bcc;
mod mapping;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use bcc::{biconnected_components, tarjan_bcc, BccDecomposition};
pub use mapping::{build_mor, regional_adjacency, RegionalMapping};

/// Default kernel threshold for road-network sensor graphs.
pub const DEFAULT_KERNEL_THRESHOLD: f64 = 0.1;

/// One row of a distances file.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceRecord {
    pub from: String,
    pub to: String,
    pub meters: f64,
}

impl DistanceRecord {
    pub fn new(from: impl Into<String>, to: impl Into<String>, meters: f64) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            meters,
        }
    }
}

/// Undirected weighted sensor graph with a zero diagonal.
#[derive(Clone, Debug)]
pub struct SensorGraph {
    node_ids: Vec<String>,
    adjacency: Tensor,
    /// Undirected edges `(i, j, w)` with `i < j`.
    edges: Vec<(usize, usize, f64)>,
}

impl SensorGraph {
    /// Builds a graph from an arbitrary square weight matrix. The matrix is
    /// symmetrized with `max(w_ij, w_ji)`, the diagonal is dropped, and any
    /// positive entry becomes an edge.
    pub fn from_adjacency(node_ids: Vec<String>, weights: &Tensor) -> Result<Self> {
        let n = node_ids.len();
        if weights.shape() != [n, n] {
            return Err(Error::dim("SensorGraph::from_adjacency", weights.shape(), &[n, n]));
        }
        let mut sym = Tensor::zeros(&[n, n]);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = weights.at(&[i, j]).max(weights.at(&[j, i]));
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Construction(format!(
                        "edge weight {w} between {} and {} outside [0, 1]",
                        node_ids[i], node_ids[j]
                    )));
                }
                if w > 0.0 {
                    sym.set(&[i, j], w);
                    sym.set(&[j, i], w);
                    edges.push((i, j, w));
                }
            }
        }
        Ok(Self {
            node_ids,
            adjacency: sym,
            edges,
        })
    }

    /// Unit-weight graph from an edge list over nodes `0..n` named by index.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let ids = (0..n).map(|i| i.to_string()).collect();
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Construction(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        Self::from_adjacency(ids, &a)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Sorted neighbour lists of the binarized graph.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        adj
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }
}

/// Thresholded Gaussian kernel `exp(-d²/σ²)`.
pub fn gaussian_kernel(distance: f64, sigma: f64) -> f64 {
    (-(distance / sigma).powi(2)).exp()
}

/// Builds a sensor graph from pairwise road distances.
///
/// `σ` is the population standard deviation of every retained distance
/// (self-distances included); weights below `threshold` are dropped and the
/// result is symmetrized by `max`. When `node_order` is given, the graph uses
/// exactly those ids in that order and distances touching other ids are
/// ignored. Otherwise ids are ordered by first appearance.
pub fn build_adjacency(
    distances: &[DistanceRecord],
    threshold: f64,
    node_order: Option<&[String]>,
) -> Result<SensorGraph> {
    let mut ids: Vec<String> = node_order.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, usize> =
        ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    if index.len() != ids.len() {
        return Err(Error::Construction("duplicate sensor ids in node order".into()));
    }
    let mut kept = Vec::with_capacity(distances.len());
    for rec in distances {
        if !(rec.meters >= 0.0) || !rec.meters.is_finite() {
            return Err(Error::Construction(format!(
                "distance {} -> {} is not a nonnegative number: {}",
                rec.from, rec.to, rec.meters
            )));
        }
        let mut lookup = |id: &str| -> Option<usize> {
            if let Some(&i) = index.get(id) {
                return Some(i);
            }
            if node_order.is_some() {
                return None;
            }
            ids.push(id.to_string());
            index.insert(id.to_string(), ids.len() - 1);
            Some(ids.len() - 1)
        };
        if let (Some(i), Some(j)) = (lookup(&rec.from), lookup(&rec.to)) {
            kept.push((i, j, rec.meters));
        }
    }
    if kept.is_empty() {
        return Err(Error::Construction("no usable distance pairs".into()));
    }
    let count = kept.len() as f64;
    let mean = kept.iter().map(|r| r.2).sum::<f64>() / count;
    let var = kept.iter().map(|r| (r.2 - mean).powi(2)).sum::<f64>() / count;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Err(Error::DegenerateKernel(format!(
            "all {} distances equal {mean}, so the kernel width is zero",
            kept.len()
        )));
    }
    let n = ids.len();
    let mut w = Tensor::zeros(&[n, n]);
    for &(i, j, d) in &kept {
        if i == j {
            continue;
        }
        let k = gaussian_kernel(d, sigma);
        if k >= threshold && k > w.at(&[i, j]) {
            w.set(&[i, j], k);
        }
    }
    SensorGraph::from_adjacency(ids, &w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_closed_forms() {
        assert_eq!(gaussian_kernel(0.0, 2.0), 1.0);
        assert!((gaussian_kernel(2.0, 2.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn distance_equal_to_sigma_is_kept() {
        // Population std of {1, 3} is 1, so d = 1 gives e^-1 ≈ 0.3679.
        let d = vec![DistanceRecord::new("a", "b", 1.0), DistanceRecord::new("b", "c", 3.0)];
        let g = build_adjacency(&d, 0.1, None).unwrap();
        assert_eq!(g.node_ids(), ["a", "b", "c"]);
        assert!((g.adjacency().at(&[0, 1]) - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(g.adjacency().at(&[1, 0]), g.adjacency().at(&[0, 1]));
        // d = 3σ gives e^-9 < 0.1.
        assert_eq!(g.adjacency().at(&[1, 2]), 0.0);
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn weight_below_threshold_is_dropped() {
        // exp(-d²/σ²) = 0.05 for d = σ·sqrt(ln 20).
        let sigma = 1.0;
        let d = sigma * 20f64.ln().sqrt();
        assert!((gaussian_kernel(d, sigma) - 0.05).abs() < 1e-12);
        // {0, 2, 1}: σ² = 2/3.
        let recs = vec![
            DistanceRecord::new("a", "a", 0.0),
            DistanceRecord::new("a", "b", 2.0),
            DistanceRecord::new("a", "c", 1.0),
        ];
        let g = build_adjacency(&recs, 0.1, None).unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert!((g.adjacency().at(&[0, 2]) - gaussian_kernel(1.0, s)).abs() < 1e-15);
        assert_eq!(g.adjacency().at(&[0, 1]), 0.0, "exp(-6) is below 0.1");
        assert_eq!(g.adjacency().at(&[0, 0]), 0.0, "diagonal stays empty");
    }

    #[test]
    fn asymmetric_distances_symmetrize_by_max() {
        let recs = vec![
            DistanceRecord::new("a", "b", 1.0),
            DistanceRecord::new("b", "a", 2.0),
            DistanceRecord::new("a", "a", 0.0),
        ];
        let g = build_adjacency(&recs, 0.0, None).unwrap();
        // {1, 2, 0}: σ² = 2/3; the shorter direction wins.
        let sigma = (2.0f64 / 3.0).sqrt();
        assert_eq!(g.adjacency().at(&[0, 1]), g.adjacency().at(&[1, 0]));
        assert!((g.adjacency().at(&[0, 1]) - gaussian_kernel(1.0, sigma)).abs() < 1e-15);
    }

    #[test]
    fn identical_distances_are_degenerate() {
        let recs = vec![DistanceRecord::new("a", "b", 5.0), DistanceRecord::new("b", "c", 5.0)];
        assert!(matches!(build_adjacency(&recs, 0.1, None), Err(Error::DegenerateKernel(_))));
        assert!(build_adjacency(&[], 0.1, None).is_err());
    }

    #[test]
    fn node_order_filters_unknown_ids() {
        let recs = vec![
            DistanceRecord::new("x", "y", 1.0),
            DistanceRecord::new("y", "z", 3.0),
            DistanceRecord::new("x", "q", 100.0),
        ];
        let order = vec!["y".to_string(), "x".to_string(), "z".to_string()];
        let g = build_adjacency(&recs, 0.1, Some(&order)).unwrap();
        assert_eq!(g.node_ids(), ["y", "x", "z"]);
        assert!(g.adjacency().at(&[0, 1]) > 0.3);
    }
}
