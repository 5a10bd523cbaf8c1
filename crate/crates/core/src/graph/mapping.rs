use super::{BccDecomposition, SensorGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column-normalized membership matrix `M_or` (sensors × regions).
///
/// Computed once from the graph topology and never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionalMapping {
    matrix: Tensor,
}

impl RegionalMapping {
    pub fn from_matrix(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::Rank {
                op: "RegionalMapping",
                shape: matrix.shape().to_vec(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn region_count(&self) -> usize {
        self.matrix.shape()[1]
    }

    /// `(region, weight)` pairs with positive weight for sensor `node`.
    pub fn regions_of(&self, node: usize) -> Vec<(usize, f64)> {
        let r = self.region_count();
        self.matrix.data()[node * r..(node + 1) * r]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(j, &w)| (j, w))
            .collect()
    }
}

/// One region per bi-connected component. Cut vertices join every region
/// that contains them; each column is then divided by its member count.
pub fn build_mor(decomp: &BccDecomposition, node_count: usize) -> Result<RegionalMapping> {
    let regions = decomp.components.len();
    if regions == 0 {
        return Err(Error::Construction("decomposition has no components".into()));
    }
    let mut m = Tensor::zeros(&[node_count, regions]);
    let mut covered = vec![false; node_count];
    for (j, comp) in decomp.components.iter().enumerate() {
        if comp.is_empty() {
            return Err(Error::Construction(format!("component {j} is empty")));
        }
        let w = 1.0 / comp.len() as f64;
        for &v in comp {
            if v >= node_count {
                return Err(Error::Construction(format!(
                    "component {j} references node {v} but there are only {node_count}"
                )));
            }
            m.set(&[v, j], w);
            covered[v] = true;
        }
    }
    if let Some(v) = covered.iter().position(|&c| !c) {
        return Err(Error::Construction(format!("node {v} belongs to no component")));
    }
    Ok(RegionalMapping { matrix: m })
}

/// `A_r = M_orᵀ · A_o · M_or`.
pub fn regional_adjacency(graph: &SensorGraph, mapping: &RegionalMapping) -> Result<Tensor> {
    let a = graph.adjacency();
    let m = mapping.matrix();
    if a.shape()[1] != m.shape()[0] {
        return Err(Error::dim("regional_adjacency", a.shape(), m.shape()));
    }
    m.transpose()?.matmul(&a.matmul(m)?)
}
