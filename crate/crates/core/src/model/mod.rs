//! The hierarchical spatio-temporal forecaster.

mod checkpoint;
mod forward;
mod layers;
mod params;

use std::fmt;
use std::str::FromStr;

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{forward, ForwardOutput, HierarchyGraphs};
pub use layers::{
    enhance, gated_tcn, global_adjacency, global_features, global_mapping, global_views, meta_gcn,
    normalize_adjacency, normalize_adjacency_var, update,
};
pub use params::{BoundLayer, BoundParams, HiestParams, LayerParams};

/// How adjacency matrices are prepared for graph convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdjNorm {
    /// `rownorm(A + I)`.
    #[default]
    RowNorm,
    /// `A` unchanged.
    Raw,
}

impl fmt::Display for AdjNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjNorm::RowNorm => "rownorm",
            AdjNorm::Raw => "raw",
        })
    }
}

impl FromStr for AdjNorm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rownorm" => Ok(AdjNorm::RowNorm),
            "raw" => Ok(AdjNorm::Raw),
            _ => Err(format!("expected rownorm or raw, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiestConfig {
    pub blocks: usize,
    pub layers_per_block: usize,
    pub hidden: usize,
    pub n_global: usize,
    /// Enhance (η₁, η₂) and update (η₃, η₄) strengths.
    pub eta: [f64; 4],
    pub horizon: usize,
    pub history: usize,
    pub tcn_kernel: usize,
    pub skip_dim: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub adj_norm: AdjNorm,
}

impl Default for HiestConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            layers_per_block: 2,
            hidden: 32,
            n_global: 15,
            eta: [1.0; 4],
            horizon: 12,
            history: 12,
            tcn_kernel: 2,
            skip_dim: 64,
            in_dim: 1,
            out_dim: 1,
            adj_norm: AdjNorm::RowNorm,
        }
    }
}

impl HiestConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("blocks", self.blocks),
            ("layers_per_block", self.layers_per_block),
            ("hidden", self.hidden),
            ("horizon", self.horizon),
            ("history", self.history),
            ("tcn_kernel", self.tcn_kernel),
            ("skip_dim", self.skip_dim),
            ("in_dim", self.in_dim),
            ("out_dim", self.out_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_global < 2 {
            return Err(Error::Config("n_global must be at least 2".into()));
        }
        if let Some(e) = self.eta.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::Config(format!("eta values must be finite and >= 0, got {e}")));
        }
        if self.layers_per_block > 20 {
            return Err(Error::Config("layers_per_block too large".into()));
        }
        let span = self.temporal_span();
        if span > self.history {
            return Err(Error::Config(format!(
                "temporal span {span} of {} blocks x {} layers exceeds history {}",
                self.blocks, self.layers_per_block, self.history
            )));
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.blocks * self.layers_per_block
    }

    /// Dilation per layer: `2^ℓ` for layer `ℓ` within each block.
    pub fn dilations(&self) -> Vec<usize> {
        (0..self.blocks)
            .flat_map(|_| (0..self.layers_per_block).map(|l| 1usize << l))
            .collect()
    }

    /// Steps consumed by all temporal convolutions, `Σ (K-1)·d`.
    pub fn temporal_span(&self) -> usize {
        self.dilations()
            .iter()
            .map(|d| (self.tcn_kernel - 1) * d)
            .sum()
    }

    /// Input length after zero padding on the left so that exactly one
    /// aligned step survives the convolution stack.
    pub fn padded_length(&self) -> usize {
        self.history.max(self.temporal_span() + 1)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("blocks", self.blocks);
        kv.set("layers_per_block", self.layers_per_block);
        kv.set("hidden", self.hidden);
        kv.set("n_global", self.n_global);
        for (i, e) in self.eta.iter().enumerate() {
            kv.set(&format!("eta{}", i + 1), e);
        }
        kv.set("horizon", self.horizon);
        kv.set("history", self.history);
        kv.set("tcn_kernel", self.tcn_kernel);
        kv.set("skip_dim", self.skip_dim);
        kv.set("in_dim", self.in_dim);
        kv.set("out_dim", self.out_dim);
        kv.set("adj_norm", self.adj_norm);
    }

    /// Overrides fields present in `kv`.
    pub fn read_kv(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("blocks", &mut self.blocks)?;
        kv.read_into("layers_per_block", &mut self.layers_per_block)?;
        kv.read_into("hidden", &mut self.hidden)?;
        kv.read_into("n_global", &mut self.n_global)?;
        for i in 0..4 {
            kv.read_into(&format!("eta{}", i + 1), &mut self.eta[i])?;
        }
        kv.read_into("horizon", &mut self.horizon)?;
        kv.read_into("history", &mut self.history)?;
        kv.read_into("tcn_kernel", &mut self.tcn_kernel)?;
        kv.read_into("skip_dim", &mut self.skip_dim)?;
        kv.read_into("in_dim", &mut self.in_dim)?;
        kv.read_into("out_dim", &mut self.out_dim)?;
        kv.read_into("adj_norm", &mut self.adj_norm)?;
        Ok(())
    }
}
