use super::layers::{
    enhance, gated_tcn, global_adjacency, global_features, global_mapping, meta_gcn,
    normalize_adjacency, normalize_adjacency_var, update,
};
use super::{BoundParams, HiestConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{build_mor, tarjan_bcc, RegionalMapping, SensorGraph};
use crate::tensor::Tensor;

/// Fixed graph structure shared by every forward pass: the sensor and
/// regional adjacencies, their normalized forms, and `M_or`.
#[derive(Clone, Debug)]
pub struct HierarchyGraphs {
    pub a_o: Tensor,
    pub a_o_norm: Tensor,
    pub a_r: Tensor,
    pub a_r_norm: Tensor,
    pub m_or: Tensor,
}

impl HierarchyGraphs {
    /// Decomposes `graph` into bi-connected regions and derives `A_r`.
    pub fn from_graph(graph: &SensorGraph, cfg: &HiestConfig) -> Result<Self> {
        let mapping = build_mor(&tarjan_bcc(graph), graph.node_count())?;
        Self::new(graph.adjacency(), &mapping, cfg)
    }

    pub fn new(a_o: &Tensor, mapping: &RegionalMapping, cfg: &HiestConfig) -> Result<Self> {
        let m_or = mapping.matrix().clone();
        if a_o.rank() != 2 || a_o.shape()[0] != a_o.shape()[1] || a_o.shape()[0] != m_or.shape()[0] {
            return Err(Error::dim("HierarchyGraphs", a_o.shape(), m_or.shape()));
        }
        let a_r = m_or.transpose()?.matmul(&a_o.matmul(&m_or)?)?;
        Ok(Self {
            a_o_norm: normalize_adjacency(a_o, cfg.adj_norm)?,
            a_r_norm: normalize_adjacency(&a_r, cfg.adj_norm)?,
            a_o: a_o.clone(),
            a_r,
            m_or,
        })
    }

    pub fn node_count(&self) -> usize {
        self.m_or.shape()[0]
    }

    pub fn region_count(&self) -> usize {
        self.m_or.shape()[1]
    }

    /// `A_g` for the given mapping logits, detached from any tape.
    pub fn global_adjacency_of(&self, logits: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let m_rg = global_mapping(tape.constant(logits))?;
        Ok(global_adjacency(tape.constant(&self.a_r), m_rg)?.to_tensor())
    }
}

#[derive(Debug)]
pub struct ForwardOutput<'t> {
    /// `[B, T, N_o, D_out]` in standardized units.
    pub prediction: Var<'t>,
    /// Last-layer `H_r*` averaged over batch and time, `[N_r, D]`.
    pub h_r_star: Var<'t>,
    /// Last-layer `H_g*` averaged over batch and time, `[N_g, D]`.
    pub h_g_star: Var<'t>,
    pub m_rg: Var<'t>,
}

fn pad_front(x: &Tensor, len: usize) -> Tensor {
    let s = x.shape();
    let (b, t, rest) = (s[0], s[1], s[2] * s[3]);
    if t == len {
        return x.clone();
    }
    let pad = len - t;
    let mut out = Tensor::zeros(&[b, len, s[2], s[3]]);
    for bi in 0..b {
        let src = &x.data()[bi * t * rest..(bi + 1) * t * rest];
        out.data_mut()[(bi * len + pad) * rest..(bi + 1) * len * rest].copy_from_slice(src);
    }
    out
}

fn batch_time_mean(h: Var<'_>) -> Result<Var<'_>> {
    h.mean_axis(0)?.mean_axis(0)
}

/// Runs the network on standardized inputs `x: [B, H, N_o, D_in]`.
///
/// `frozen_ag` replaces the per-call `A_g` with a detached one.
pub fn forward<'t>(
    tape: &'t Tape,
    x: &Tensor,
    hier: &HierarchyGraphs,
    params: &BoundParams<'t>,
    cfg: &HiestConfig,
    frozen_ag: Option<&Tensor>,
) -> Result<ForwardOutput<'t>> {
    let n_o = hier.node_count();
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != cfg.history || xs[2] != n_o || xs[3] != cfg.in_dim {
        return Err(Error::dim("forward", xs, &[0, cfg.history, n_o, cfg.in_dim]));
    }
    if params.layers.len() != cfg.layer_count() {
        return Err(Error::Config(format!(
            "parameters have {} layers, configuration expects {}",
            params.layers.len(),
            cfg.layer_count()
        )));
    }
    let batch = xs[0];
    let mut h = tape.constant(&pad_front(x, cfg.padded_length())).linear(params.input_proj)?;

    let a_o = tape.constant(&hier.a_o_norm);
    let a_r = tape.constant(&hier.a_r_norm);
    let m_or = tape.constant(&hier.m_or);
    let m_or_t = tape.constant(&hier.m_or.transpose()?);
    let m_rg = global_mapping(params.mrg_logits)?;
    let a_g = match frozen_ag {
        Some(t) => tape.constant(&normalize_adjacency(t, cfg.adj_norm)?),
        None => normalize_adjacency_var(global_adjacency(tape.constant(&hier.a_r), m_rg)?, cfg.adj_norm)?,
    };
    let [eta1, eta2, eta3, eta4] = cfg.eta;

    let mut skip: Option<Var<'t>> = None;
    let mut last = None;
    let n_layers = params.layers.len();
    for (l, (p, dilation)) in params.layers.iter().zip(cfg.dilations()).enumerate() {
        let step = || -> Result<_> {
            let g = gated_tcn(h, p.tcn_filter, p.tcn_gate, p.tcn_filter_bias, p.tcn_gate_bias, dilation)?;
            let t_out = g.shape()[1];
            let s = g.narrow(1, t_out - 1, 1)?.linear(p.skip_proj)?;

            let h_r = m_or_t.left_matmul(g)?;
            let h_g = global_features(h_r, m_rg)?;
            let h_o = meta_gcn(a_o, g, p.gcn)?;
            let h_r = meta_gcn(a_r, h_r, p.gcn)?;
            let h_g = meta_gcn(a_g, h_g, p.gcn)?;
            let (h_r, h_o_star) = enhance(h_o, h_r, h_g, m_or, m_rg, eta1, eta2)?;
            let stars = if l + 1 == n_layers {
                Some(update(h_o_star, h_r, h_g, m_or, m_rg, eta3, eta4)?)
            } else {
                None
            };
            let t_prev = h.shape()[1];
            let next = h_o_star.add(h.narrow(1, t_prev - t_out, t_out)?)?;
            Ok((next, s, stars))
        };
        let (next, s, stars) = step().map_err(|e| e.in_layer(l))?;
        h = next;
        skip = Some(match skip {
            Some(acc) => acc.add(s)?,
            None => s,
        });
        if stars.is_some() {
            last = stars;
        }
    }

    let (skip, (h_r_star, h_g_star)) = match (skip, last) {
        (Some(s), Some(l)) => (s, l),
        _ => return Err(Error::Config("network has no layers".into())),
    };
    let out = skip
        .relu()
        .linear(params.output_hidden)?
        .add_bias(params.output_hidden_bias)?
        .relu()
        .linear(params.output_final)?
        .add_bias(params.output_final_bias)?
        .reshape(&[batch, n_o, cfg.horizon, cfg.out_dim])?
        .permute(&[0, 2, 1, 3])?;
    Ok(ForwardOutput {
        prediction: out,
        h_r_star: batch_time_mean(h_r_star)?,
        h_g_star: batch_time_mean(h_g_star)?,
        m_rg,
    })
}
