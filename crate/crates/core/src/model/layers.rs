use super::AdjNorm;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column-wise softmax of the mapping logits, so every global node is a
/// convex combination of regions.
pub fn global_mapping(logits: Var<'_>) -> Result<Var<'_>> {
    if logits.shape().len() != 2 {
        return Err(Error::Rank {
            op: "global_mapping",
            shape: logits.shape(),
        });
    }
    logits.softmax(0)
}

/// `A_g = M_rgᵀ · A_r · M_rg`.
pub fn global_adjacency<'t>(a_r: Var<'t>, m_rg: Var<'t>) -> Result<Var<'t>> {
    m_rg.transpose()?.matmul(a_r.matmul(m_rg)?)
}

/// `H_g = M_rgᵀ · H_r` for every batch/time slice of `H_r: [..., N_r, D]`.
pub fn global_features<'t>(h_r: Var<'t>, m_rg: Var<'t>) -> Result<Var<'t>> {
    m_rg.transpose()?.left_matmul(h_r)
}

pub fn global_views<'t>(a_r: Var<'t>, h_r: Var<'t>, m_rg: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    Ok((global_adjacency(a_r, m_rg)?, global_features(h_r, m_rg)?))
}

pub fn normalize_adjacency(a: &Tensor, mode: AdjNorm) -> Result<Tensor> {
    let (n, m) = match a.shape() {
        &[n, m] => (n, m),
        s => {
            return Err(Error::Rank {
                op: "normalize_adjacency",
                shape: s.to_vec(),
            })
        }
    };
    if n != m {
        return Err(Error::dim("normalize_adjacency", a.shape(), &[n, n]));
    }
    if mode == AdjNorm::Raw {
        return Ok(a.clone());
    }
    let mut out = a.clone();
    for (i, row) in out.data_mut().chunks_mut(n.max(1)).enumerate().take(n) {
        row[i] += 1.0;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(out)
}

/// Differentiable counterpart of [`normalize_adjacency`].
pub fn normalize_adjacency_var(a: Var<'_>, mode: AdjNorm) -> Result<Var<'_>> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::dim("normalize_adjacency", &shape, &[shape[0], shape[0]]));
    }
    match mode {
        AdjNorm::Raw => Ok(a),
        AdjNorm::RowNorm => {
            let eye = a.tape().constant(&Tensor::eye(shape[0]));
            a.add(eye)?.row_normalize()
        }
    }
}

/// `H' = Â · H · W` per batch/time slice of `H: [..., n, D]`.
pub fn meta_gcn<'t>(a_norm: Var<'t>, h: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    a_norm.left_matmul(h)?.linear(w)
}

/// `tanh(θ₁ ⋆ H + b₁) ⊙ σ(θ₂ ⋆ H + b₂)` over the time axis of `[B, T, N, D]`.
pub fn gated_tcn<'t>(
    h: Var<'t>,
    filter: Var<'t>,
    gate: Var<'t>,
    filter_bias: Var<'t>,
    gate_bias: Var<'t>,
    dilation: usize,
) -> Result<Var<'t>> {
    let f = h.temporal_conv(filter, dilation)?.add_bias(filter_bias)?.tanh();
    let g = h.temporal_conv(gate, dilation)?.add_bias(gate_bias)?.sigmoid();
    f.mul(g)
}

/// `x + η·relu(M · h)`, skipped entirely when `η = 0`.
fn inject<'t>(x: Var<'t>, m: Var<'t>, h: Var<'t>, eta: f64) -> Result<Var<'t>> {
    if eta == 0.0 {
        return Ok(x);
    }
    let term = m.left_matmul(h)?.relu();
    let term = if eta == 1.0 { term } else { term.scale(eta) };
    x.add(term)
}

/// Top-down pass. Returns `(H_r enhanced, H_o*)`; `H_o*` sees the already
/// enhanced regional features.
pub fn enhance<'t>(
    h_o: Var<'t>,
    h_r: Var<'t>,
    h_g: Var<'t>,
    m_or: Var<'t>,
    m_rg: Var<'t>,
    eta1: f64,
    eta2: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let h_r = inject(h_r, m_rg, h_g, eta1)?;
    let h_o_star = inject(h_o, m_or, h_r, eta2)?;
    Ok((h_r, h_o_star))
}

/// Bottom-up pass. Returns `(H_r*, H_g*)`; `H_g*` sees the updated `H_r*`.
pub fn update<'t>(
    h_o_star: Var<'t>,
    h_r: Var<'t>,
    h_g: Var<'t>,
    m_or: Var<'t>,
    m_rg: Var<'t>,
    eta3: f64,
    eta4: f64,
) -> Result<(Var<'t>, Var<'t>)> {
    let h_r_star = if eta3 == 0.0 {
        h_r
    } else {
        inject(h_r, m_or.transpose()?, h_o_star, eta3)?
    };
    let h_g_star = if eta4 == 0.0 {
        h_g
    } else {
        inject(h_g, m_rg.transpose()?, h_r_star, eta4)?
    };
    Ok((h_r_star, h_g_star))
}
