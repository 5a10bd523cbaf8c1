//! Prediction, reconstruction and orthogonality objectives.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, HierarchyGraphs};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` before taking logs.
pub const LOG_EPS: f64 = 1e-7;
/// Rows shorter than this are treated as zero vectors by the cosine terms.
pub const NORM_EPS: f64 = 1e-12;

/// Mean absolute error, optionally restricted to entries where `mask` is 1.
/// A mask with no ones yields 0.
pub fn mae_loss<'t>(pred: Var<'t>, target: Var<'t>, mask: Option<Var<'t>>) -> Result<Var<'t>> {
    let err = pred.sub(target)?.abs();
    let Some(mask) = mask else {
        return Ok(err.mean());
    };
    let count: f64 = mask.data().iter().sum();
    let masked = err.mul(mask)?.sum();
    Ok(if count > 0.0 { masked.scale(1.0 / count) } else { masked.scale(0.0) })
}

/// `sigmoid(Ĥ·Ĥᵀ)` with `Ĥ = M·H`, symmetric by construction.
pub fn reconstruct_adjacency<'t>(h: Var<'t>, m: Var<'t>) -> Result<Var<'t>> {
    let hh = m.matmul(h)?;
    let gram = hh.matmul(hh.transpose()?)?;
    Ok(gram.add(gram.transpose()?)?.scale(0.5).sigmoid())
}

/// Mean binary cross-entropy between `a_hat` and a 0/1 target.
pub fn bce_recon_loss<'t>(a_hat: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    if a_hat.shape() != target.shape() {
        return Err(Error::dim("bce_recon_loss", &a_hat.shape(), target.shape()));
    }
    let tape = a_hat.tape();
    let p = a_hat.clamp(LOG_EPS, 1.0 - LOG_EPS);
    let pos = tape.constant(target);
    let neg = tape.constant(&Tensor::from_fn(target.shape(), |i| 1.0 - target.data()[i]));
    let ll = p.ln().mul(pos)?.add(p.neg().add_scalar(1.0).ln().mul(neg)?)?;
    let n = target.numel().max(1) as f64;
    Ok(ll.sum().scale(-1.0 / n))
}

/// Mean `|cos|` over all row pairs of `h: [n, D]`.
pub fn orthogonal_loss(h: Var<'_>) -> Result<Var<'_>> {
    let shape = h.shape();
    if shape.len() != 2 {
        return Err(Error::Rank {
            op: "orthogonal_loss",
            shape,
        });
    }
    let n = shape[0];
    let tape = h.tape();
    if n < 2 {
        return Ok(tape.scalar(0.0));
    }
    let unit = h.normalize_rows(NORM_EPS)?;
    let cos = unit.matmul(unit.transpose()?)?;
    let upper = Tensor::from_fn(&[n, n], |k| if k % n > k / n { 1.0 } else { 0.0 });
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(cos.abs().mul(tape.constant(&upper))?.sum().scale(1.0 / pairs))
}

/// 0/1 reconstruction target: 1 wherever `a > 0`, and on the diagonal.
pub fn binarize_adjacency(a: &Tensor) -> Tensor {
    let n = a.shape()[0];
    Tensor::from_fn(a.shape(), |k| {
        if k / n == k % n || a.data()[k] > 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_pre: f64,
    pub l_rec_ro: f64,
    pub l_rec_gr: f64,
    pub l_ort: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_pre, self.l_rec_ro, self.l_rec_gr, self.l_ort, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "l_pre={} l_rec_ro={} l_rec_gr={} l_ort={} total={}",
            self.l_pre, self.l_rec_ro, self.l_rec_gr, self.l_ort, self.total
        )
    }
}

#[derive(Debug)]
pub struct Objective<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
}

/// Weighted sum of `[l_pre, l_rec_ro, l_rec_gr, l_ort]`. Unit weights add
/// the terms directly.
pub fn total_objective<'t>(terms: [Var<'t>; 4], weights: [f64; 4]) -> Result<Objective<'t>> {
    let mut total: Option<Var<'t>> = None;
    for (t, w) in terms.iter().zip(weights) {
        let part = if w == 1.0 { *t } else { t.scale(w) };
        total = Some(match total {
            None => part,
            Some(acc) => acc.add(part)?,
        });
    }
    let total = total.expect("four terms");
    Ok(Objective {
        total,
        breakdown: LossBreakdown {
            l_pre: terms[0].item(),
            l_rec_ro: terms[1].item(),
            l_rec_gr: terms[2].item(),
            l_ort: terms[3].item(),
            total: total.item(),
        },
    })
}

/// Affine map from standardized model output back to target units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale { mean: 0.0, std: 1.0 };
}

/// The full training objective for one forward pass.
///
/// `target` and `mask` are `[B, T, N_o, D_out]` in original units.
pub fn hiest_objective<'t>(
    out: &ForwardOutput<'t>,
    target: &Tensor,
    mask: Option<&Tensor>,
    hier: &HierarchyGraphs,
    scale: TargetScale,
    weights: [f64; 4],
) -> Result<Objective<'t>> {
    let tape = out.prediction.tape();
    let pred = out.prediction.scale(scale.std).add_scalar(scale.mean);
    let l_pre = mae_loss(pred, tape.constant(target), mask.map(|m| tape.constant(m)))?;

    let m_or = tape.constant(&hier.m_or);
    let a_o_hat = reconstruct_adjacency(out.h_r_star, m_or)?;
    let l_rec_ro = bce_recon_loss(a_o_hat, &binarize_adjacency(&hier.a_o))?;
    let a_r_hat = reconstruct_adjacency(out.h_g_star, out.m_rg)?;
    let l_rec_gr = bce_recon_loss(a_r_hat, &binarize_adjacency(&hier.a_r))?;
    let l_ort = orthogonal_loss(out.h_g_star)?;
    total_objective([l_pre, l_rec_ro, l_rec_gr, l_ort], weights)
}

/// Appends `step,l_pre,l_rec_ro,l_rec_gr,l_ort,total` rows.
pub struct LossLog {
    out: Box<dyn Write>,
}

impl LossLog {
    pub const HEADER: &'static str = "step,l_pre,l_rec_ro,l_rec_gr,l_ort,total";

    pub fn create(path: &Path) -> Result<Self> {
        Self::new(Box::new(std::io::BufWriter::new(File::create(path)?)))
    }

    pub fn new(mut out: Box<dyn Write>) -> Result<Self> {
        writeln!(out, "{}", Self::HEADER)?;
        Ok(Self { out })
    }

    pub fn append(&mut self, step: usize, b: &LossBreakdown) -> Result<()> {
        writeln!(
            self.out,
            "{step},{},{},{},{},{}",
            b.l_pre, b.l_rec_ro, b.l_rec_gr, b.l_ort, b.total
        )?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
