use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HiestConfig;
use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `θ₁: [K, D, D]`
    pub tcn_filter: Tensor,
    pub tcn_filter_bias: Tensor,
    /// `θ₂: [K, D, D]`
    pub tcn_gate: Tensor,
    pub tcn_gate_bias: Tensor,
    /// Graph convolution weight shared by the original, regional and
    /// global graphs of this layer.
    pub gcn: Tensor,
    pub skip_proj: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiestParams {
    pub input_proj: Tensor,
    pub layers: Vec<LayerParams>,
    /// Logits `Θ: [N_r, N_g]` of the regional → global mapping.
    pub mrg_logits: Tensor,
    pub output_hidden: Tensor,
    pub output_hidden_bias: Tensor,
    pub output_final: Tensor,
    pub output_final_bias: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

impl HiestParams {
    /// Uniform `±1/√fan_in` weights, zero biases and mapping logits uniform
    /// in `±1`. Equal logits would make every global node identical, and
    /// since the objective is symmetric in them they would stay identical.
    pub fn init(cfg: &HiestConfig, n_regions: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_regions == 0 {
            return Err(Error::Config("at least one region is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, k, s) = (cfg.hidden, cfg.tcn_kernel, cfg.skip_dim);
        let input_proj = uniform(&mut rng, &[cfg.in_dim, d], cfg.in_dim);
        let layers = (0..cfg.layer_count())
            .map(|_| LayerParams {
                tcn_filter: uniform(&mut rng, &[k, d, d], k * d),
                tcn_filter_bias: Tensor::zeros(&[d]),
                tcn_gate: uniform(&mut rng, &[k, d, d], k * d),
                tcn_gate_bias: Tensor::zeros(&[d]),
                gcn: uniform(&mut rng, &[d, d], d),
                skip_proj: uniform(&mut rng, &[d, s], d),
            })
            .collect();
        let out = cfg.horizon * cfg.out_dim;
        let output_hidden = uniform(&mut rng, &[s, s], s);
        let output_final = uniform(&mut rng, &[s, out], s);
        Ok(Self {
            input_proj,
            layers,
            mrg_logits: uniform(&mut rng, &[n_regions, cfg.n_global], 1),
            output_hidden,
            output_hidden_bias: Tensor::zeros(&[s]),
            output_final,
            output_final_bias: Tensor::zeros(&[out]),
        })
    }

    pub fn region_count(&self) -> usize {
        self.mrg_logits.shape()[0]
    }

    /// Every parameter with its stable name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("input_proj".to_string(), &self.input_proj)];
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.tcn_filter"), &p.tcn_filter));
            out.push((format!("layer{l}.tcn_filter_bias"), &p.tcn_filter_bias));
            out.push((format!("layer{l}.tcn_gate"), &p.tcn_gate));
            out.push((format!("layer{l}.tcn_gate_bias"), &p.tcn_gate_bias));
            out.push((format!("layer{l}.gcn"), &p.gcn));
            out.push((format!("layer{l}.skip_proj"), &p.skip_proj));
        }
        out.push(("mrg_logits".into(), &self.mrg_logits));
        out.push(("output.hidden".into(), &self.output_hidden));
        out.push(("output.hidden_bias".into(), &self.output_hidden_bias));
        out.push(("output.final".into(), &self.output_final));
        out.push(("output.final_bias".into(), &self.output_final_bias));
        out
    }

    /// Same order as [`HiestParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input_proj];
        for p in &mut self.layers {
            out.push(&mut p.tcn_filter);
            out.push(&mut p.tcn_filter_bias);
            out.push(&mut p.tcn_gate);
            out.push(&mut p.tcn_gate_bias);
            out.push(&mut p.gcn);
            out.push(&mut p.skip_proj);
        }
        out.push(&mut self.mrg_logits);
        out.push(&mut self.output_hidden);
        out.push(&mut self.output_hidden_bias);
        out.push(&mut self.output_final);
        out.push(&mut self.output_final_bias);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces parameter values by name. Every name must be present with
    /// a matching shape.
    pub fn assign(&mut self, mut lookup: impl FnMut(&str) -> Option<Tensor>) -> Result<()> {
        let names = self.names();
        for (name, slot) in names.iter().zip(self.tensors_mut()) {
            let t = lookup(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let layers = self
            .layers
            .iter()
            .map(|p| BoundLayer {
                tcn_filter: tape.param(&p.tcn_filter),
                tcn_filter_bias: tape.param(&p.tcn_filter_bias),
                tcn_gate: tape.param(&p.tcn_gate),
                tcn_gate_bias: tape.param(&p.tcn_gate_bias),
                gcn: tape.param(&p.gcn),
                skip_proj: tape.param(&p.skip_proj),
            })
            .collect();
        BoundParams {
            input_proj: tape.param(&self.input_proj),
            layers,
            mrg_logits: tape.param(&self.mrg_logits),
            output_hidden: tape.param(&self.output_hidden),
            output_hidden_bias: tape.param(&self.output_hidden_bias),
            output_final: tape.param(&self.output_final),
            output_final_bias: tape.param(&self.output_final_bias),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        let vars: Vec<Var<'t>> = self.named().into_iter().map(|(_, t)| tape.constant(t)).collect();
        BoundParams::from_vars(&vars).expect("canonical layout")
    }

    /// Adds the gradients of `bound` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &BoundParams<'_>) -> Result<()> {
        for (var, t) in bound.vars().into_iter().zip(self.tensors_mut()) {
            grads.accumulate_into(var, t)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLayer<'t> {
    pub tcn_filter: Var<'t>,
    pub tcn_filter_bias: Var<'t>,
    pub tcn_gate: Var<'t>,
    pub tcn_gate_bias: Var<'t>,
    pub gcn: Var<'t>,
    pub skip_proj: Var<'t>,
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams<'t> {
    pub input_proj: Var<'t>,
    pub layers: Vec<BoundLayer<'t>>,
    pub mrg_logits: Var<'t>,
    pub output_hidden: Var<'t>,
    pub output_hidden_bias: Var<'t>,
    pub output_final: Var<'t>,
    pub output_final_bias: Var<'t>,
}

impl<'t> BoundParams<'t> {
    /// Same order as [`HiestParams::named`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.input_proj];
        for p in &self.layers {
            out.extend([
                p.tcn_filter,
                p.tcn_filter_bias,
                p.tcn_gate,
                p.tcn_gate_bias,
                p.gcn,
                p.skip_proj,
            ]);
        }
        out.extend([
            self.mrg_logits,
            self.output_hidden,
            self.output_hidden_bias,
            self.output_final,
            self.output_final_bias,
        ]);
        out
    }
}

impl<'t> BoundParams<'t> {
    /// Inverse of [`BoundParams::vars`].
    pub fn from_vars(vars: &[Var<'t>]) -> Result<Self> {
        if vars.len() < 6 || (vars.len() - 6) % 6 != 0 {
            return Err(Error::Config(format!(
                "{} variables do not form a parameter set",
                vars.len()
            )));
        }
        let n_layers = (vars.len() - 6) / 6;
        let layers = (0..n_layers)
            .map(|l| {
                let p = &vars[1 + 6 * l..7 + 6 * l];
                BoundLayer {
                    tcn_filter: p[0],
                    tcn_filter_bias: p[1],
                    tcn_gate: p[2],
                    tcn_gate_bias: p[3],
                    gcn: p[4],
                    skip_proj: p[5],
                }
            })
            .collect();
        let tail = &vars[1 + 6 * n_layers..];
        Ok(Self {
            input_proj: vars[0],
            layers,
            mrg_logits: tail[0],
            output_hidden: tail[1],
            output_hidden_bias: tail[2],
            output_final: tail[3],
            output_final_bias: tail[4],
        })
    }
}
