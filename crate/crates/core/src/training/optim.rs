use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adaptive-moment optimizer with decoupled weight decay and global
/// gradient-norm clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled so their global norm is at most this.
    pub clip_norm: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamW {
    pub fn new(shapes: &[&[usize]], weight_decay: f64, clip_norm: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Applies one update from each tensor's accumulated gradient, then
    /// clears the gradients. Tensors without a gradient count as zero.
    pub fn step(&mut self, names: &[String], params: &mut [&mut Tensor], lr: f64) -> Result<StepReport> {
        if params.len() != self.m.len() || names.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        let mut sq = 0.0;
        for (name, p) in names.iter().zip(params.iter()) {
            if let Some(g) = p.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(format!(
                        "{name}[{i}] = {}",
                        g[i]
                    )));
                }
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        let clipped = norm > self.clip_norm;
        let factor = if clipped { self.clip_norm / norm } else { 1.0 };

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v * factor).collect(),
                None => vec![0.0; p.numel()],
            };
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                data[i] -= lr * (update + self.weight_decay * data[i]);
            }
            p.zero_grad();
        }
        Ok(StepReport {
            grad_norm: norm,
            clipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        p.accumulate_grad(&[0.0; 3]).unwrap();
        let before = p.clone();
        let mut opt = AdamW::new(&[&[3]], 0.0, 5.0);
        opt.step(&names(1), &mut [&mut p], 1e-3).unwrap();
        assert_eq!(p.data(), before.data());
    }

    #[test]
    fn quadratic_converges() {
        let mut x = Tensor::new(&[1], vec![0.0]).unwrap();
        let mut opt = AdamW::new(&[&[1]], 0.0, 5.0);
        for _ in 0..2000 {
            let g = 2.0 * (x.data()[0] - 3.0);
            x.accumulate_grad(&[g]).unwrap();
            opt.step(&names(1), &mut [&mut x], 1e-2).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-3, "{}", x.data()[0]);
    }

    #[test]
    fn global_norm_is_clipped() {
        let mut a = Tensor::zeros(&[1]);
        let mut b = Tensor::zeros(&[1]);
        a.accumulate_grad(&[30.0]).unwrap();
        b.accumulate_grad(&[40.0]).unwrap();
        let mut opt = AdamW::new(&[&[1], &[1]], 0.0, 5.0);
        let r = opt.step(&names(2), &mut [&mut a, &mut b], 0.0).unwrap();
        assert_eq!(r.grad_norm, 50.0);
        assert!(r.clipped);
        // First moments hold (1-β₁)·clipped gradient = 0.1·[3, 4].
        let m = [opt.m[0].data()[0], opt.m[1].data()[0]];
        let clipped = (m[0].powi(2) + m[1].powi(2)).sqrt() / 0.1;
        assert!((clipped - 5.0).abs() < 1e-12);
        assert!(a.grad().is_none() || a.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut a = Tensor::zeros(&[2]);
        let mut b = Tensor::zeros(&[2]);
        b.accumulate_grad(&[0.0, f64::NAN]).unwrap();
        let mut opt = AdamW::new(&[&[2], &[2]], 0.0, 5.0);
        let names = vec!["layer0.gcn".to_string(), "mrg_logits".to_string()];
        match opt.step(&names, &mut [&mut a, &mut b], 1e-3) {
            Err(Error::NonFiniteGradient(msg)) => assert!(msg.contains("mrg_logits[1]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = Tensor::new(&[1], vec![2.0]).unwrap();
        let mut opt = AdamW::new(&[&[1]], 0.5, 5.0);
        opt.step(&names(1), &mut [&mut p], 0.1).unwrap();
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
