//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::graph::SensorGraph;
use crate::losses::{hiest_objective, TargetScale};
use crate::model::{forward, BoundParams, HiestConfig, HiestParams, HierarchyGraphs};
use crate::tensor::Tensor;

/// Per-parameter comparison between analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    /// max over elements of `|analytic - numeric| / max(1, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares the tape gradient of the scalar `f` against central differences
/// `(f(p + h) - f(p - h)) / 2h` for every element of every parameter.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|(_, t)| tape.param(t)).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };

    let eval = |values: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.constant(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut working: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, tensor)) in params.iter().enumerate() {
        let mut numeric = vec![0.0; tensor.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let original = tensor.data()[i];
            working[pi].data_mut()[i] = original + step;
            let plus = eval(&working)?;
            working[pi].data_mut()[i] = original - step;
            let minus = eval(&working)?;
            working[pi].data_mut()[i] = original;
            *slot = (plus - minus) / (2.0 * step);
        }
        let mut worst = None;
        let mut max_rel = 0.0f64;
        for (i, (a, n)) in analytic[pi].iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / n.abs().max(1.0);
            // NaN compares false, so route it through `worst` explicitly.
            if rel > max_rel || rel.is_nan() {
                max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = Some(i);
            }
        }
        checks.push(ParamCheck {
            name: name.clone(),
            max_rel_error: max_rel,
            worst_index: worst,
            analytic: analytic[pi].clone(),
            numeric,
        });
    }
    Ok(GradCheckReport {
        tolerance,
        step,
        params: checks,
    })
}

type UnaryFn = for<'t> fn(Var<'t>) -> Result<Var<'t>>;
type BinaryFn = for<'t> fn(Var<'t>, Var<'t>) -> Result<Var<'t>>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check_unary(shape: &[usize], seed: u64, f: UnaryFn, step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(shape, &mut rng);
    // A fixed random projection makes the scalar depend on every output.
    let len = {
        let tape = Tape::new();
        f(tape.constant(&x))?.numel()
    };
    let probe = Tensor::from_fn(&[len], |_| rng.random_range(-1.0..1.0));
    grad_check(
        move |tape, p| {
            let y = f(p[0])?;
            Ok(y.reshape(&[y.numel()])?.mul(tape.constant(&probe))?.sum())
        },
        &[("x".to_string(), x)],
        step,
        tol,
    )
}

fn check_binary(a: &[usize], b: &[usize], seed: u64, f: BinaryFn, step: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = (random(a, &mut rng), random(b, &mut rng));
    grad_check(
        move |_, p| Ok(f(p[0], p[1])?.tanh().sum()),
        &[("a".into(), x), ("b".into(), y)],
        step,
        tol,
    )
}

/// Finite-difference checks of every differentiable tape operation on
/// small random inputs.
pub fn primitive_suite(step: f64, tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let unary: [(&'static str, &[usize], UnaryFn); 27] = [
        ("relu", &[3, 4], |x| Ok(x.relu())),
        ("sigmoid", &[3, 4], |x| Ok(x.sigmoid())),
        ("tanh", &[3, 4], |x| Ok(x.tanh())),
        ("abs", &[3, 4], |x| Ok(x.abs())),
        ("exp", &[3, 4], |x| Ok(x.exp())),
        ("log", &[3, 4], |x| Ok(x.abs().add_scalar(0.5).ln())),
        ("scale", &[3, 4], |x| Ok(x.scale(-2.5))),
        ("add_scalar", &[3, 4], |x| Ok(x.add_scalar(1.5))),
        ("clamp", &[3, 4], |x| Ok(x.clamp(-0.5, 0.5))),
        ("sum", &[3, 4], |x| Ok(x.sum())),
        ("mean", &[3, 4], |x| Ok(x.mean())),
        ("mean_abs", &[3, 4], |x| Ok(x.mean_abs())),
        ("sum_axis", &[2, 3, 4], |x| x.sum_axis(1)),
        ("mean_axis", &[2, 3, 4], |x| x.mean_axis(2)),
        ("l2_norm", &[3, 4], |x| Ok(x.l2_norm())),
        ("l2_norm_axis", &[2, 3, 4], |x| x.l2_norm_axis(1)),
        ("softmax_rows", &[3, 4], |x| x.softmax(0)),
        ("softmax_middle", &[2, 3, 4], |x| x.softmax(1)),
        ("permute", &[2, 3, 4], |x| x.permute(&[2, 0, 1])),
        ("transpose", &[3, 4], |x| x.transpose()),
        ("reshape", &[3, 4], |x| x.reshape(&[2, 6])),
        ("narrow", &[2, 5, 3], |x| x.narrow(1, 1, 3)),
        ("row_normalize", &[3, 4], |x| x.abs().add_scalar(0.3).row_normalize()),
        ("normalize_rows", &[3, 4], |x| x.normalize_rows(1e-12)),
        ("gram", &[3, 4], |x| x.matmul(x.transpose()?)),
        ("square", &[3, 4], |x| x.mul(x)),
        ("ratio", &[3, 4], |x| x.div(x.abs().add_scalar(1.0))),
    ];
    let binary: [(&'static str, &[usize], &[usize], BinaryFn); 10] = [
        ("add", &[2, 3], &[2, 3], |a, b| a.add(b)),
        ("sub", &[2, 3], &[2, 3], |a, b| a.sub(b)),
        ("mul", &[2, 3], &[2, 3], |a, b| a.mul(b)),
        ("div", &[2, 3], &[2, 3], |a, b| a.div(b.abs().add_scalar(0.5))),
        ("matmul", &[3, 4], &[4, 2], |a, b| a.matmul(b)),
        ("linear", &[2, 3, 4], &[4, 2], |a, b| a.linear(b)),
        ("left_matmul", &[3, 4], &[2, 2, 4, 3], |a, b| a.left_matmul(b)),
        ("add_bias", &[2, 3, 4], &[4], |a, b| a.add_bias(b)),
        ("temporal_conv", &[2, 7, 3, 2], &[3, 2, 4], |x, w| x.temporal_conv(w, 2)),
        ("conv1d", &[3, 2, 6], &[4, 2, 2], |x, w| x.dilated_causal_conv1d(w, 1)),
    ];
    let mut out = Vec::new();
    for (i, (name, shape, f)) in unary.into_iter().enumerate() {
        out.push((name, check_unary(shape, i as u64 + 1, f, step, tol)?));
    }
    for (i, (name, a, b, f)) in binary.into_iter().enumerate() {
        out.push((name, check_binary(a, b, i as u64 + 1, f, step, tol)?));
    }
    Ok(out)
}

/// Six sensors: a triangle and a 4-cycle sharing one node, giving two
/// regions. Paired with two global nodes.
pub fn toy_hierarchy() -> Result<(HiestConfig, HierarchyGraphs)> {
    let cfg = HiestConfig {
        blocks: 1,
        layers_per_block: 2,
        hidden: 3,
        n_global: 2,
        horizon: 2,
        history: 4,
        skip_dim: 3,
        ..HiestConfig::default()
    };
    let g = SensorGraph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (5, 2)])?;
    let hier = HierarchyGraphs::from_graph(&g, &cfg)?;
    Ok((cfg, hier))
}

/// Checks the gradient of the full four-term objective with respect to
/// every model parameter on the toy hierarchy.
pub fn toy_objective_check(seed: u64, step: f64, tol: f64) -> Result<GradCheckReport> {
    let (cfg, hier) = toy_hierarchy()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = HiestParams::init(&cfg, hier.region_count(), seed)?;
    // Move off the symmetric starting point so every path carries gradient.
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let x = random(&[2, cfg.history, hier.node_count(), cfg.in_dim], &mut rng);
    let y = random(&[2, cfg.horizon, hier.node_count(), cfg.out_dim], &mut rng).scale_into(3.0);
    let named: Vec<(String, Tensor)> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    grad_check(
        move |tape, vars| {
            let bound = BoundParams::from_vars(vars)?;
            let out = forward(tape, &x, &hier, &bound, &cfg, None)?;
            let scale = TargetScale { mean: 0.5, std: 2.0 };
            Ok(hiest_objective(&out, &y, None, &hier, scale, [1.0; 4])?.total)
        },
        &named,
        step,
        tol,
    )
}

trait ScaleInto {
    fn scale_into(self, f: f64) -> Self;
}

impl ScaleInto for Tensor {
    fn scale_into(mut self, f: f64) -> Self {
        self.data_mut().iter_mut().for_each(|v| *v *= f);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(name: &str, t: Tensor) -> (String, Tensor) {
        (name.to_string(), t)
    }

    #[test]
    fn sigmoid_of_linear_map_passes() {
        let w = Tensor::from_rows(&[[0.1, -0.2, 0.05], [0.3, 0.02, -0.1]]);
        let x = Tensor::from_rows(&[[0.5], [-1.0], [2.0]]);
        let report = grad_check(
            move |tape, p| {
                let x = tape.constant(&x);
                Ok(p[0].matmul(x)?.sigmoid().sum())
            },
            &[named("w", w)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn wrong_backward_rule_fails() {
        let x = Tensor::from_rows(&[[0.3, -0.7, 1.1]]);
        let report = grad_check(
            |tape, p| {
                let v = p[0].value();
                let shape = p[0].shape();
                let squared: Vec<f64> = v.iter().map(|a| a * a).collect();
                // d(x²)/dx is 2x; report x instead.
                let y = tape.custom(&[p[0]], shape, squared, |inputs, _, g| {
                    vec![inputs[0].iter().zip(g).map(|(x, g)| x * g).collect()]
                })?;
                Ok(y.sum())
            },
            &[named("x", x)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_error() > 0.1);
    }

    #[test]
    fn constant_function_passes_with_zero_gradients() {
        let x = Tensor::from_rows(&[[1.0, 2.0]]);
        let report = grad_check(
            |tape, _| Ok(tape.scalar(3.5)),
            &[named("x", x)],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.params[0].analytic.iter().all(|&g| g == 0.0));
        assert!(report.params[0].numeric.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn every_primitive_passes() {
        for (name, report) in primitive_suite(1e-5, 1e-4).unwrap() {
            assert!(report.passed(), "{name}: max rel err {}", report.max_rel_error());
        }
    }

    #[test]
    fn full_objective_passes_on_the_toy() {
        let report = toy_objective_check(0, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{:?}", report.worst().map(|w| (&w.name, w.max_rel_error)));
        assert_eq!(report.params.len(), 18);
    }
}
