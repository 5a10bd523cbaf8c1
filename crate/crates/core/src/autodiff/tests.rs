use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Naive triple loop, independent of the gemm kernel.
fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
            }
        }
    }
    out
}

#[test]
fn matmul_identity_and_projector() {
    let tape = Tape::new();
    let i2 = tape.constant(&Tensor::eye(2));
    let m = tape.constant(&Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
    assert_eq!(i2.matmul(m).unwrap().value(), vec![1.0, 2.0, 3.0, 4.0]);

    let p = tape.constant(&Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
    let v = tape.constant(&Tensor::from_rows(&[[5.0], [7.0]]));
    assert_eq!(p.matmul(v).unwrap().value(), vec![5.0, 0.0]);
}

#[test]
fn matmul_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[4, 2], &mut rng);
    let tape = Tape::new();
    let c = tape.constant(&a).matmul(tape.constant(&b)).unwrap();
    assert_eq!(c.shape(), vec![3, 2]);
    assert!(close(&c.value(), &naive_matmul(&a, &b), 1e-12));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(&Tensor::zeros(&[2, 3]));
    let b = tape.constant(&Tensor::zeros(&[2, 3]));
    let err = a.matmul(b).unwrap_err().to_string();
    assert!(err.contains("[2, 3]"), "{err}");
    assert!(matches!(a.matmul(b), Err(Error::Dimension { .. })));
}

#[test]
fn elementwise_examples() {
    let tape = Tape::new();
    let x = tape.constant(&Tensor::new(&[3], vec![0.0, -3.0, 3.0]).unwrap());
    assert_eq!(x.sigmoid().value()[0], 0.5);
    assert_eq!(x.tanh().value()[0], 0.0);
    assert_eq!(x.relu().value(), vec![0.0, 0.0, 3.0]);
    assert_eq!(x.abs().value(), vec![0.0, 3.0, 3.0]);
    assert_eq!(x.scale(2.0).value(), vec![0.0, -6.0, 6.0]);
    let y = tape.constant(&Tensor::zeros(&[2]));
    assert!(matches!(x.add(y), Err(Error::Dimension { .. })));
}

#[test]
fn relu_derivative_at_zero_is_zero() {
    let tape = Tape::new();
    let x = tape.param(&Tensor::new(&[3], vec![-1.0, 0.0, 1.0]).unwrap());
    let g = x.relu().sum().backward().unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn conv_examples() {
    let tape = Tape::new();
    // K=1 with identity channel mixing.
    let x = tape.constant(&Tensor::from_fn(&[2, 3, 5], |i| i as f64 * 0.5));
    let mut w = Tensor::zeros(&[3, 3, 1]);
    for c in 0..3 {
        w.set(&[c, c, 0], 1.0);
    }
    let y = x.dilated_causal_conv1d(tape.constant(&w), 1).unwrap();
    assert_eq!(y.shape(), vec![2, 3, 5]);
    assert_eq!(y.value(), x.value());

    // w = [1, -1]: first tap is the current step, second looks one back.
    let x = tape.constant(&Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = tape.constant(&Tensor::new(&[1, 1, 2], vec![1.0, -1.0]).unwrap());
    assert_eq!(x.dilated_causal_conv1d(w, 1).unwrap().value(), vec![1.0, 1.0, 1.0]);
    assert_eq!(x.dilated_causal_conv1d(w, 2).unwrap().shape(), vec![1, 1, 2]);
    assert!(matches!(
        x.dilated_causal_conv1d(w, 4),
        Err(Error::InsufficientLength { needed: 5, len: 4 })
    ));
}

#[test]
fn conv_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[1, 2, 9], &mut rng);
    let w = random(&[2, 2, 2], &mut rng);
    let eval = |x: &Tensor| {
        let tape = Tape::new();
        tape.constant(x)
            .dilated_causal_conv1d(tape.constant(&w), 2)
            .unwrap()
            .to_tensor()
    };
    let base = eval(&x);
    let mut bumped = x.clone();
    // Perturb input time 6; output t' aligns with input time t' + 2.
    bumped.set(&[0, 1, 6], 10.0);
    let after = eval(&bumped);
    for c in 0..2 {
        for t in 0..7 {
            let changed = base.at(&[0, c, t]) != after.at(&[0, c, t]);
            // Taps read aligned times t+2 and t.
            assert_eq!(changed, t + 2 == 6 || t == 6, "c={c} t={t}");
            if t + 2 < 6 {
                assert!(!changed);
            }
        }
    }
}

#[test]
fn reductions() {
    let tape = Tape::new();
    let x = tape.constant(&Tensor::new(&[3], vec![1.0, -1.0, 2.0]).unwrap());
    assert!((x.mean_abs().item() - 4.0 / 3.0).abs() < 1e-15);
    let v = tape.constant(&Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    assert_eq!(v.l2_norm().item(), 5.0);
    let empty = tape.constant(&Tensor::zeros(&[2, 0]));
    assert_eq!(empty.sum_axis(1).unwrap().value(), vec![0.0, 0.0]);
    assert!(matches!(empty.sum_axis(2), Err(Error::Axis { axis: 2, rank: 2 })));

    let m = tape.constant(&Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
    assert_eq!(m.sum_axis(0).unwrap().value(), vec![5.0, 7.0, 9.0]);
    assert_eq!(m.mean_axis(1).unwrap().value(), vec![2.0, 5.0]);

    // Zero vector: norm 0 and gradient 0.
    let z = tape.param(&Tensor::zeros(&[3]));
    let n = z.l2_norm();
    assert_eq!(n.item(), 0.0);
    assert_eq!(n.backward().unwrap().get(z).unwrap(), &[0.0; 3]);
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let z = tape.constant(&Tensor::zeros(&[4]));
    assert!(close(&z.softmax(0).unwrap().value(), &[0.25; 4], 1e-15));
    let l = tape.constant(&Tensor::new(&[2], vec![1f64.ln(), 3f64.ln()]).unwrap());
    assert!(close(&l.softmax(0).unwrap().value(), &[0.25, 0.75], 1e-15));
    let shifted = l.add_scalar(123.0).softmax(0).unwrap();
    assert!(close(&shifted.value(), &[0.25, 0.75], 1e-12));
    let nan = tape.constant(&Tensor::new(&[2], vec![f64::NAN, 0.0]).unwrap());
    assert!(nan.softmax(0).unwrap().value().iter().all(|v| v.is_nan()));
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.param(&Tensor::from_fn(&[2, 3], |i| i as f64));
    assert_eq!(x.sum().backward().unwrap().get(x).unwrap(), &[1.0; 6]);

    let tape = Tape::new();
    let x = tape.param(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let g = x.mul(x).unwrap().sum().backward().unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);

    let tape = Tape::new();
    let x = tape.param(&Tensor::zeros(&[2]));
    assert!(matches!(x.backward(), Err(Error::Rank { .. })));
}

#[test]
fn reused_tensor_sums_path_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let xt = random(&[4], &mut rng);
    let grad_of = |f: &dyn for<'t> Fn(Var<'t>) -> Var<'t>| {
        let tape = Tape::new();
        let x = tape.param(&xt);
        f(x).backward().unwrap().get(x).unwrap().to_vec()
    };
    let path_a = grad_of(&|x| x.tanh().sum());
    let path_b = grad_of(&|x| x.sigmoid().scale(3.0).sum());
    let both = grad_of(&|x| x.tanh().add(x.sigmoid().scale(3.0)).unwrap().sum());
    let expected: Vec<f64> = path_a.iter().zip(&path_b).map(|(a, b)| a + b).collect();
    assert!(close(&both, &expected, 1e-14));
}

#[test]
fn gradients_accumulate_into_tensor() {
    let mut w = Tensor::new(&[2], vec![1.0, -2.0]).unwrap().with_grad();
    for _ in 0..2 {
        let tape = Tape::new();
        let v = tape.leaf(&w);
        let g = v.scale(3.0).sum().backward().unwrap();
        g.accumulate_into(v, &mut w).unwrap();
    }
    assert_eq!(w.grad().unwrap(), &[6.0, 6.0]);
    w.zero_grad();
    assert!(w.grad().is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(&Tensor::filled(&[2], 2.0));
    let p = tape.param(&Tensor::filled(&[2], 1.0));
    let g = c.mul(p).unwrap().sum().backward().unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap(), &[2.0, 2.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random(&[m, k], &mut rng), random(&[k, n], &mut rng), random(&[n, p], &mut rng));
        let tape = Tape::new();
        let (a, b, c) = (tape.constant(&a), tape.constant(&b), tape.constant(&c));
        let left = a.matmul(b).unwrap().matmul(c).unwrap().value();
        let right = a.matmul(b.matmul(c).unwrap()).unwrap().value();
        for (l, r) in left.iter().zip(&right) {
            prop_assert!((l - r).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }

    #[test]
    fn softmax_sums_to_one(values in prop::collection::vec(-50.0f64..50.0, 12), axis in 0usize..2) {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::new(&[3, 4], values).unwrap());
        let y = x.softmax(axis).unwrap();
        let sums = y.sum_axis(axis).unwrap().value();
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(y.value().iter().all(|&v| v >= 0.0));
    }
}
