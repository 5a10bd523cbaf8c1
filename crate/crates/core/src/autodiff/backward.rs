//! Vector-Jacobian products for every recorded operation.

use super::ops::{permute_into, UnaryKind};
use super::{ConvDims, Node, Op};
use crate::kernels::gemm;

/// Zero-initialized gradient buffer for `id`, or `None` when `id` does not
/// need a gradient.
fn slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    Some(grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(super) fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, rows, k, n } => {
            if let Some(da) = slot(nodes, grads, a) {
                gemm(rows, n, k, 1.0, (g, n, 1), (&nodes[b].value, 1, n), 1.0, (da, k, 1));
            }
            if let Some(db) = slot(nodes, grads, b) {
                gemm(k, rows, n, 1.0, (&nodes[a].value, 1, k), (g, n, 1), 1.0, (db, n, 1));
            }
        }
        &Op::LeftMatMul { a, x, n, m, d, batch } => {
            if let Some(da) = slot(nodes, grads, a) {
                let xv = &nodes[x].value;
                for s in 0..batch {
                    gemm(n, d, m, 1.0, (&g[s * n * d..], d, 1), (&xv[s * m * d..], 1, d), 1.0, (da, m, 1));
                }
            }
            if let Some(dx) = slot(nodes, grads, x) {
                let av = &nodes[a].value;
                for s in 0..batch {
                    gemm(m, n, d, 1.0, (av, 1, m), (&g[s * n * d..], d, 1), 1.0, (&mut dx[s * m * d..], d, 1));
                }
            }
        }
        &Op::Unary { a, kind } => {
            let x = &nodes[a].value;
            if let Some(da) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    let local = match kind {
                        UnaryKind::Relu => {
                            if x[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Sigmoid => out[i] * (1.0 - out[i]),
                        UnaryKind::Tanh => 1.0 - out[i] * out[i],
                        UnaryKind::Abs => {
                            if x[i] > 0.0 {
                                1.0
                            } else if x[i] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Log => 1.0 / x[i],
                        UnaryKind::Exp => out[i],
                    };
                    da[i] += g[i] * local;
                }
            }
        }
        &Op::Add { a, b } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g);
            }
            if let Some(db) = slot(nodes, grads, b) {
                add_into(db, g);
            }
        }
        &Op::Sub { a, b } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g);
            }
            if let Some(db) = slot(nodes, grads, b) {
                db.iter_mut().zip(g).for_each(|(d, s)| *d -= s);
            }
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            if let Some(da) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
        }
        &Op::Div { a, b } => {
            let bv = &nodes[b].value;
            if let Some(da) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    da[i] += g[i] / bv[i];
                }
            }
            if let Some(db) = slot(nodes, grads, b) {
                for i in 0..g.len() {
                    db[i] -= g[i] * out[i] / bv[i];
                }
            }
        }
        &Op::Scale { a, factor } => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().zip(g).for_each(|(d, s)| *d += factor * s);
            }
        }
        &Op::AddScalar { a } | &Op::Reshape { a } => {
            if let Some(da) = slot(nodes, grads, a) {
                add_into(da, g);
            }
        }
        &Op::AddBias { x, b, channels } => {
            if let Some(dx) = slot(nodes, grads, x) {
                add_into(dx, g);
            }
            if channels > 0 {
                if let Some(db) = slot(nodes, grads, b) {
                    for row in g.chunks(channels) {
                        add_into(db, row);
                    }
                }
            }
        }
        &Op::Clamp { a, lo, hi } => {
            let x = &nodes[a].value;
            if let Some(da) = slot(nodes, grads, a) {
                for i in 0..g.len() {
                    if x[i] >= lo && x[i] <= hi {
                        da[i] += g[i];
                    }
                }
            }
        }
        &Op::Sum { a } => {
            if let Some(da) = slot(nodes, grads, a) {
                da.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::SumAxis { a, outer, len, inner } => {
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    let src = &g[o * inner..][..inner];
                    for l in 0..len {
                        add_into(&mut da[(o * len + l) * inner..][..inner], src);
                    }
                }
            }
        }
        &Op::Norm { a, outer, len, inner } => {
            let x = &nodes[a].value;
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let r = out[o * inner + i];
                        if r == 0.0 {
                            continue;
                        }
                        let gi = g[o * inner + i] / r;
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i;
                            da[idx] += gi * x[idx];
                        }
                    }
                }
            }
        }
        &Op::Softmax { a, outer, len, inner } => {
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[idx(l)] * out[idx(l)]).sum();
                        for l in 0..len {
                            da[idx(l)] += out[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::Permute { a, in_shape, axes } => {
            if let Some(da) = slot(nodes, grads, *a) {
                permute_into(g, in_shape, axes, da, true);
            }
        }
        &Op::Narrow { a, outer, len, inner, start, width } => {
            if let Some(da) = slot(nodes, grads, a) {
                for o in 0..outer {
                    add_into(
                        &mut da[(o * len + start) * inner..][..width * inner],
                        &g[o * width * inner..][..width * inner],
                    );
                }
            }
        }
        Op::Conv(dims) => conv_backward(nodes, dims, g, grads),
        &Op::RowNormalize { a, rows, cols } => {
            let x = &nodes[a].value;
            if let Some(da) = slot(nodes, grads, a) {
                for r in 0..rows {
                    let base = r * cols;
                    let s: f64 = x[base..base + cols].iter().sum();
                    let dot: f64 = (0..cols).map(|c| g[base + c] * out[base + c]).sum();
                    for c in 0..cols {
                        da[base + c] += (g[base + c] - dot) / s;
                    }
                }
            }
        }
        &Op::NormalizeRows { a, rows, cols, eps } => {
            let x = &nodes[a].value;
            if let Some(da) = slot(nodes, grads, a) {
                for r in 0..rows {
                    let base = r * cols;
                    let norm = x[base..base + cols].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < eps {
                        continue;
                    }
                    let dot: f64 = (0..cols).map(|c| g[base + c] * out[base + c]).sum();
                    for c in 0..cols {
                        da[base + c] += (g[base + c] - out[base + c] * dot) / norm;
                    }
                }
            }
        }
        Op::Custom { inputs, backward } => {
            let values: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let contributions = backward(&values, out, g);
            assert_eq!(contributions.len(), inputs.len(), "custom backward arity");
            for (&i, c) in inputs.iter().zip(&contributions) {
                if let Some(di) = slot(nodes, grads, i) {
                    assert_eq!(di.len(), c.len(), "custom backward gradient length");
                    add_into(di, c);
                }
            }
        }
    }
}

fn conv_backward(nodes: &[Node], d: &ConvDims, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let rows = d.t_out * d.nodes;
    let (c_in, c_out) = (d.c_in, d.c_out);
    if let Some(dx) = slot(nodes, grads, d.x) {
        let w = &nodes[d.w].value;
        for b in 0..d.batch {
            for k in 0..d.taps {
                let off = (d.taps - 1 - k) * d.dilation;
                gemm(
                    rows,
                    c_out,
                    c_in,
                    1.0,
                    (&g[b * rows * c_out..], c_out, 1),
                    (&w[k * c_in * c_out..], 1, c_out),
                    1.0,
                    (&mut dx[(b * d.t_in + off) * d.nodes * c_in..], c_in, 1),
                );
            }
        }
    }
    if let Some(dw) = slot(nodes, grads, d.w) {
        let x = &nodes[d.x].value;
        for b in 0..d.batch {
            for k in 0..d.taps {
                let off = (d.taps - 1 - k) * d.dilation;
                gemm(
                    c_in,
                    rows,
                    c_out,
                    1.0,
                    (&x[(b * d.t_in + off) * d.nodes * c_in..], 1, c_in),
                    (&g[b * rows * c_out..], c_out, 1),
                    1.0,
                    (&mut dw[k * c_in * c_out..], c_out, 1),
                );
            }
        }
    }
}
