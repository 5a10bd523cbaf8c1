use super::{ConvDims, Op, Var};
use crate::error::{Error, Result};
use crate::kernels::gemm;
use crate::tensor::numel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
    Abs,
    Log,
    Exp,
}

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Exp => x.exp(),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    Ok((
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    ))
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn unary(self, kind: UnaryKind) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| kind.apply(x)).collect(),
                n.requires_grad,
            )
        };
        self.tape
            .push(shape, value, Op::Unary { a: self.id, kind }, rg)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(UnaryKind::Relu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(UnaryKind::Log)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return Err(Error::dim(name, &a.shape, &b.shape));
            }
            (
                a.shape.clone(),
                a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect(),
            )
        };
        let rg = self.tape.any_requires_grad(&[self.id, other.id]);
        Ok(self.tape.push(shape, value, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Add { a: self.id, b: other.id };
        self.binary(other, "add", |x, y| x + y, op)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Sub { a: self.id, b: other.id };
        self.binary(other, "sub", |x, y| x - y, op)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Mul { a: self.id, b: other.id };
        self.binary(other, "mul", |x, y| x * y, op)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let op = Op::Div { a: self.id, b: other.id };
        self.binary(other, "div", |x, y| x / y, op)
    }

    fn map_scalar(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (shape, value, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            (
                n.shape.clone(),
                n.value.iter().map(|&x| f(x)).collect(),
                n.requires_grad,
            )
        };
        self.tape.push(shape, value, op, rg)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        self.map_scalar(|x| x * factor, Op::Scale { a: self.id, factor })
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.map_scalar(|x| x + c, Op::AddScalar { a: self.id })
    }

    /// Clamps into `[lo, hi]`; the gradient passes only where `lo ≤ x ≤ hi`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.map_scalar(|x| x.clamp(lo, hi), Op::Clamp { a: self.id, lo, hi })
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let (shape, value, channels) = {
            let nodes = self.tape.nodes();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            let c = *x.shape.last().unwrap_or(&1);
            if b.value.len() != c || b.shape.len() != 1 {
                return Err(Error::dim("add_bias", &x.shape, &b.shape));
            }
            let mut v = x.value.clone();
            if c > 0 {
                for row in v.chunks_mut(c) {
                    row.iter_mut().zip(&b.value).for_each(|(o, bb)| *o += bb);
                }
            }
            (x.shape.clone(), v, c)
        };
        let rg = self.tape.any_requires_grad(&[self.id, bias.id]);
        Ok(self.tape.push(
            shape,
            value,
            Op::AddBias {
                x: self.id,
                b: bias.id,
                channels,
            },
            rg,
        ))
    }

    /// Strict 2-D product `[m, k] · [k, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 {
            return Err(Error::dim("matmul", &a, &b));
        }
        self.linear(other).map_err(|_| Error::dim("matmul", &a, &b))
    }

    /// `[..., k] · [k, n] -> [..., n]`, treating leading axes as rows.
    pub fn linear(self, weight: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&weight);
        let (shape, value, rows, k, n) = {
            let nodes = self.tape.nodes();
            let (x, w) = (&nodes[self.id], &nodes[weight.id]);
            let k = match x.shape.last() {
                Some(&k) if w.shape.len() == 2 && w.shape[0] == k => k,
                _ => return Err(Error::dim("linear", &x.shape, &w.shape)),
            };
            let n = w.shape[1];
            let rows = numel(&x.shape[..x.shape.len() - 1]);
            let mut out = vec![0.0; rows * n];
            gemm(rows, k, n, 1.0, (&x.value, k, 1), (&w.value, n, 1), 0.0, (&mut out, n, 1));
            let mut shape = x.shape.clone();
            *shape.last_mut().unwrap() = n;
            (shape, out, rows, k, n)
        };
        let rg = self.tape.any_requires_grad(&[self.id, weight.id]);
        Ok(self.tape.push(
            shape,
            value,
            Op::MatMul {
                a: self.id,
                b: weight.id,
                rows,
                k,
                n,
            },
            rg,
        ))
    }

    /// `self` is `A: [n, m]`; computes `A · X[s]` for every slice of
    /// `x: [..., m, d]`, giving `[..., n, d]`.
    pub fn left_matmul(self, x: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&x);
        let (shape, value, n, m, d, batch) = {
            let nodes = self.tape.nodes();
            let (a, xs) = (&nodes[self.id], &nodes[x.id]);
            let r = xs.shape.len();
            if a.shape.len() != 2 || r < 2 || xs.shape[r - 2] != a.shape[1] {
                return Err(Error::dim("left_matmul", &a.shape, &xs.shape));
            }
            let (n, m, d) = (a.shape[0], a.shape[1], xs.shape[r - 1]);
            let batch = numel(&xs.shape[..r - 2]);
            let mut out = vec![0.0; batch * n * d];
            for s in 0..batch {
                gemm(
                    n,
                    m,
                    d,
                    1.0,
                    (&a.value, m, 1),
                    (&xs.value[s * m * d..], d, 1),
                    0.0,
                    (&mut out[s * n * d..], d, 1),
                );
            }
            let mut shape = xs.shape.clone();
            shape[r - 2] = n;
            (shape, out, n, m, d, batch)
        };
        let rg = self.tape.any_requires_grad(&[self.id, x.id]);
        Ok(self.tape.push(
            shape,
            value,
            Op::LeftMatMul {
                a: self.id,
                x: x.id,
                n,
                m,
                d,
                batch,
            },
            rg,
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            (n.value.iter().sum::<f64>(), n.requires_grad)
        };
        self.tape.push(Vec::new(), vec![value], Op::Sum { a: self.id }, rg)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.numel();
        // Mean of an empty tensor is taken as 0 rather than NaN.
        self.sum().scale(if n == 0 { 0.0 } else { 1.0 / n as f64 })
    }

    pub fn mean_abs(self) -> Var<'t> {
        self.abs().mean()
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let (shape, value, outer, len, inner, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let (outer, len, inner) = split_axis(&n.shape, axis)?;
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &n.value[(o * len + l) * inner..][..inner];
                    out[o * inner..][..inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, b)| *a += b);
                }
            }
            let mut shape = n.shape.clone();
            shape.remove(axis);
            (shape, out, outer, len, inner, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::SumAxis {
                a: self.id,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let len = *self.shape().get(axis).ok_or(Error::Axis {
            axis,
            rank: self.shape().len(),
        })?;
        Ok(self
            .sum_axis(axis)?
            .scale(if len == 0 { 0.0 } else { 1.0 / len as f64 }))
    }

    /// Euclidean norm of all elements. The gradient at the zero vector is 0.
    pub fn l2_norm(self) -> Var<'t> {
        let n = self.numel();
        let flat = self.reshape(&[1, n]).expect("numel preserved");
        let norms = flat.l2_norm_axis(1).expect("axis 1 exists");
        norms.reshape(&[]).expect("single element")
    }

    /// Euclidean norm along `axis`, removing it from the shape.
    pub fn l2_norm_axis(self, axis: usize) -> Result<Var<'t>> {
        let (shape, value, outer, len, inner, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let (outer, len, inner) = split_axis(&n.shape, axis)?;
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        let v = n.value[(o * len + l) * inner + i];
                        out[o * inner + i] += v * v;
                    }
                }
            }
            out.iter_mut().for_each(|v| *v = v.sqrt());
            let mut shape = n.shape.clone();
            shape.remove(axis);
            (shape, out, outer, len, inner, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Norm {
                a: self.id,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Softmax along `axis` with max subtraction. NaN inputs propagate.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let (shape, value, outer, len, inner, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let (outer, len, inner) = split_axis(&n.shape, axis)?;
            let mut out = vec![0.0; n.value.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let max = (0..len)
                        .map(|l| n.value[idx(l)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for l in 0..len {
                        let e = (n.value[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        total += e;
                    }
                    for l in 0..len {
                        out[idx(l)] /= total;
                    }
                }
            }
            (n.shape.clone(), out, outer, len, inner, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Softmax {
                a: self.id,
                outer,
                len,
                inner,
            },
            rg,
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            if numel(shape) != n.value.len() {
                return Err(Error::dim("reshape", &n.shape, shape));
            }
            (n.value.clone(), n.requires_grad)
        };
        Ok(self
            .tape
            .push(shape.to_vec(), value, Op::Reshape { a: self.id }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let (shape, value, in_shape, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let rank = n.shape.len();
            let mut seen = vec![false; rank];
            if axes.len() != rank {
                return Err(Error::dim("permute", &n.shape, axes));
            }
            for &a in axes {
                if a >= rank || std::mem::replace(&mut seen[a], true) {
                    return Err(Error::dim("permute", &n.shape, axes));
                }
            }
            let out_shape: Vec<usize> = axes.iter().map(|&a| n.shape[a]).collect();
            let mut out = vec![0.0; n.value.len()];
            permute_into(&n.value, &n.shape, axes, &mut out, false);
            (out_shape, out, n.shape.clone(), n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Permute {
                a: self.id,
                in_shape,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// 2-D transpose.
    pub fn transpose(self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Rank {
                op: "transpose",
                shape,
            });
        }
        self.permute(&[1, 0])
    }

    /// Keeps indices `start..start + width` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, width: usize) -> Result<Var<'t>> {
        let (shape, value, outer, len, inner, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let (outer, len, inner) = split_axis(&n.shape, axis)?;
            if start + width > len {
                return Err(Error::dim("narrow", &n.shape, &[axis, start, width]));
            }
            let mut out = Vec::with_capacity(outer * width * inner);
            for o in 0..outer {
                out.extend_from_slice(&n.value[(o * len + start) * inner..][..width * inner]);
            }
            let mut shape = n.shape.clone();
            shape[axis] = width;
            (shape, out, outer, len, inner, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Narrow {
                a: self.id,
                outer,
                len,
                inner,
                start,
                width,
            },
            rg,
        ))
    }

    /// Divides every row of a 2-D tensor by its sum.
    pub fn row_normalize(self) -> Result<Var<'t>> {
        let (shape, value, rows, cols, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let &[rows, cols] = &n.shape[..] else {
                return Err(Error::Rank {
                    op: "row_normalize",
                    shape: n.shape.clone(),
                });
            };
            let mut out = n.value.clone();
            for row in out.chunks_mut(cols.max(1)) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            (n.shape.clone(), out, rows, cols, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::RowNormalize {
                a: self.id,
                rows,
                cols,
            },
            rg,
        ))
    }

    /// Scales each row of a 2-D tensor to unit Euclidean norm. Rows with
    /// norm below `eps` map to zero and pass no gradient.
    pub fn normalize_rows(self, eps: f64) -> Result<Var<'t>> {
        let (shape, value, rows, cols, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let &[rows, cols] = &n.shape[..] else {
                return Err(Error::Rank {
                    op: "normalize_rows",
                    shape: n.shape.clone(),
                });
            };
            let mut out = n.value.clone();
            for row in out.chunks_mut(cols.max(1)) {
                let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r < eps {
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= r);
                }
            }
            (n.shape.clone(), out, rows, cols, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::NormalizeRows {
                a: self.id,
                rows,
                cols,
                eps,
            },
            rg,
        ))
    }

    /// Causal dilated convolution over the time axis of a time-major
    /// `[B, T, N, C_in]` tensor with taps `w: [K, C_in, C_out]`.
    ///
    /// Tap `k` reads the input `k·dilation` steps before the aligned time,
    /// so `out[t'] = Σ_k x[t' + (K-1-k)·dilation] · w[k]` and the output has
    /// `T' = T - (K-1)·dilation` steps. No output depends on a later input.
    pub fn temporal_conv(self, w: Var<'t>, dilation: usize) -> Result<Var<'t>> {
        self.same_tape(&w);
        let (shape, value, dims) = {
            let nodes = self.tape.nodes();
            let (x, wn) = (&nodes[self.id], &nodes[w.id]);
            let (&[batch, t_in, n_nodes, c_in], &[taps, wc_in, c_out]) =
                (&x.shape[..], &wn.shape[..])
            else {
                return Err(Error::dim("temporal_conv", &x.shape, &wn.shape));
            };
            if wc_in != c_in || taps == 0 || dilation == 0 {
                return Err(Error::dim("temporal_conv", &x.shape, &wn.shape));
            }
            let span = (taps - 1) * dilation;
            if t_in < span + 1 {
                return Err(Error::InsufficientLength {
                    needed: span + 1,
                    len: t_in,
                });
            }
            let t_out = t_in - span;
            let dims = ConvDims {
                x: self.id,
                w: w.id,
                batch,
                t_in,
                t_out,
                nodes: n_nodes,
                c_in,
                c_out,
                taps,
                dilation,
            };
            let mut out = vec![0.0; batch * t_out * n_nodes * c_out];
            let rows = t_out * n_nodes;
            for b in 0..batch {
                for k in 0..taps {
                    let off = (taps - 1 - k) * dilation;
                    gemm(
                        rows,
                        c_in,
                        c_out,
                        1.0,
                        (&x.value[(b * t_in + off) * n_nodes * c_in..], c_in, 1),
                        (&wn.value[k * c_in * c_out..], c_out, 1),
                        1.0,
                        (&mut out[b * rows * c_out..], c_out, 1),
                    );
                }
            }
            (vec![batch, t_out, n_nodes, c_out], out, dims)
        };
        let rg = self.tape.any_requires_grad(&[self.id, w.id]);
        Ok(self.tape.push(shape, value, Op::Conv(dims), rg))
    }

    /// Causal dilated 1-D convolution in channel-major layout:
    /// `x: [N, D_in, T]`, `w: [D_out, D_in, K]` → `[N, D_out, T']`.
    pub fn dilated_causal_conv1d(self, w: Var<'t>, dilation: usize) -> Result<Var<'t>> {
        let (xs, ws) = (self.shape(), w.shape());
        let (&[n, d_in, t], &[d_out, w_in, _]) = (&xs[..], &ws[..]) else {
            return Err(Error::dim("dilated_causal_conv1d", &xs, &ws));
        };
        if w_in != d_in {
            return Err(Error::dim("dilated_causal_conv1d", &xs, &ws));
        }
        let x_tm = self.permute(&[2, 0, 1])?.reshape(&[1, t, n, d_in])?;
        let w_tm = w.permute(&[2, 1, 0])?;
        let y = x_tm.temporal_conv(w_tm, dilation)?;
        let t_out = y.shape()[1];
        y.reshape(&[t_out, n, d_out])?.permute(&[1, 2, 0])
    }
}

/// Writes `src` permuted by `axes` into `dst`, or the inverse scatter-add
/// when `accumulate` is set (`dst` is then in the input layout).
pub(crate) fn permute_into(
    src: &[f64],
    in_shape: &[usize],
    axes: &[usize],
    dst: &mut [f64],
    accumulate: bool,
) {
    let rank = in_shape.len();
    if src.is_empty() && !accumulate || numel(in_shape) == 0 {
        return;
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut idx = vec![0usize; rank];
    let total = numel(in_shape);
    let mut offset = 0usize;
    for o in 0..total {
        if accumulate {
            dst[offset] += src[o];
        } else {
            dst[o] = src[offset];
        }
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}
