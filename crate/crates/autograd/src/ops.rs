//! Elementwise, linear-algebra, shape and reduction operations on [`Var`].

use std::ops::{Add, Mul, Neg, Sub};

use crate::graph::Var;
use crate::tensor::{gemm, Tensor};

fn same_graph(a: &Var<'_>, b: &Var<'_>) {
    assert!(std::ptr::eq(a.graph, b.graph), "variables from different graphs");
}

impl<'g> Var<'g> {
    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'g> {
        let x = self.value();
        let y = x.map(f);
        let (xs, ys) = (x.clone(), y.clone());
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(xs.data().iter().zip(ys.data()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        same_graph(&self, &other);
        let y = self.value().zip_map(&other.value(), |a, b| a + b);
        self.graph.push(y, &[self, other], Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]))
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        same_graph(&self, &other);
        let y = self.value().zip_map(&other.value(), |a, b| a - b);
        self.graph.push(
            y,
            &[self, other],
            Box::new(|g, needs| {
                let gb = needs[1].then(|| g.iter().map(|x| -x).collect());
                vec![Some(g.to_vec()), gb]
            }),
        )
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        same_graph(&self, &other);
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |a, b| a * b);
        self.graph.push(
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
                let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        same_graph(&self, &other);
        let (a, b) = (self.value(), other.value());
        let y = a.zip_map(&b, |a, b| a / b);
        self.graph.push(
            y,
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g / b).collect());
                let gb = needs[1].then(|| {
                    g.iter()
                        .zip(a.data().iter().zip(b.data()))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect()
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    /// Multiply every element by the single element of `s`.
    pub fn scale_by(self, s: Var<'g>) -> Var<'g> {
        same_graph(&self, &s);
        let (x, sv) = (self.value(), s.value());
        assert_eq!(sv.len(), 1, "scale_by expects a scalar");
        let c = sv.item();
        let y = x.map(|v| v * c);
        self.graph.push(
            y,
            &[self, s],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| g.iter().map(|g| g * c).collect());
                let gs = needs[1].then(|| vec![g.iter().zip(x.data()).map(|(g, x)| g * x).sum()]);
                vec![gx, gs]
            }),
        )
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g> {
        self.unary(
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Var<'g> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'g> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'g> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'g> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(self) -> Var<'g> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let n = x.len();
        self.graph.push(Tensor::scalar(x.sum()), &[self], Box::new(move |g, _| vec![Some(vec![g[0]; n])]))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(self) -> Var<'g> {
        let n = self.value().len();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// View with a new shape.
    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let y = self.value().reshape(shape.to_vec());
        self.graph.push(y, &[self], Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        self.matmul_impl(other, false)
    }

    /// `[m, k] x [n, k]^T -> [m, n]`.
    pub fn matmul_t(self, other: Var<'g>) -> Var<'g> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(self, other: Var<'g>, trans_b: bool) -> Var<'g> {
        same_graph(&self, &other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-d, got {:?}", a.shape());
        assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-d, got {:?}", b.shape());
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let (kb, n) = if trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        assert_eq!(k, kb, "matmul inner dimensions {:?} x {:?}", a.shape(), b.shape());
        let mut y = vec![0.0; m * n];
        gemm(m, k, n, 1.0, a.data(), false, b.data(), trans_b, 0.0, &mut y);
        self.graph.push(
            Tensor::new([m, n], y),
            &[self, other],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    // dA = G op(B)^T
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, false, b.data(), !trans_b, 0.0, &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    if trans_b {
                        // B is [n, k]: dB = G^T A
                        let mut gb = vec![0.0; n * k];
                        gemm(n, m, k, 1.0, g, true, a.data(), false, 0.0, &mut gb);
                        gb
                    } else {
                        // dB = A^T G
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, 1.0, a.data(), true, g, false, 0.0, &mut gb);
                        gb
                    }
                });
                vec![ga, gb]
            }),
        )
    }

    /// `[n, d] + [d]` broadcast over rows.
    pub fn add_row_bias(self, bias: Var<'g>) -> Var<'g> {
        same_graph(&self, &bias);
        let (x, b) = (self.value(), bias.value());
        let d = b.len();
        assert_eq!(*x.shape().last().unwrap(), d, "bias length");
        let mut y = x.into_vec();
        for row in y.chunks_mut(d) {
            row.iter_mut().zip(b.data()).for_each(|(y, b)| *y += b);
        }
        let shape = self.shape();
        self.graph.push(
            Tensor::new(shape, y),
            &[self, bias],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; d];
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        )
    }

    /// `[n, c, ...] + [c]` broadcast over batch and trailing axes.
    pub fn add_channel_bias(self, bias: Var<'g>) -> Var<'g> {
        same_graph(&self, &bias);
        let (x, b) = (self.value(), bias.value());
        let shape = x.shape().to_vec();
        let c = shape[1];
        assert_eq!(b.len(), c, "channel bias length");
        let plane: usize = shape[2..].iter().product();
        let mut y = x.into_vec();
        for (i, chunk) in y.chunks_mut(plane).enumerate() {
            let bc = b.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
        self.graph.push(
            Tensor::new(shape, y),
            &[self, bias],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; c];
                    for (i, chunk) in g.chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().sum::<f64>();
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        )
    }

    /// `[n, c, ...] * [c]` broadcast over batch and trailing axes.
    pub fn mul_channels(self, scale: Var<'g>) -> Var<'g> {
        same_graph(&self, &scale);
        let (x, s) = (self.value(), scale.value());
        let shape = x.shape().to_vec();
        let c = shape[1];
        assert_eq!(s.len(), c, "channel scale length");
        let plane: usize = shape[2..].iter().product();
        let mut y = x.data().to_vec();
        for (i, chunk) in y.chunks_mut(plane).enumerate() {
            let sc = s.data()[i % c];
            chunk.iter_mut().for_each(|v| *v *= sc);
        }
        self.graph.push(
            Tensor::new(shape, y),
            &[self, scale],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = g.to_vec();
                    for (i, chunk) in gx.chunks_mut(plane).enumerate() {
                        let sc = s.data()[i % c];
                        chunk.iter_mut().for_each(|v| *v *= sc);
                    }
                    gx
                });
                let gs = needs[1].then(|| {
                    let mut gs = vec![0.0; c];
                    for (i, (gc, xc)) in g.chunks(plane).zip(x.data().chunks(plane)).enumerate() {
                        gs[i % c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gs
                });
                vec![gx, gs]
            }),
        )
    }

    /// Reorder axes; `axes[i]` is the source axis of output axis `i`.
    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let x = self.value();
        let (y, _) = permute_tensor(&x, axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape = y.shape().to_vec();
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, _| {
                let gt = Tensor::new(out_shape.clone(), g.to_vec());
                vec![Some(permute_tensor(&gt, &inverse).0.into_vec())]
            }),
        )
    }

    /// Rows `start..start + len` along axis 0.
    pub fn narrow0(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let mut shape = x.shape().to_vec();
        assert!(start + len <= shape[0], "narrow0 out of range");
        let inner: usize = shape[1..].iter().product();
        let total = x.len();
        let y = x.data()[start * inner..(start + len) * inner].to_vec();
        shape[0] = len;
        self.graph.push(
            Tensor::new(shape, y),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                gx[start * inner..(start + len) * inner].copy_from_slice(g);
                vec![Some(gx)]
            }),
        )
    }

    /// Gather rows (axis 0) by index; indices may repeat.
    pub fn index_rows(self, indices: &[usize]) -> Var<'g> {
        let x = self.value();
        let mut shape = x.shape().to_vec();
        let rows = shape[0];
        let inner: usize = shape[1..].iter().product();
        let mut y = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            assert!(i < rows, "row index {i} out of range {rows}");
            y.extend_from_slice(&x.data()[i * inner..(i + 1) * inner]);
        }
        shape[0] = indices.len();
        let indices = indices.to_vec();
        let total = x.len();
        self.graph.push(
            Tensor::new(shape, y),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                for (r, &i) in indices.iter().enumerate() {
                    gx[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(&g[r * inner..(r + 1) * inner])
                        .for_each(|(a, b)| *a += b);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Euclidean norm of every row of a `[n, d]` input, shape `[n, 1]`.
    /// The gradient at a zero row is taken as zero.
    pub fn row_norms(self) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape().len(), 2, "row_norms expects [n, d]");
        let d = x.shape()[1];
        let norms: Vec<f64> = x.data().chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let n = norms.len();
        let nt = norms.clone();
        self.graph.push(
            Tensor::new([n, 1], norms),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n * d];
                for (r, (row, out)) in x.data().chunks(d).zip(gx.chunks_mut(d)).enumerate() {
                    if nt[r] > 0.0 {
                        let s = g[r] / nt[r];
                        row.iter().zip(out).for_each(|(x, o)| *o = s * x);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean over consecutive groups of `group` rows: `[n * group, d] -> [n, d]`.
    pub fn mean_row_groups(self, group: usize) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape().len(), 2);
        let (rows, d) = (x.shape()[0], x.shape()[1]);
        assert!(group > 0 && rows % group == 0, "rows {rows} not divisible by group {group}");
        let n = rows / group;
        let mut y = vec![0.0; n * d];
        for (r, row) in x.data().chunks(d).enumerate() {
            y[(r / group) * d..(r / group + 1) * d]
                .iter_mut()
                .zip(row)
                .for_each(|(a, b)| *a += b / group as f64);
        }
        self.graph.push(
            Tensor::new([n, d], y),
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; rows * d];
                for (r, out) in gx.chunks_mut(d).enumerate() {
                    let src = &g[(r / group) * d..(r / group + 1) * d];
                    out.iter_mut().zip(src).for_each(|(o, s)| *o = s / group as f64);
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise softmax of a `[n, d]` input.
    pub fn softmax_rows(self) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape().len(), 2, "softmax_rows expects [n, d]");
        let d = x.shape()[1];
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let yt = Tensor::new(x.shape().to_vec(), y);
        let yc = yt.clone();
        self.graph.push(
            yt,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(d).zip(yc.data().chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `[n, k]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'g> {
        let x = self.value();
        let (n, k) = (x.shape()[0], x.shape()[1]);
        assert_eq!(labels.len(), n, "one label per row");
        let mut probs = x.data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(k).zip(labels) {
            assert!(label < k, "label {label} out of range {k}");
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let labels = labels.to_vec();
        self.graph.push(
            Tensor::scalar(loss / n as f64),
            &[self],
            Box::new(move |g, _| {
                let mut gx = probs.clone();
                for (row, &label) in gx.chunks_mut(k).zip(&labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= g[0] / n as f64);
                }
                vec![Some(gx)]
            }),
        )
    }
}

/// Concatenate `[n, d_i]` inputs along columns.
pub fn concat_cols<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "concat of nothing");
    let graph = parts[0].graph;
    let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let n = values[0].shape()[0];
    let widths: Vec<usize> = values
        .iter()
        .map(|v| {
            assert_eq!(v.shape().len(), 2, "concat_cols expects 2-d inputs");
            assert_eq!(v.shape()[0], n, "row count mismatch in concat_cols");
            v.shape()[1]
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut y = Vec::with_capacity(n * total);
    for r in 0..n {
        for (v, &w) in values.iter().zip(&widths) {
            y.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
        }
    }
    graph.push(
        Tensor::new([n, total], y),
        parts,
        Box::new(move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let out = need.then(|| {
                        let mut gp = Vec::with_capacity(n * w);
                        for r in 0..n {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        gp
                    });
                    offset += w;
                    out
                })
                .collect()
        }),
    )
}

/// Concatenate inputs along axis 0; trailing shapes must agree.
pub fn concat0<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "concat of nothing");
    let graph = parts[0].graph;
    let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let tail = values[0].shape()[1..].to_vec();
    let mut rows = 0;
    let mut y = Vec::new();
    let mut lens = Vec::with_capacity(values.len());
    for v in &values {
        assert_eq!(&v.shape()[1..], &tail[..], "trailing shape mismatch in concat0");
        rows += v.shape()[0];
        lens.push(v.len());
        y.extend_from_slice(v.data());
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(&tail);
    graph.push(
        Tensor::new(shape, y),
        parts,
        Box::new(move |g, needs| {
            let mut offset = 0;
            lens.iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let out = need.then(|| g[offset..offset + len].to_vec());
                    offset += len;
                    out
                })
                .collect()
        }),
    )
}

pub(crate) fn permute_tensor(x: &Tensor, axes: &[usize]) -> (Tensor, Vec<usize>) {
    let shape = x.shape();
    assert_eq!(axes.len(), shape.len(), "permute rank");
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let data = x.data();
    for _ in 0..x.len() {
        let src: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (Tensor::new(out_shape.clone(), out), out_shape)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'g> Add for Var<'g> {
    type Output = Var<'g>;
    fn add(self, rhs: Var<'g>) -> Var<'g> {
        Var::add(self, rhs)
    }
}

impl<'g> Sub for Var<'g> {
    type Output = Var<'g>;
    fn sub(self, rhs: Var<'g>) -> Var<'g> {
        Var::sub(self, rhs)
    }
}

impl<'g> Mul for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: Var<'g>) -> Var<'g> {
        Var::mul(self, rhs)
    }
}

impl<'g> Mul<f64> for Var<'g> {
    type Output = Var<'g>;
    fn mul(self, rhs: f64) -> Var<'g> {
        self.mul_scalar(rhs)
    }
}

impl<'g> Neg for Var<'g> {
    type Output = Var<'g>;
    fn neg(self) -> Var<'g> {
        self.mul_scalar(-1.0)
    }
}
