//! Spatial operations on `[n, c, h, w]` tensors: convolution, bilinear
//! resampling and instance normalization.

use crate::graph::Var;
use crate::tensor::{gemm, Tensor};

/// Per-axis `[vertical, horizontal]` stride and zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Conv2dGeometry {
    pub fn square(stride: usize, padding: usize) -> Self {
        Self { stride: [stride; 2], padding: [padding; 2] }
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(input + 2 * padding >= kernel, "kernel {kernel} larger than padded input {input}+2*{padding}");
    (input + 2 * padding - kernel) / stride + 1
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    sy: usize,
    sx: usize,
    py: usize,
    px: usize,
}

impl ConvDims {
    fn ckk(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let (ho, wo) = (d.ho, d.wo);
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = ((c * d.kh + i) * d.kw + j) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * d.sy + i) as isize - d.py as isize;
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    if iy < 0 || iy >= d.h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.sx + j) as isize - d.px as isize;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, x: &mut [f64]) {
    let (ho, wo) = (d.ho, d.wo);
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let row = ((c * d.kh + i) * d.kw + j) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * d.sy + i) as isize - d.py as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = (ox * d.sx + j) as isize - d.px as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Bilinear source taps for resizing `input` samples to `output` samples with
/// aligned corners: output `i` maps to source position `i * (input - 1) / (output - 1)`.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            if output == 1 || input == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_planes(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bottom = (1.0 - fx) * r1[x0] + fx * r1[x1];
                dst[oy * ow + ox] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    out
}

fn resize_planes_adjoint(g: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = src[oy * ow + ox];
                dst[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                dst[y0 * w + x1] += (1.0 - fy) * fx * v;
                dst[y1 * w + x0] += fy * (1.0 - fx) * v;
                dst[y1 * w + x1] += fy * fx * v;
            }
        }
    }
    out
}

/// Bilinear resize of a `[n, c, h, w]` tensor with aligned corners.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let s = x.shape();
    assert_eq!(s.len(), 4, "resize_bilinear expects [n, c, h, w]");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    Tensor::new([n, c, oh, ow], resize_planes(x.data(), n * c, h, w, oh, ow))
}

impl<'g> Var<'g> {
    /// 2-d cross-correlation of `[n, c, h, w]` with weights `[o, c, kh, kw]`
    /// and zero padding.
    pub fn conv2d(self, weight: Var<'g>, geometry: Conv2dGeometry) -> Var<'g> {
        assert!(std::ptr::eq(self.graph, weight.graph), "variables from different graphs");
        let (x, wt) = (self.value(), weight.value());
        let (xs, ws) = (x.shape(), wt.shape());
        assert_eq!(xs.len(), 4, "conv2d input must be [n, c, h, w], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [o, c, kh, kw], got {ws:?}");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
        let (n, o) = (xs[0], ws[0]);
        let d = ConvDims {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            ho: conv_out_len(xs[2], ws[2], geometry.stride[0], geometry.padding[0]),
            wo: conv_out_len(xs[3], ws[3], geometry.stride[1], geometry.padding[1]),
            sy: geometry.stride[0],
            sx: geometry.stride[1],
            py: geometry.padding[0],
            px: geometry.padding[1],
        };
        let (ckk, po) = (d.ckk(), d.plane_out());
        let in_plane = d.c * d.h * d.w;
        let keep_cols = weight.requires_grad();
        let mut cols_all = if keep_cols { vec![0.0; n * ckk * po] } else { Vec::new() };
        let mut cols = vec![0.0; ckk * po];
        let mut y = vec![0.0; n * o * po];
        for b in 0..n {
            let dst: &mut [f64] = if keep_cols { &mut cols_all[b * ckk * po..(b + 1) * ckk * po] } else { &mut cols };
            im2col(&x.data()[b * in_plane..(b + 1) * in_plane], &d, dst);
            gemm(o, ckk, po, 1.0, wt.data(), false, dst, false, 0.0, &mut y[b * o * po..(b + 1) * o * po]);
        }
        let out_shape = [n, o, d.ho, d.wo];
        self.graph.push(
            Tensor::new(out_shape, y),
            &[self, weight],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = vec![0.0; n * in_plane];
                    let mut dcols = vec![0.0; ckk * po];
                    for b in 0..n {
                        gemm(ckk, o, po, 1.0, wt.data(), true, &g[b * o * po..(b + 1) * o * po], false, 0.0, &mut dcols);
                        col2im(&dcols, &d, &mut gx[b * in_plane..(b + 1) * in_plane]);
                    }
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![0.0; o * ckk];
                    for b in 0..n {
                        gemm(
                            o,
                            po,
                            ckk,
                            1.0,
                            &g[b * o * po..(b + 1) * o * po],
                            false,
                            &cols_all[b * ckk * po..(b + 1) * ckk * po],
                            true,
                            1.0,
                            &mut gw,
                        );
                    }
                    gw
                });
                vec![gx, gw]
            }),
        )
    }

    /// Bilinear resize with aligned corners to `[oh, ow]`.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Var<'g> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "resize_bilinear expects [n, c, h, w]");
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let y = resize_planes(x.data(), planes, h, w, oh, ow);
        self.graph.push(
            Tensor::new([s[0], s[1], oh, ow], y),
            &[self],
            Box::new(move |g, _| vec![Some(resize_planes_adjoint(g, planes, h, w, oh, ow))]),
        )
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance
    /// over the spatial axes (biased variance).
    pub fn instance_norm(self, eps: f64) -> Var<'g> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert!(s.len() >= 3, "instance_norm expects [n, c, ...]");
        let plane: usize = s[2..].iter().product();
        let mut y = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(x.len() / plane);
        for chunk in y.chunks_mut(plane) {
            let mean = chunk.iter().sum::<f64>() / plane as f64;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + eps).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let yt = Tensor::new(s, y);
        let normalized = yt.clone();
        self.graph.push(
            yt,
            &[self],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; g.len()];
                for (((gc, yc), out), &is) in g
                    .chunks(plane)
                    .zip(normalized.data().chunks(plane))
                    .zip(gx.chunks_mut(plane))
                    .zip(&inv_std)
                {
                    let mg = gc.iter().sum::<f64>() / plane as f64;
                    let mgy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
                    for ((o, &gv), &yv) in out.iter_mut().zip(gc).zip(yc) {
                        *o = is * (gv - mg - yv * mgy);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn conv_matches_direct_loop() {
        let g = Graph::new();
        let x: Vec<f64> = (0..2 * 2 * 5 * 4).map(|i| ((i * 7) % 11) as f64 * 0.1 - 0.5).collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 3).map(|i| ((i * 5) % 13) as f64 * 0.05 - 0.3).collect();
        let xv = g.constant(Tensor::new([2, 2, 5, 4], x.clone()));
        let wv = g.constant(Tensor::new([3, 2, 3, 3], w.clone()));
        let y = xv.conv2d(wv, Conv2dGeometry::square(2, 1)).value();
        assert_eq!(y.shape(), &[2, 3, 3, 2]);
        for b in 0..2 {
            for o in 0..3 {
                for oy in 0..3 {
                    for ox in 0..2 {
                        let mut acc = 0.0;
                        for c in 0..2 {
                            for i in 0..3 {
                                for j in 0..3 {
                                    let iy = (oy * 2 + i) as isize - 1;
                                    let ix = (ox * 2 + j) as isize - 1;
                                    if iy < 0 || iy >= 5 || ix < 0 || ix >= 4 {
                                        continue;
                                    }
                                    acc += x[((b * 2 + c) * 5 + iy as usize) * 4 + ix as usize]
                                        * w[((o * 2 + c) * 3 + i) * 3 + j];
                                }
                            }
                        }
                        let got = y.data()[((b * 3 + o) * 3 + oy) * 2 + ox];
                        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn resize_preserves_corners_and_constants() {
        let x = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]);
        let y = resize_bilinear(&x, 4, 4);
        let d = y.data();
        assert_eq!((d[0], d[3], d[12], d[15]), (0.0, 1.0, 2.0, 3.0));
        let c = resize_bilinear(&Tensor::full([1, 2, 3, 5], 0.7), 6, 10);
        assert!(c.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }
}
