//! 2-D convolution (NCHW, square kernels) via im2col + GEMM.

use crate::error::{invalid, Result};
use crate::exec;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Stride, zero padding, dilation and channel grouping of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    /// Stride-1 convolution that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            ..Self::default()
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

/// C = alpha * op(A) * op(B) + beta * C, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the index ranges implied by the dimensions and
    // strides above (checked in debug builds), and `c` does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Geometry {
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin_g * self.k * self.k
    }

    fn out_px(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    /// im2col of one group of one sample; `x` holds that group's channels.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let Conv2dSpec {
            stride,
            padding,
            dilation,
            ..
        } = self.spec;
        let p = self.out_px();
        for c in 0..self.cin_g {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                        let drow = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            drow.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Accumulates columns back into one group's input gradient.
    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let Conv2dSpec {
            stride,
            padding,
            dilation,
            ..
        } = self.spec;
        let p = self.out_px();
        for c in 0..self.cin_g {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let drow = &mut dxc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                drow[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward(g: &Geometry, x: &[f64], w: &[f64], out: &mut [f64]) {
    // one input and one output channel per group
    let Conv2dSpec {
        stride,
        padding,
        dilation,
        ..
    } = g.spec;
    let kk = g.k * g.k;
    let hw = g.h * g.w;
    let p = g.out_px();
    for (c, oc) in out.chunks_mut(p).enumerate() {
        let xc = &x[c * hw..(c + 1) * hw];
        let wc = &w[c * kk..(c + 1) * kk];
        oc.fill(0.0);
        for ky in 0..g.k {
            for kx in 0..g.k {
                let wv = wc[ky * g.k + kx];
                for oy in 0..g.oh {
                    let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut oc[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            *d += wv * src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Returns (dx, dw) contributions of one sample for a depthwise conv.
fn depthwise_backward(g: &Geometry, x: &[f64], w: &[f64], gy: &[f64], dx: &mut [f64], dw: &mut [f64]) {
    let Conv2dSpec {
        stride,
        padding,
        dilation,
        ..
    } = g.spec;
    let kk = g.k * g.k;
    let hw = g.h * g.w;
    let p = g.out_px();
    let channels = gy.len() / p;
    for c in 0..channels {
        let xc = &x[c * hw..(c + 1) * hw];
        let gc = &gy[c * p..(c + 1) * p];
        let dxc = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let wv = w[c * kk + ky * g.k + kx];
                let mut acc = 0.0;
                for oy in 0..g.oh {
                    let iy = (oy * stride + ky * dilation) as isize - padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * stride + kx * dilation) as isize - padding as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            let gv = gc[oy * g.ow + ox];
                            acc += gv * xc[base + ix as usize];
                            dxc[base + ix as usize] += gv * wv;
                        }
                    }
                }
                dw[c * kk + ky * g.k + kx] += acc;
            }
        }
    }
}

impl Var {
    /// Convolves `self` (N, Cin, H, W) with `weight` (Cout, Cin/groups, k, k)
    /// and adds an optional per-channel `bias` of shape (Cout).
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, spec: Conv2dSpec) -> Result<Var> {
        let (n, cin, h, w) = self.value().dims4()?;
        let (cout, cin_g, k, k2) = weight.value().dims4()?;
        if k != k2 {
            return invalid("conv2d", format!("non-square kernel {k}x{k2}"));
        }
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            return invalid(
                "conv2d",
                format!("channels {cin}->{cout} not divisible by groups {}", spec.groups),
            );
        }
        if cin / spec.groups != cin_g {
            return invalid(
                "conv2d",
                format!(
                    "weight expects {cin_g} channels per group, input gives {}",
                    cin / spec.groups
                ),
            );
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return invalid("conv2d", "stride and dilation must be positive");
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return invalid("conv2d", format!("bias shape {:?}, expected [{cout}]", b.shape()));
            }
        }
        let (Some(oh), Some(ow)) = (spec.output_size(h, k), spec.output_size(w, k)) else {
            return invalid("conv2d", format!("kernel {k} does not fit input {h}x{w}"));
        };
        let geo = Geometry {
            cin_g,
            cout_g: cout / spec.groups,
            h,
            w,
            k,
            oh,
            ow,
            spec,
        };
        let out = conv_forward(&geo, self.value(), weight.value(), bias.map(|b| b.value()), n, cout);

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Var::from_op(out, inputs, move |a| {
            let x = a.inputs[0].value();
            let wt = a.inputs[1].value();
            let gy = a.grad;
            let (dx, dw) = conv_backward(
                &geo,
                x,
                wt,
                gy,
                a.inputs[0].requires_grad(),
                a.inputs[1].requires_grad(),
            );
            let mut grads = vec![dx, dw];
            if a.inputs.len() == 3 {
                let p = geo.out_px();
                let cout = wt.dim(0);
                let mut db = vec![0.0; cout];
                for (i, chunk) in gy.data().chunks(p).enumerate() {
                    db[i % cout] += chunk.iter().sum::<f64>();
                }
                grads.push(Some(Tensor::new(&[cout], db).unwrap()));
            }
            grads
        }))
    }
}

fn conv_forward(geo: &Geometry, x: &Tensor, w: &Tensor, bias: Option<&Tensor>, n: usize, cout: usize) -> Tensor {
    let groups = geo.spec.groups;
    let p = geo.out_px();
    let rows = geo.col_rows();
    let in_sample = groups * geo.cin_g * geo.h * geo.w;
    let in_group = geo.cin_g * geo.h * geo.w;
    let wg = geo.cout_g * rows;
    let mut out = Tensor::zeros(&[n, cout, geo.oh, geo.ow]);
    let depthwise = geo.cin_g == 1 && geo.cout_g == 1;
    exec::for_each_chunk_mut(out.data_mut(), cout * p, |s, o| {
        let xs = &x.data()[s * in_sample..(s + 1) * in_sample];
        if depthwise {
            depthwise_forward(geo, xs, w.data(), o);
        } else {
            let mut col = if geo.is_pointwise() {
                Vec::new()
            } else {
                vec![0.0; rows * p]
            };
            for g in 0..groups {
                let xg = &xs[g * in_group..(g + 1) * in_group];
                let b: &[f64] = if geo.is_pointwise() {
                    xg
                } else {
                    geo.im2col(xg, &mut col);
                    &col
                };
                let og = &mut o[g * geo.cout_g * p..(g + 1) * geo.cout_g * p];
                gemm(
                    geo.cout_g,
                    rows,
                    p,
                    &w.data()[g * wg..(g + 1) * wg],
                    false,
                    b,
                    false,
                    og,
                    0.0,
                );
            }
        }
        if let Some(b) = bias {
            for (c, oc) in o.chunks_mut(p).enumerate() {
                let bv = b.data()[c];
                oc.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

fn conv_backward(
    geo: &Geometry,
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let n = x.dim(0);
    let groups = geo.spec.groups;
    let p = geo.out_px();
    let rows = geo.col_rows();
    let in_group = geo.cin_g * geo.h * geo.w;
    let in_sample = groups * in_group;
    let out_sample = groups * geo.cout_g * p;
    let wg = geo.cout_g * rows;
    let depthwise = geo.cin_g == 1 && geo.cout_g == 1;

    if depthwise {
        // dx and dw come out of the same sweep; split per sample then reduce dw.
        let parts = exec::map_indices(n, |s| {
            let xs = &x.data()[s * in_sample..(s + 1) * in_sample];
            let gs = &gy.data()[s * out_sample..(s + 1) * out_sample];
            let mut dx = vec![0.0; in_sample];
            let mut dw = vec![0.0; w.len()];
            depthwise_backward(geo, xs, w.data(), gs, &mut dx, &mut dw);
            (dx, dw)
        });
        let mut dx = Vec::with_capacity(n * in_sample);
        let mut dw = vec![0.0; w.len()];
        for (px, pw) in parts {
            dx.extend_from_slice(&px);
            dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
        }
        return (
            need_dx.then(|| Tensor::new(x.shape(), dx).unwrap()),
            need_dw.then(|| Tensor::new(w.shape(), dw).unwrap()),
        );
    }

    let dw = need_dw.then(|| {
        let data = exec::reduce_buffers(n, w.len(), |s| {
            let xs = &x.data()[s * in_sample..(s + 1) * in_sample];
            let gs = &gy.data()[s * out_sample..(s + 1) * out_sample];
            let mut dw = vec![0.0; w.len()];
            let mut col = if geo.is_pointwise() {
                Vec::new()
            } else {
                vec![0.0; rows * p]
            };
            for g in 0..groups {
                let xg = &xs[g * in_group..(g + 1) * in_group];
                let b: &[f64] = if geo.is_pointwise() {
                    xg
                } else {
                    geo.im2col(xg, &mut col);
                    &col
                };
                let gg = &gs[g * geo.cout_g * p..(g + 1) * geo.cout_g * p];
                // dW_g (cout_g x rows) = gy_g (cout_g x p) * col^T (p x rows)
                gemm(
                    geo.cout_g,
                    p,
                    rows,
                    gg,
                    false,
                    b,
                    true,
                    &mut dw[g * wg..(g + 1) * wg],
                    0.0,
                );
            }
            dw
        });
        Tensor::new(w.shape(), data).unwrap()
    });

    let dx = need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        exec::for_each_chunk_mut(dx.data_mut(), in_sample, |s, dxs| {
            let gs = &gy.data()[s * out_sample..(s + 1) * out_sample];
            let mut dcol = vec![0.0; rows * p];
            for g in 0..groups {
                let gg = &gs[g * geo.cout_g * p..(g + 1) * geo.cout_g * p];
                let dxg = &mut dxs[g * in_group..(g + 1) * in_group];
                if geo.is_pointwise() {
                    // dx_g (rows x p) = W_g^T (rows x cout_g) * gy_g
                    gemm(
                        rows,
                        geo.cout_g,
                        p,
                        &w.data()[g * wg..(g + 1) * wg],
                        true,
                        gg,
                        false,
                        dxg,
                        0.0,
                    );
                } else {
                    gemm(
                        rows,
                        geo.cout_g,
                        p,
                        &w.data()[g * wg..(g + 1) * wg],
                        true,
                        gg,
                        false,
                        &mut dcol,
                        0.0,
                    );
                    geo.col2im(&dcol, dxg);
                }
            }
        });
        dx
    });
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn naive(x: &Tensor, w: &Tensor, spec: Conv2dSpec) -> Tensor {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, cin_g, k, _) = w.dims4().unwrap();
        let oh = spec.output_size(h, k).unwrap();
        let ow = spec.output_size(wd, k).unwrap();
        let cout_g = cout / spec.groups;
        let _ = cin;
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        for s in 0..n {
            for o in 0..cout {
                let g = o / cout_g;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc +=
                                            x.at4(s, g * cin_g + ci, iy as usize, ix as usize) * w.at4(o, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        let i = ((s * cout + o) * oh + oy) * ow + ox;
                        out.data_mut()[i] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(shape, |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matches_naive_for_assorted_specs() {
        let cases = [
            (4, 8, 3, Conv2dSpec::same(3, 1)),
            (8, 8, 3, Conv2dSpec::same(3, 2).with_groups(4)),
            (
                3,
                6,
                4,
                Conv2dSpec {
                    stride: 4,
                    ..Default::default()
                },
            ),
            (5, 5, 3, Conv2dSpec::same(3, 1).with_groups(5)),
            (6, 2, 1, Conv2dSpec::default()),
            (
                4,
                4,
                2,
                Conv2dSpec {
                    stride: 2,
                    ..Default::default()
                },
            ),
        ];
        for (i, (cin, cout, k, spec)) in cases.into_iter().enumerate() {
            let x = pseudo(&[2, cin, 8, 8], i as u64);
            let w = pseudo(&[cout, cin / spec.groups, k, k], 100 + i as u64);
            let y = Var::constant(x.clone())
                .conv2d(&Var::constant(w.clone()), None, spec)
                .unwrap();
            let want = naive(&x, &w, spec);
            assert!(y.value().max_abs_diff(&want) < 1e-12, "case {i}");
        }
    }

    #[test]
    fn rejects_bad_groups() {
        let x = Var::constant(Tensor::zeros(&[1, 6, 4, 4]));
        let w = Var::constant(Tensor::zeros(&[4, 2, 3, 3]));
        assert!(x.conv2d(&w, None, Conv2dSpec::same(3, 1).with_groups(4)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cases = [
            (4, 8, 3, Conv2dSpec::same(3, 2).with_groups(2)),
            (3, 3, 3, Conv2dSpec::same(3, 1).with_groups(3)),
            (3, 4, 1, Conv2dSpec::default()),
            (
                2,
                4,
                2,
                Conv2dSpec {
                    stride: 2,
                    ..Default::default()
                },
            ),
        ];
        for (i, (cin, cout, k, spec)) in cases.into_iter().enumerate() {
            let x0 = pseudo(&[2, cin, 5, 6], 7 + i as u64);
            let w0 = pseudo(&[cout, cin / spec.groups, k, k], 70 + i as u64);
            let b0 = pseudo(&[cout], 700 + i as u64);
            let proj = pseudo(
                &[
                    2,
                    cout,
                    spec.output_size(5, k).unwrap(),
                    spec.output_size(6, k).unwrap(),
                ],
                9,
            );
            let f = |x: &Tensor, w: &Tensor, b: &Tensor| {
                let y = Var::constant(x.clone())
                    .conv2d(&Var::constant(w.clone()), Some(&Var::constant(b.clone())), spec)
                    .unwrap();
                y.value()
                    .data()
                    .iter()
                    .zip(proj.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let (x, w, b) = (Var::leaf(x0.clone()), Var::leaf(w0.clone()), Var::leaf(b0.clone()));
            let y = x.conv2d(&w, Some(&b), spec).unwrap();
            let g = y.mul(&Var::constant(proj.clone())).unwrap().sum_all().backward();
            let h = 1e-6;
            for (var, base, which) in [(&x, &x0, 0), (&w, &w0, 1), (&b, &b0, 2)] {
                let analytic = g.get(var).unwrap();
                for j in (0..base.len()).step_by(3) {
                    let mut p = base.clone();
                    p.data_mut()[j] += h;
                    let mut m = base.clone();
                    m.data_mut()[j] -= h;
                    let fd = match which {
                        0 => (f(&p, &w0, &b0) - f(&m, &w0, &b0)) / (2.0 * h),
                        1 => (f(&x0, &p, &b0) - f(&x0, &m, &b0)) / (2.0 * h),
                        _ => (f(&x0, &w0, &p) - f(&x0, &w0, &m)) / (2.0 * h),
                    };
                    let a = analytic.data()[j];
                    assert!(
                        (a - fd).abs() < 1e-7 * (1.0 + fd.abs()),
                        "case {i} input {which} idx {j}: {a} vs {fd}"
                    );
                }
            }
        }
    }
}
