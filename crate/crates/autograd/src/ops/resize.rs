//! Bilinear resampling with half-pixel centres (`align_corners = false`).

use crate::error::{invalid, Result};
use crate::exec;
use crate::graph::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w0: f64,
    w1: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - l,
                w1: l,
            }
        })
        .collect()
}

/// Bilinear resize of a plain (N, C, H, W) tensor.
pub fn resize_bilinear_tensor(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if oh == 0 || ow == 0 {
        return invalid("resize_bilinear", "empty output");
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    exec::for_each_chunk_mut(out.data_mut(), oh * ow, |plane, o| {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for (oy, ty) in ty.iter().enumerate() {
            let r0 = &s[ty.i0 * w..(ty.i0 + 1) * w];
            let r1 = &s[ty.i1 * w..(ty.i1 + 1) * w];
            for (ox, tx) in tx.iter().enumerate() {
                let top = tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1];
                let bot = tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1];
                o[oy * ow + ox] = ty.w0 * top + ty.w1 * bot;
            }
        }
    });
    Ok(out)
}

impl Var {
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        let out = resize_bilinear_tensor(self.value(), oh, ow)?;
        let ty = taps(h, oh);
        let tx = taps(w, ow);
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let g = a.grad.data();
            exec::for_each_chunk_mut(dx.data_mut(), h * w, |plane, d| {
                let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                for (oy, ty) in ty.iter().enumerate() {
                    for (ox, tx) in tx.iter().enumerate() {
                        let gv = gp[oy * ow + ox];
                        d[ty.i0 * w + tx.i0] += gv * ty.w0 * tx.w0;
                        d[ty.i0 * w + tx.i1] += gv * ty.w0 * tx.w1;
                        d[ty.i1 * w + tx.i0] += gv * ty.w1 * tx.w0;
                        d[ty.i1 * w + tx.i1] += gv * ty.w1 * tx.w1;
                    }
                }
            });
            vec![Some(dx)]
        }))
    }
}
