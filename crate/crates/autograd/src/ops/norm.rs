use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// Smallest norm used as divisor, as in the usual `x / max(||x||, eps)`.
pub const NORM_EPS: f64 = 1e-12;

impl Var {
    /// L2-normalises every fibre along axis 1 (channels of NCHW, or the
    /// feature axis of an N x d matrix).
    pub fn l2_normalize_axis1(&self) -> Result<Var> {
        let shape = self.shape().to_vec();
        if shape.len() < 2 {
            return invalid("l2_normalize", format!("needs rank >= 2, got {shape:?}"));
        }
        let outer = shape[0];
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let x = self.value().data();
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in 0..inner {
                    norms[o * inner + i] += x[base + i] * x[base + i];
                }
            }
        }
        norms.iter_mut().for_each(|n| *n = n.sqrt().max(NORM_EPS));
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in 0..inner {
                    y[base + i] = x[base + i] / norms[o * inner + i];
                }
            }
        }
        let out = Tensor::new(&shape, y)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let y = a.output.data();
            let g = a.grad.data();
            let mut dot = vec![0.0; outer * inner];
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    for i in 0..inner {
                        dot[o * inner + i] += y[base + i] * g[base + i];
                    }
                }
            }
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for ch in 0..c {
                    let base = (o * c + ch) * inner;
                    for i in 0..inner {
                        let k = o * inner + i;
                        d[base + i] = if norms[k] > NORM_EPS {
                            (g[base + i] - y[base + i] * dot[k]) / norms[k]
                        } else {
                            g[base + i] / NORM_EPS
                        };
                    }
                }
            }
            vec![Some(Tensor::new(&shape, d).unwrap())]
        }))
    }
}
