//! Pointwise unary ops and broadcasting binary ops.

use crate::error::{Result, TensorError};
use crate::exec;
use crate::graph::Var;
use crate::tensor::{strides, Tensor};

fn unary<F, D>(x: &Var, f: F, df: D) -> Var
where
    F: Fn(f64) -> f64 + Send + Sync,
    D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
{
    let xv = x.value();
    let mut out = Tensor::zeros(xv.shape());
    exec::map_into(out.data_mut(), xv.data(), f);
    Var::from_op(out, vec![x.clone()], move |a| {
        let xv = a.inputs[0].value();
        let g = a.grad.data();
        let y = a.output.data();
        let data = xv
            .data()
            .iter()
            .zip(y)
            .zip(g)
            .map(|((&x, &y), &g)| g * df(x, y))
            .collect();
        vec![Some(Tensor::new(xv.shape(), data).unwrap())]
    })
}

pub(crate) fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Var {
    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Var {
        unary(self, move |x| x * k, move |_, _| k)
    }

    pub fn add_scalar(&self, k: f64) -> Var {
        unary(self, move |x| x + k, |_, _| 1.0)
    }

    pub fn relu(&self) -> Var {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// x * sigmoid(x)
    pub fn silu(&self) -> Var {
        unary(
            self,
            |x| x * sigmoid_f(x),
            |x, _| {
                let s = sigmoid_f(x);
                s * (1.0 + x * (1.0 - s))
            },
        )
    }

    pub fn sigmoid(&self) -> Var {
        unary(self, sigmoid_f, |_, y| y * (1.0 - y))
    }

    /// Elementwise |x|; the subgradient at 0 is 0.
    pub fn abs(&self) -> Var {
        unary(self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        binary(self, other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        binary(self, other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        binary(self, other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    /// Elementwise maximum; ties send the gradient to `self`.
    pub fn maximum(&self, other: &Var) -> Result<Var> {
        binary(self, other, "maximum", f64::max, |a, b| {
            if a >= b {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            }
        })
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum_all(&self) -> Var {
        let s = self.value().sum();
        Var::from_op(Tensor::scalar(s), vec![self.clone()], |a| {
            let g = a.grad.item();
            vec![Some(Tensor::full(a.inputs[0].shape(), g))]
        })
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sums over broadcast axes so the result has `shape` (the reverse of
    /// broadcasting `shape` up to `self.shape()`).
    pub fn sum_to(&self, shape: &[usize]) -> Result<Var> {
        let out = reduce_to(self.value(), shape)?;
        let src_shape = self.shape().to_vec();
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            vec![Some(broadcast_to(a.grad, &src_shape).unwrap())]
        }))
    }

    /// Repeats size-1 axes up to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var> {
        let out = broadcast_to(self.value(), shape)?;
        let src_shape = self.shape().to_vec();
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            vec![Some(reduce_to(a.grad, &src_shape).unwrap())]
        }))
    }
}

/// Broadcast shape of two equal-rank shapes.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let err = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(err());
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(err()),
        })
        .collect()
}

fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), s)| if d == 1 && o != 1 { 0 } else { s })
        .collect()
}

/// Calls `f(out_index, a_offset, b_offset)` over the output of a broadcast,
/// for the slice of output rows `[row * row_len, (row+1) * row_len)` where a
/// row is one step along axis 0.
fn walk_row(out_shape: &[usize], sa: &[usize], sb: &[usize], row: usize, mut f: impl FnMut(usize, usize, usize)) {
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    idx[0] = row;
    let row_len: usize = out_shape[1..].iter().product();
    let mut oa = row * sa[0];
    let mut ob = row * sb[0];
    for i in 0..row_len {
        f(i, oa, ob);
        // odometer over axes 1..rank
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                break;
            }
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
            ax -= 1;
        }
    }
}

fn binary<F, D>(a: &Var, b: &Var, op: &'static str, f: F, df: D) -> Result<Var>
where
    F: Fn(f64, f64) -> f64 + Send + Sync,
    D: Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
{
    let (av, bv) = (a.value(), b.value());
    let out = if av.shape() == bv.shape() {
        av.zip_map(bv, &f)?
    } else {
        let shape = broadcast_shape(op, av.shape(), bv.shape())?;
        let sa = bcast_strides(av.shape(), &shape);
        let sb = bcast_strides(bv.shape(), &shape);
        let mut out = Tensor::zeros(&shape);
        let row_len: usize = shape[1..].iter().product();
        let (ad, bd) = (av.data(), bv.data());
        exec::for_each_chunk_mut(out.data_mut(), row_len.max(1), |row, chunk| {
            walk_row(&shape, &sa, &sb, row, |i, ia, ib| chunk[i] = f(ad[ia], bd[ib]));
        });
        out
    };
    Ok(Var::from_op(out, vec![a.clone(), b.clone()], move |args| {
        let (av, bv) = (args.inputs[0].value(), args.inputs[1].value());
        let g = args.grad;
        let shape = g.shape();
        let need_a = args.inputs[0].requires_grad();
        let need_b = args.inputs[1].requires_grad();
        if av.shape() == bv.shape() {
            let mut ga = Tensor::zeros(shape);
            let mut gb = Tensor::zeros(shape);
            for i in 0..g.len() {
                let (da, db) = df(av.data()[i], bv.data()[i]);
                ga.data_mut()[i] = g.data()[i] * da;
                gb.data_mut()[i] = g.data()[i] * db;
            }
            return vec![need_a.then_some(ga), need_b.then_some(gb)];
        }
        let sa = bcast_strides(av.shape(), shape);
        let sb = bcast_strides(bv.shape(), shape);
        let mut ga = Tensor::zeros(av.shape());
        let mut gb = Tensor::zeros(bv.shape());
        let row_len: usize = shape[1..].iter().product();
        let (ad, bd, gd) = (av.data(), bv.data(), g.data());
        for row in 0..shape[0] {
            walk_row(shape, &sa, &sb, row, |i, ia, ib| {
                let gi = gd[row * row_len + i];
                let (da, db) = df(ad[ia], bd[ib]);
                ga.data_mut()[ia] += gi * da;
                gb.data_mut()[ib] += gi * db;
            });
        }
        vec![need_a.then_some(ga), need_b.then_some(gb)]
    }))
}

/// Sum `t` down to `shape` over axes where `shape` has extent 1.
pub fn reduce_to(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if t.shape() == shape {
        return Ok(t.clone());
    }
    let full = broadcast_shape("reduce_to", shape, t.shape())?;
    if full != t.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "reduce_to",
            lhs: t.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let so = bcast_strides(shape, t.shape());
    let mut out = Tensor::zeros(shape);
    let row_len: usize = t.shape()[1..].iter().product();
    let zero = vec![0; so.len()];
    for row in 0..t.shape()[0] {
        walk_row(t.shape(), &so, &zero, row, |i, io, _| {
            out.data_mut()[io] += t.data()[row * row_len + i];
        });
    }
    Ok(out)
}

pub fn broadcast_to(t: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let full = broadcast_shape("broadcast_to", t.shape(), shape)?;
    if full != shape {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_to",
            lhs: t.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let st = bcast_strides(t.shape(), shape);
    let zero = vec![0; st.len()];
    let mut out = Tensor::zeros(shape);
    let row_len: usize = shape[1..].iter().product();
    for row in 0..shape[0] {
        walk_row(shape, &st, &zero, row, |i, it, _| {
            out.data_mut()[row * row_len + i] = t.data()[it];
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(shape: &[usize], f: impl Fn(usize) -> f64) -> Var {
        Var::leaf(Tensor::from_fn(shape, f))
    }

    #[test]
    fn broadcast_add_and_grad() {
        let x = leaf(&[2, 3, 2, 2], |i| i as f64);
        let b = leaf(&[1, 3, 1, 1], |i| 10.0 * i as f64);
        let y = x.add(&b).unwrap();
        assert_eq!(y.value().at4(1, 2, 1, 1), 23.0 + 20.0);
        let g = y.sum_all().backward();
        assert_eq!(g.get(&b).unwrap().data(), &[8.0, 8.0, 8.0]);
        assert_eq!(g.get(&x).unwrap().sum(), 24.0);
    }

    #[test]
    fn broadcast_mul_spatial_gate() {
        let x = leaf(&[1, 2, 2, 2], |i| i as f64 + 1.0);
        let s = leaf(&[1, 1, 2, 2], |i| i as f64);
        let y = x.mul(&s).unwrap();
        assert_eq!(y.value().data(), &[0.0, 2.0, 6.0, 12.0, 0.0, 6.0, 14.0, 24.0]);
        let g = y.sum_all().backward();
        // d/ds = sum over channels of x
        assert_eq!(g.get(&s).unwrap().data(), &[6.0, 8.0, 10.0, 12.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let a = leaf(&[1, 2, 3, 3], |_| 0.0);
        let b = leaf(&[1, 3, 3, 3], |_| 0.0);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn reduce_then_broadcast() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let r = reduce_to(&t, &[1, 3, 1]).unwrap();
        assert_eq!(r.data(), &[0. + 1. + 2. + 3. + 12. + 13. + 14. + 15., 92.0, 124.0]);
        let b = broadcast_to(&r, &[2, 3, 4]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 4]);
        assert_eq!(b.data()[5], 92.0);
    }
}
