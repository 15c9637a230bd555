use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::tensor::Tensor;

/// (outer, axis extent, inner) factorisation of a shape around `axis`.
fn split_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Var {
    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return invalid("concat", "no inputs");
        };
        let rank = first.shape().len();
        if axis >= rank {
            return invalid("concat", format!("axis {axis} out of range for rank {rank}"));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != rank || s.iter().enumerate().any(|(i, &d)| i != axis && d != first.shape()[i]) {
                return invalid(
                    "concat",
                    format!("shape {:?} incompatible with {:?} on axis {axis}", s, first.shape()),
                );
            }
        }
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let mut shape = first.shape().to_vec();
        shape[axis] = extents.iter().sum();
        let (outer, total, inner) = split_dims(&shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for (p, &e) in parts.iter().zip(&extents) {
            let src = p.value().data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + e * inner].copy_from_slice(&src[o * e * inner..(o + 1) * e * inner]);
            }
            offset += e;
        }
        let out = Tensor::new(&shape, data)?;
        let inputs = parts.iter().map(|&p| p.clone()).collect();
        Ok(Var::from_op(out, inputs, move |a| {
            let g = a.grad.data();
            let mut offset = 0;
            a.inputs
                .iter()
                .zip(&extents)
                .map(|(inp, &e)| {
                    let start = offset;
                    offset += e;
                    if !inp.requires_grad() {
                        return None;
                    }
                    let mut d = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let src = (o * total + start) * inner;
                        d.extend_from_slice(&g[src..src + e * inner]);
                    }
                    Some(Tensor::new(inp.shape(), d).unwrap())
                })
                .collect()
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return invalid("narrow", format!("range {start}+{len} on axis {axis} of {shape:?}"));
        }
        let (outer, total, inner) = split_dims(&shape, axis);
        let src = self.value().data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let mut d = vec![0.0; outer * total * inner];
            let g = a.grad.data();
            for o in 0..outer {
                let s = (o * total + start) * inner;
                d[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(&shape, d).unwrap())]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let out = self.value().clone().reshape(shape)?;
        let src = self.shape().to_vec();
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            vec![Some(a.grad.clone().reshape(&src).unwrap())]
        }))
    }
}
