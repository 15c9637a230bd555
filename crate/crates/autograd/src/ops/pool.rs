//! Global pooling over space or over channels.

use crate::error::Result;
use crate::graph::Var;
use crate::tensor::Tensor;

impl Var {
    /// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
    pub fn global_avg_pool(&self) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        let p = h * w;
        let data = self
            .value()
            .data()
            .chunks(p)
            .map(|ch| ch.iter().sum::<f64>() / p as f64)
            .collect();
        let out = Tensor::new(&[n, c, 1, 1], data)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let mut d = Vec::with_capacity(n * c * p);
            for &g in a.grad.data() {
                d.extend(std::iter::repeat_n(g / p as f64, p));
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        }))
    }

    /// (N, C, H, W) -> (N, C, 1, 1) spatial max; gradient to the first argmax.
    pub fn global_max_pool(&self) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        let p = h * w;
        let mut arg = Vec::with_capacity(n * c);
        let mut data = Vec::with_capacity(n * c);
        for ch in self.value().data().chunks(p) {
            let (i, v) = ch.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            );
            arg.push(i);
            data.push(v);
        }
        let out = Tensor::new(&[n, c, 1, 1], data)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let mut d = vec![0.0; n * c * p];
            for (k, (&g, &i)) in a.grad.data().iter().zip(&arg).enumerate() {
                d[k * p + i] = g;
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        }))
    }

    /// (N, C, H, W) -> (N, 1, H, W) mean over channels.
    pub fn channel_mean(&self) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        let p = h * w;
        let x = self.value().data();
        let mut data = vec![0.0; n * p];
        for s in 0..n {
            for ch in 0..c {
                let src = &x[(s * c + ch) * p..(s * c + ch + 1) * p];
                data[s * p..(s + 1) * p].iter_mut().zip(src).for_each(|(d, v)| *d += v);
            }
        }
        data.iter_mut().for_each(|v| *v /= c as f64);
        let out = Tensor::new(&[n, 1, h, w], data)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let g = a.grad.data();
            let mut d = vec![0.0; n * c * p];
            for s in 0..n {
                for ch in 0..c {
                    d[(s * c + ch) * p..(s * c + ch + 1) * p]
                        .iter_mut()
                        .zip(&g[s * p..(s + 1) * p])
                        .for_each(|(d, g)| *d = g / c as f64);
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        }))
    }

    /// (N, C, H, W) -> (N, 1, H, W) max over channels; gradient to the first argmax.
    pub fn channel_max(&self) -> Result<Var> {
        let (n, c, h, w) = self.value().dims4()?;
        let p = h * w;
        let x = self.value().data();
        let mut data = vec![f64::NEG_INFINITY; n * p];
        let mut arg = vec![0usize; n * p];
        for s in 0..n {
            for ch in 0..c {
                let src = &x[(s * c + ch) * p..(s * c + ch + 1) * p];
                for i in 0..p {
                    if src[i] > data[s * p + i] {
                        data[s * p + i] = src[i];
                        arg[s * p + i] = ch;
                    }
                }
            }
        }
        let out = Tensor::new(&[n, 1, h, w], data)?;
        Ok(Var::from_op(out, vec![self.clone()], move |a| {
            let g = a.grad.data();
            let mut d = vec![0.0; n * c * p];
            for s in 0..n {
                for i in 0..p {
                    d[(s * c + arg[s * p + i]) * p + i] = g[s * p + i];
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_reduce_expected_axes() {
        let x = Var::leaf(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64));
        assert_eq!(x.global_avg_pool().unwrap().value().data(), &[1.5, 5.5]);
        assert_eq!(x.global_max_pool().unwrap().value().data(), &[3.0, 7.0]);
        assert_eq!(x.channel_mean().unwrap().value().data(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(x.channel_max().unwrap().value().data(), &[4.0, 5.0, 6.0, 7.0]);
        let g = x.global_max_pool().unwrap().sum_all().backward();
        assert_eq!(g.get(&x).unwrap().data(), &[0., 0., 0., 1., 0., 0., 0., 1.]);
    }
}
