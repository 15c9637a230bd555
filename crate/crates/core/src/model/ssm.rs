//! Bidirectional linear recurrent scan over the row-major pixel sequence.
//!
//! For channel `c` with `S` states of decay `a = sigmoid(theta)`:
//!
//! ```text
//! h_t = a h_{t-1} + (1 - a) b x_t        (left to right)
//! g_t = a g_{t+1} + (1 - a) b' x_t       (right to left)
//! y_t = sum_s c_s h_t,s + c'_s g_t,s
//! ```
//!
//! The recurrences are evaluated directly, so cost is linear in sequence
//! length. Planes `(n, c)` are independent and processed in parallel.

use fcd_autograd::{exec, sigmoid, Binding, ParamId, Tensor, Var};

use super::layers::{Conv, ConvDef, Init};
use crate::error::{arg_err, Result};

/// Per-channel coefficients, each `(C, S)` row-major.
struct Coeffs<'a> {
    s: usize,
    a: Vec<f64>,
    b: &'a [f64],
    c: &'a [f64],
    b2: &'a [f64],
    c2: &'a [f64],
}

impl Coeffs<'_> {
    fn row(&self, ch: usize) -> std::ops::Range<usize> {
        ch * self.s..(ch + 1) * self.s
    }
}

fn forward_plane(k: &Coeffs, ch: usize, x: &[f64], y: &mut [f64]) {
    let r = k.row(ch);
    let (a, b, c, b2, c2) = (
        &k.a[r.clone()],
        &k.b[r.clone()],
        &k.c[r.clone()],
        &k.b2[r.clone()],
        &k.c2[r],
    );
    let mut h = vec![0.0; k.s];
    for (t, &xt) in x.iter().enumerate() {
        let mut acc = 0.0;
        for s in 0..k.s {
            h[s] = a[s] * h[s] + (1.0 - a[s]) * b[s] * xt;
            acc += c[s] * h[s];
        }
        y[t] = acc;
    }
    h.iter_mut().for_each(|v| *v = 0.0);
    for t in (0..x.len()).rev() {
        let mut acc = 0.0;
        for s in 0..k.s {
            h[s] = a[s] * h[s] + (1.0 - a[s]) * b2[s] * x[t];
            acc += c2[s] * h[s];
        }
        y[t] += acc;
    }
}

/// Gradient of one plane. Returns `dx` and the partials
/// `[dtheta | db | dc | db2 | dc2]` for this channel, each of length `S`.
fn backward_plane(k: &Coeffs, ch: usize, x: &[f64], gy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let ns = k.s;
    let r = k.row(ch);
    let (a, b, c, b2, c2) = (
        &k.a[r.clone()],
        &k.b[r.clone()],
        &k.c[r.clone()],
        &k.b2[r.clone()],
        &k.c2[r],
    );
    let mut dx = vec![0.0; n];
    let mut part = vec![0.0; 5 * ns];
    let mut hs = vec![0.0; n * ns];
    for s in 0..ns {
        // left-to-right direction: recompute states, then adjoint sweep backwards
        let mut h = 0.0;
        for t in 0..n {
            h = a[s] * h + (1.0 - a[s]) * b[s] * x[t];
            hs[t * ns + s] = h;
        }
        let (mut lam, mut da, mut db, mut dc) = (0.0, 0.0, 0.0, 0.0);
        for t in (0..n).rev() {
            lam = c[s] * gy[t] + a[s] * lam;
            let h_prev = if t > 0 { hs[(t - 1) * ns + s] } else { 0.0 };
            dx[t] += (1.0 - a[s]) * b[s] * lam;
            db += (1.0 - a[s]) * x[t] * lam;
            dc += gy[t] * hs[t * ns + s];
            da += lam * (h_prev - b[s] * x[t]);
        }
        // right-to-left direction
        let mut g = 0.0;
        for t in (0..n).rev() {
            g = a[s] * g + (1.0 - a[s]) * b2[s] * x[t];
            hs[t * ns + s] = g;
        }
        let (mut mu, mut db2, mut dc2) = (0.0, 0.0, 0.0);
        for t in 0..n {
            mu = c2[s] * gy[t] + a[s] * mu;
            let g_next = if t + 1 < n { hs[(t + 1) * ns + s] } else { 0.0 };
            dx[t] += (1.0 - a[s]) * b2[s] * mu;
            db2 += (1.0 - a[s]) * x[t] * mu;
            dc2 += gy[t] * hs[t * ns + s];
            da += mu * (g_next - b2[s] * x[t]);
        }
        part[s] = da * a[s] * (1.0 - a[s]);
        part[ns + s] = db;
        part[2 * ns + s] = dc;
        part[3 * ns + s] = db2;
        part[4 * ns + s] = dc2;
    }
    (dx, part)
}

/// Applies the scan to `x` of shape `(N, C, H, W)`. Every coefficient
/// variable has shape `(C, S)`.
pub fn scan(x: &Var, theta: &Var, b: &Var, c: &Var, b2: &Var, c2: &Var) -> Result<Var> {
    let shape = x.shape().to_vec();
    if shape.len() != 4 {
        return arg_err(format!("scan expects NCHW input, got {shape:?}"));
    }
    let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let cs = theta.shape().to_vec();
    if cs.len() != 2 || cs[0] != ch || [b, c, b2, c2].iter().any(|v| v.shape() != cs.as_slice()) {
        return arg_err(format!("scan coefficients must all be ({ch}, S), got theta {cs:?}"));
    }
    let len = h * w;
    let coeffs = Coeffs {
        s: cs[1],
        a: theta.value().data().iter().map(|&t| sigmoid(t)).collect(),
        b: b.value().data(),
        c: c.value().data(),
        b2: b2.value().data(),
        c2: c2.value().data(),
    };
    let xd = x.value().data();
    let mut y = vec![0.0; xd.len()];
    exec::for_each_chunk_mut(&mut y, len, |plane, out| {
        forward_plane(&coeffs, plane % ch, &xd[plane * len..(plane + 1) * len], out);
    });
    let value = Tensor::new(&shape, y)?;
    let inputs = vec![x.clone(), theta.clone(), b.clone(), c.clone(), b2.clone(), c2.clone()];
    Ok(Var::from_op(value, inputs, move |args| {
        let v = |i: usize| args.inputs[i].value().data();
        let k = Coeffs {
            s: cs[1],
            a: v(1).iter().map(|&t| sigmoid(t)).collect(),
            b: v(2),
            c: v(3),
            b2: v(4),
            c2: v(5),
        };
        let ns = k.s;
        let xd = v(0);
        let gy = args.grad.data();
        let planes = exec::map_indices(n * ch, |p| {
            backward_plane(&k, p % ch, &xd[p * len..(p + 1) * len], &gy[p * len..(p + 1) * len])
        });
        let mut dx = Vec::with_capacity(xd.len());
        let mut dcoef = vec![vec![0.0; ch * ns]; 5];
        for (p, (dxp, part)) in planes.into_iter().enumerate() {
            dx.extend_from_slice(&dxp);
            let cc = p % ch;
            for (j, acc) in dcoef.iter_mut().enumerate() {
                for s in 0..ns {
                    acc[cc * ns + s] += part[j * ns + s];
                }
            }
        }
        let mut out = vec![Some(Tensor::new(&shape, dx).expect("shape"))];
        out.extend(
            dcoef
                .into_iter()
                .map(|d| Some(Tensor::new(&[ch, ns], d).expect("shape"))),
        );
        out
    }))
}

/// Decay logits for `S` states with timescales log-spaced over `[2, 1024]`.
pub fn decay_init(channels: usize, states: usize) -> Tensor {
    let (lo, hi) = (2.0f64.ln(), 1024.0f64.ln());
    let theta: Vec<f64> = (0..states)
        .map(|s| {
            let f = if states == 1 {
                0.5
            } else {
                s as f64 / (states - 1) as f64
            };
            let tau = (lo + f * (hi - lo)).exp();
            let a = (-1.0 / tau).exp();
            (a / (1.0 - a)).ln()
        })
        .collect();
    Tensor::from_fn(&[channels, states], |i| theta[i % states])
}

/// Learnable scan coefficients for one layer.
#[derive(Clone, Debug)]
pub struct Scan {
    pub theta: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub b2: ParamId,
    pub c2: ParamId,
}

impl Scan {
    pub fn new(init: &mut Init, leaf: &str, channels: usize, states: usize) -> Self {
        use rand::Rng;
        init.scoped(leaf, |init| {
            let theta = init.tensor("theta", decay_init(channels, states));
            let coef = |init: &mut Init, name: &str, lo: f64, hi: f64| {
                let rng = init.rng();
                let t = Tensor::from_fn(&[channels, states], |_| rng.gen_range(lo..hi));
                init.tensor(name, t)
            };
            let cb = 1.0 / states as f64;
            Self {
                theta,
                b: coef(init, "b", 0.5, 1.5),
                c: coef(init, "c", -cb, cb),
                b2: coef(init, "b_rev", 0.5, 1.5),
                c2: coef(init, "c_rev", -cb, cb),
            }
        })
    }

    pub fn forward(&self, bind: &Binding, x: &Var) -> Result<Var> {
        let p = |id| bind.param(id);
        scan(x, &p(self.theta), &p(self.b), &p(self.c), &p(self.b2), &p(self.c2))
    }
}

/// Reference long-range block: `x + dwconv3x3(scan(x))`.
#[derive(Clone, Debug)]
pub struct ScanBlock {
    pub scan: Scan,
    pub mix: Conv,
}

impl ScanBlock {
    pub fn new(init: &mut Init, leaf: &str, channels: usize, states: usize) -> Self {
        assert!(states >= 1, "scan state dimension must be at least 1");
        init.scoped(leaf, |init| Self {
            scan: Scan::new(init, "scan", channels, states),
            mix: Conv::new(init, "mix", ConvDef::same(channels, channels, 3).groups(channels)),
        })
    }

    /// The long-range branch without the residual.
    pub fn branch(&self, b: &Binding, x: &Var) -> Result<Var> {
        let s = self.scan.forward(b, x)?;
        self.mix.forward(b, &s)
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        Ok(x.add(&self.branch(b, x)?)?)
    }
}
