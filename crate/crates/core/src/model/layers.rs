//! Parameter construction and the small building blocks shared by the
//! encoder, decoder and arbitration head.

use fcd_autograd::{Binding, Conv2dSpec, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Registers parameters under a dotted name prefix with seeded initial values.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: String::new(),
        }
    }

    fn name(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_owned()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    /// Runs `f` with `scope` appended to the name prefix.
    pub fn scoped<R>(&mut self, scope: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = self.name(scope);
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn tensor(&mut self, leaf: &str, value: Tensor) -> ParamId {
        let name = self.name(leaf);
        self.store.add(name, value)
    }

    pub fn uniform(&mut self, leaf: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.tensor(leaf, value)
    }

    pub fn zeros(&mut self, leaf: &str, shape: &[usize]) -> ParamId {
        self.tensor(leaf, Tensor::zeros(shape))
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Square-kernel convolution with optional bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

/// Shape and initialisation of a [`Conv`].
#[derive(Clone, Copy, Debug)]
pub struct ConvDef {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
    pub bias: bool,
    /// Weight variance is `gain / fan_in`.
    pub gain: f64,
}

impl ConvDef {
    /// Stride-1, size-preserving, biased convolution.
    pub fn same(cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            cin,
            cout,
            kernel,
            spec: Conv2dSpec::same(kernel, 1),
            bias: true,
            gain: 1.0,
        }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self::same(cin, cout, 1)
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.spec.groups = g;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.spec = Conv2dSpec::same(self.kernel, d).with_groups(self.spec.groups);
        self
    }

    pub fn strided(mut self, stride: usize) -> Self {
        self.spec = Conv2dSpec {
            stride,
            padding: 0,
            ..self.spec
        };
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }
}

impl Conv {
    /// Weights uniform with the requested variance; bias zero.
    pub fn new(init: &mut Init, leaf: &str, def: ConvDef) -> Self {
        init.scoped(leaf, |init| {
            let ConvDef {
                cin,
                cout,
                kernel,
                spec,
                bias,
                gain,
            } = def;
            let fan_in = (cin / spec.groups) * kernel * kernel;
            let bound = (3.0 * gain / fan_in as f64).sqrt();
            let weight = init.uniform("weight", &[cout, cin / spec.groups, kernel, kernel], bound);
            let bias = bias.then(|| init.zeros("bias", &[cout]));
            Self { weight, bias, spec }
        })
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        let w = b.param(self.weight);
        let bias = self.bias.map(|id| b.param(id));
        Ok(x.conv2d(&w, bias.as_ref(), self.spec)?)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.value(self.weight).dim(0)
    }
}

/// Squeeze-and-excitation: global average pool, bottleneck, sigmoid.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub reduce: Conv,
    pub expand: Conv,
}

impl SqueezeExcite {
    pub fn new(init: &mut Init, leaf: &str, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        init.scoped(leaf, |init| Self {
            reduce: Conv::new(init, "reduce", ConvDef::pointwise(channels, hidden).gain(2.0)),
            expand: Conv::new(init, "expand", ConvDef::pointwise(hidden, channels)),
        })
    }

    /// Channel gate of shape `(N, C, 1, 1)`.
    pub fn gate(&self, b: &Binding, x: &Var) -> Result<Var> {
        let s = x.global_avg_pool()?;
        let h = self.reduce.forward(b, &s)?.relu();
        Ok(self.expand.forward(b, &h)?.sigmoid())
    }

    pub fn forward(&self, b: &Binding, x: &Var) -> Result<Var> {
        Ok(x.mul(&self.gate(b, x)?)?)
    }
}

/// `(N, C, H, W)` shape of a rank-4 variable.
pub fn dims(x: &Var) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}
