use super::kernels;
use super::{NnError, SeededRng, Tensor};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Self::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Self::Sigmoid => sigmoid(x),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Self::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Self::Sigmoid => y * (1.0 - y),
            Self::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| f64::from(l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / total) as f32).collect()
}

/// Fully connected layer `y = act(W x + b)` with `W` shaped `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    /// Uniform initialization scaled by fan-in, zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let gain = match activation {
            Activation::LeakyRelu => (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt(),
            _ => 1.0,
        };
        let bound = gain * (3.0 / in_dim as f32).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform_f32(-bound, bound))
            .collect();
        Self {
            weights: Tensor::from_vec(&[out_dim, in_dim], data).expect("consistent shape"),
            bias: Tensor::zeros(&[out_dim]),
            activation,
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self, NnError> {
        let (out_dim, _) = weights.dims2()?;
        if bias.shape() != [out_dim] {
            return Err(NnError::Shape(format!(
                "bias shape {:?} does not match {out_dim} outputs",
                bias.shape()
            )));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Forward pass over a `[batch, in]` input.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, DenseCache), NnError> {
        let (batch, in_dim) = input.dims2()?;
        if in_dim != self.in_dim() {
            return Err(NnError::Shape(format!(
                "layer expects {} inputs, got {in_dim}",
                self.in_dim()
            )));
        }
        let mut out = Tensor::zeros(&[batch, self.out_dim()]);
        kernels::linear_forward(
            input.data(),
            in_dim,
            self.weights.data(),
            self.bias.data(),
            out.data_mut(),
        );
        let act = self.activation;
        if act != Activation::Identity {
            out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        let cache = DenseCache {
            input: input.clone(),
            output: out.clone(),
        };
        Ok((out, cache))
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, input: &[f32], out: &mut [f32]) {
        kernels::linear_forward(input, self.in_dim(), self.weights.data(), self.bias.data(), out);
        let act = self.activation;
        if act != Activation::Identity {
            out.iter_mut().for_each(|v| *v = act.apply(*v));
        }
    }

    fn pre_activation_grad(&self, cache: &DenseCache, upstream: &Tensor) -> Result<Tensor, NnError> {
        if upstream.shape() != cache.output.shape() {
            return Err(NnError::Shape(format!(
                "upstream gradient {:?} does not match layer output {:?}",
                upstream.shape(),
                cache.output.shape()
            )));
        }
        let mut grad = upstream.clone();
        let act = self.activation;
        if act != Activation::Identity {
            for (g, &y) in grad.data_mut().iter_mut().zip(cache.output.data()) {
                *g *= act.derivative_from_output(y);
            }
        }
        Ok(grad)
    }

    /// Reverse pass. Returns parameter gradients (when requested) and the input gradient.
    pub fn backward(
        &self,
        cache: &DenseCache,
        upstream: &Tensor,
        want_params: bool,
    ) -> Result<(Option<DenseGrads>, Tensor), NnError> {
        if cache.input.shape().get(1) != Some(&self.in_dim()) {
            return Err(NnError::MissingCache);
        }
        let dpre = self.pre_activation_grad(cache, upstream)?;
        let batch = cache.input.shape()[0];
        let mut dx = Tensor::zeros(&[batch, self.in_dim()]);
        kernels::linear_backward_input(dpre.data(), self.out_dim(), self.weights.data(), dx.data_mut());
        let grads = if want_params {
            let mut gw = Tensor::zeros(self.weights.shape());
            let mut gb = Tensor::zeros(self.bias.shape());
            kernels::linear_backward_params(
                dpre.data(),
                cache.input.data(),
                self.in_dim(),
                gw.data_mut(),
                gb.data_mut(),
            );
            Some(DenseGrads {
                weights: gw,
                bias: gb,
            })
        } else {
            None
        };
        Ok((grads, dx))
    }
}

/// Stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl Mlp {
    /// Builds `dims[0] → dims[1] → … → dims[n]`, LeakyReLU between layers and
    /// `last` on the output layer.
    pub fn init(dims: &[usize], last: Activation, rng: &mut SeededRng) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { Activation::LeakyRelu };
                DenseLayer::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, MlpCache), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, MlpCache { layers: caches }))
    }

    /// Single-sample inference without caches.
    pub fn infer(&self, input: &[f32]) -> Vec<f32> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; layer.out_dim()];
            layer.infer(&x, &mut y);
            x = y;
        }
        x
    }

    /// Forward pass over `rows` stacked inputs without keeping intermediates.
    pub fn infer_batch(&self, input: &[f32], rows: usize) -> Vec<f32> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; rows * layer.out_dim()];
            layer.infer(&x, &mut y);
            x = y;
        }
        x
    }

    /// Reverse pass through all layers.
    ///
    /// With `want_params = false` only the input gradient is produced, which
    /// is how gradients flow through a frozen network.
    pub fn backward(
        &self,
        cache: &MlpCache,
        upstream: &Tensor,
        want_params: bool,
    ) -> Result<(Vec<DenseGrads>, Tensor), NnError> {
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (pg, dx) = layer.backward(c, &g, want_params)?;
            if let Some(pg) = pg {
                grads.push(pg);
            }
            g = dx;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }
}

/// Flattens per-layer gradients in the same order as [`Mlp::params`].
pub fn flatten_grads(grads: Vec<DenseGrads>) -> Vec<Tensor> {
    grads.into_iter().flat_map(|g| [g.weights, g.bias]).collect()
}
