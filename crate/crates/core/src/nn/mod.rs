//! Dense feedforward networks with exact backpropagation to both parameters
//! and inputs.
//!
//! Inputs are `n x in` matrices (one sample per row). `forward` returns a
//! [`ForwardCache`] that `backward` consumes; the cache remembers a
//! fingerprint of the parameters it was produced with, so a cache taken
//! before an optimizer step is rejected instead of silently producing wrong
//! gradients.

mod gradcheck;
mod optim;
mod time;

pub use gradcheck::{finite_diff_check, GradCheckReport, KINK_TOLERANCE, NOISE_MULTIPLE};
pub use optim::{sgd_step, AdamState};
pub use time::{time_embed, time_embed_matrix, TIME_EMBED_BASE};

use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            2 => Activation::Relu,
            3 => Activation::Sigmoid,
            other => return Err(MgsError::format(format!("unknown activation tag {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "identity" | "linear" => Activation::Identity,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            other => return Err(MgsError::config(format!("unknown activation `{other}`"))),
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    /// ReLU's subgradient at 0 is 0.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure!(
            bias.len() == weights.rows(),
            Contract,
            "bias length {} does not match {} output units",
            bias.len(),
            weights.rows()
        );
        Ok(DenseLayer { weights, bias, activation })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng::uniform(rng, -limit, limit)).collect();
        DenseLayer {
            weights: Matrix::from_vec(outputs, inputs, data).expect("consistent"),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardNet {
    layers: Vec<DenseLayer>,
}

/// Intermediate values of one forward pass.
#[derive(Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    /// `inputs[l]` is the input of layer `l`; the final entry is the output.
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(net: &FeedforwardNet) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        ensure!(self.layers.len() == other.layers.len(), Contract, "gradient layer count mismatch");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(1.0, &b.weights)?;
            ensure!(a.bias.len() == b.bias.len(), Contract, "gradient bias length mismatch");
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.scale(s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }
}

impl FeedforwardNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        ensure!(!layers.is_empty(), Contract, "a network needs at least one layer");
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].outputs() == pair[1].inputs(),
                Contract,
                "layer {} outputs {} but layer {} expects {}",
                i,
                pair[0].outputs(),
                i + 1,
                pair[1].inputs()
            );
        }
        Ok(FeedforwardNet { layers })
    }

    /// Glorot-initialized MLP with `dims = [in, h1, ..., out]`; hidden layers
    /// use `hidden`, the last layer uses `output`.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        ensure!(dims.len() >= 2, Contract, "mlp needs at least input and output dims");
        ensure!(dims.iter().all(|&d| d > 0), Contract, "mlp dims must be positive: {:?}", dims);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::glorot(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        FeedforwardNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        ensure!(
            params.len() == self.num_params(),
            Contract,
            "expected {} parameters, got {}",
            self.num_params(),
            params.len()
        );
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.rows() * l.weights.cols();
            l.weights.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the parameter bit patterns and layer shapes
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for l in &self.layers {
            feed(l.inputs() as u64);
            feed(l.outputs() as u64);
            feed(l.activation.tag() as u64);
            l.weights.data().iter().for_each(|v| feed(v.to_bits()));
            l.bias.iter().for_each(|v| feed(v.to_bits()));
        }
        h
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        ensure!(
            x.cols() == self.input_dim(),
            Contract,
            "network expects {} input columns, got {}",
            self.input_dim(),
            x.cols()
        );
        Ok(())
    }

    fn layer_forward(layer: &DenseLayer, x: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut pre = x.matmul_nt(&layer.weights)?;
        for r in 0..pre.rows() {
            pre.row_mut(r).iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
        }
        let post = if layer.activation == Activation::Identity {
            pre.clone()
        } else {
            pre.map(|v| layer.activation.apply(v))
        };
        Ok((pre, post))
    }

    /// Output only, no cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            h = Self::layer_forward(l, &h)?.1;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for l in &self.layers {
            let (p, post) = Self::layer_forward(l, inputs.last().expect("non-empty"))?;
            pre.push(p);
            inputs.push(post);
        }
        let y = inputs.last().expect("non-empty").clone();
        Ok((y, ForwardCache { fingerprint: self.fingerprint(), inputs, pre }))
    }

    /// Gradients of a scalar loss with respect to the parameters and the
    /// input, given `dL/dY`.
    pub fn backward(&self, cache: ForwardCache, dy: &Matrix) -> Result<(ParamGrads, Matrix)> {
        ensure!(
            cache.pre.len() == self.layers.len() && cache.fingerprint == self.fingerprint(),
            Contract,
            "forward cache does not belong to this network state"
        );
        let out = cache.inputs.last().expect("non-empty");
        ensure!(
            dy.shape() == out.shape(),
            Contract,
            "dL/dY shape {:?} does not match output shape {:?}",
            dy.shape(),
            out.shape()
        );
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dy.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let post = &cache.inputs[l + 1];
            let pre = &cache.pre[l];
            if layer.activation != Activation::Identity {
                for ((d, &x), &y) in delta.data_mut().iter_mut().zip(pre.data()).zip(post.data()) {
                    *d *= layer.activation.derivative(x, y);
                }
            }
            let dw = delta.matmul_tn(&cache.inputs[l])?;
            let db = delta.col_sums();
            let dx = delta.matmul(&layer.weights)?;
            grads.push(LayerGrad { weights: dw, bias: db });
            delta = dx;
        }
        grads.reverse();
        Ok((ParamGrads { layers: grads }, delta))
    }
}
