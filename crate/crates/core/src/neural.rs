//! Dense multilayer perceptrons with hand-written reverse-mode gradients and
//! an Adam optimizer over flat parameter blocks.
//!
//! Batches are row-major: one sample per row. Weight matrices are stored
//! `out × in`, so a layer computes `act(x · Wᵀ + b)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Standard deviation of the zero-mean normal used for weight init.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, pre: &mut Array2<f64>) {
        if self == Activation::Relu {
            pre.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Multiply `grad` in place by the derivative, given the layer output.
    fn backprop(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        if self == Activation::Relu {
            ndarray::Zip::from(grad).and(output).for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights.t());
        out += &self.bias;
        self.activation.apply(&mut out);
        out
    }
}

/// Ordered stack of dense layers whose dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Everything `forward` computed, kept for the backward pass.
/// `outputs[0]` is the input batch and `outputs[l + 1]` is the output of
/// layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub outputs: Vec<Array2<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("trace holds at least the input")
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the input batch.
    pub input: Array2<f64>,
}

impl Gradients {
    /// Parameter gradients flattened in the same order as [`Mlp::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| {
                [
                    g.weights.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: {} biases for {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Numeric(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| DenseLayer {
                weights: l.weights.as_standard_layout().into_owned(),
                bias: l.bias.as_standard_layout().into_owned(),
                activation: l.activation,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Weights drawn from N(0, 0.01²) in layer order (row-major within a
    /// layer), biases zero. `dims` lists every width including the input,
    /// and `activations` has one entry per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "layer dims need an input and at least one output".into(),
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer width {i} is zero")));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(io, &activation)| DenseLayer {
                weights: Array2::from_shape_simple_fn((io[1], io[0]), || rng.normal(0.0, INIT_STD)),
                bias: Array1::zeros(io[1]),
                activation,
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters as flat slices: weights then bias for each layer in order.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn block_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer {i} weights"), format!("layer {i} bias")])
            .collect()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardTrace> {
        self.check_input(&x)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward(outputs.last().unwrap().view());
            outputs.push(next);
        }
        Ok(ForwardTrace { outputs })
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            current = layer.forward(current.view());
        }
        Ok(current)
    }

    /// Reverse-mode gradients of a scalar loss given `dL/d(output)`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<Gradients> {
        if trace.outputs.len() != self.layers.len() + 1 {
            return Err(Error::Shape(format!(
                "trace has {} activations for a {}-layer network",
                trace.outputs.len(),
                self.layers.len()
            )));
        }
        for (l, out) in trace.outputs.iter().enumerate() {
            let want = self.dims()[l];
            if out.ncols() != want || out.nrows() != trace.outputs[0].nrows() {
                return Err(Error::Shape(format!(
                    "stale activation {l}: {:?}",
                    out.dim()
                )));
            }
        }
        if output_grad.dim() != trace.output().dim() {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, output is {:?}",
                output_grad.dim(),
                trace.output().dim()
            )));
        }

        let mut delta = output_grad.to_owned();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&trace.outputs[l + 1], &mut delta);
            let input = &trace.outputs[l];
            grads.push(LayerGrad {
                weights: delta.t().dot(input).as_standard_layout().into_owned(),
                bias: delta.sum_axis(Axis(0)),
            });
            delta = delta.dot(&layer.weights);
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: delta,
        })
    }
}

/// Mean over samples of the squared Euclidean reconstruction error.
pub fn mse_loss(recon: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Result<f64> {
    if recon.dim() != x.dim() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs input {:?}",
            recon.dim(),
            x.dim()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let total: f64 = ndarray::Zip::from(&recon)
        .and(&x)
        .fold(0.0, |acc, &r, &v| acc + (r - v) * (r - v));
    Ok(total / x.nrows() as f64)
}

/// Gradient of [`mse_loss`] with respect to the reconstruction.
pub fn mse_grad(recon: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let scale = 2.0 / x.nrows() as f64;
    (&recon - &x) * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction. Keeps one pair of moment buffers per
/// parameter block.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, block_sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = block_sizes.into_iter().collect();
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn for_network(config: AdamConfig, net: &Mlp) -> Self {
        Self::new(config, net.blocks().iter().map(|b| b.len()))
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every block. `names` labels blocks in error messages.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} blocks, got {} parameter and {} gradient blocks",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (b, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[b].len() || g.len() != self.m[b].len() {
                return Err(Error::Shape(format!(
                    "block {b}: {} parameters, {} gradients, {} moments",
                    p.len(),
                    g.len(),
                    self.m[b].len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                let name = names
                    .get(b)
                    .cloned()
                    .unwrap_or_else(|| format!("block {b}"));
                return Err(Error::Numeric(format!("non-finite gradient in {name}")));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Convenience wrapper that updates a whole network.
    pub fn step_network(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let names = net.block_names();
        let g = grads.blocks();
        let mut p = net.blocks_mut();
        self.step(&mut p, &g, &names)
    }
}
