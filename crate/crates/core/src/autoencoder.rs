//! Stacked autoencoder: an encoder MLP into the latent space and a decoder
//! that mirrors it back to the input width.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{mse_grad, mse_loss, Activation, Adam, AdamConfig, Mlp};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    /// Encoder widths after the input; the last one is the latent size.
    pub encoder_dims: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub hidden_activation: Activation,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            encoder_dims: vec![500, 500, 2000, 10],
            batch_size: 256,
            epochs: 200,
            adam: AdamConfig::default(),
            hidden_activation: Activation::Relu,
        }
    }
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        if self.encoder_dims.is_empty() || self.encoder_dims.contains(&0) {
            return Err(Error::Config(format!(
                "invalid encoder widths {:?}",
                self.encoder_dims
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("pretraining needs at least one epoch".into()));
        }
        self.adam.validate()
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_dims.last().unwrap()
    }

    /// Full width chain, input → latent → input.
    pub fn chain(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.encoder_dims);
        dims.extend(self.encoder_dims.iter().rev().skip(1));
        dims.push(self.input_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Hidden layers use `hidden`; the latent layer and the reconstruction
/// output are linear.
fn layer_activations(n_layers: usize, hidden: Activation) -> Vec<Activation> {
    let mut acts = vec![hidden; n_layers];
    acts[n_layers - 1] = Activation::Identity;
    acts
}

pub fn build(spec: &AutoencoderSpec, rng: &mut Rng) -> Result<Autoencoder> {
    spec.validate()?;
    let chain = spec.chain();
    let split = spec.encoder_dims.len();
    let encoder_dims = &chain[..=split];
    let decoder_dims = &chain[split..];
    let encoder = Mlp::init(
        encoder_dims,
        &layer_activations(encoder_dims.len() - 1, spec.hidden_activation),
        rng,
    )?;
    let decoder = Mlp::init(
        decoder_dims,
        &layer_activations(decoder_dims.len() - 1, spec.hidden_activation),
        rng,
    )?;
    Autoencoder::new(encoder, decoder)
}

impl Autoencoder {
    pub fn new(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim()
            || decoder.output_dim() != encoder.input_dim()
        {
            return Err(Error::Shape(format!(
                "encoder {:?} and decoder {:?} do not mirror",
                encoder.dims(),
                decoder.dims()
            )));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Layer widths from input through latent back to input.
    pub fn chain(&self) -> Vec<usize> {
        let mut dims = self.encoder.dims();
        dims.extend(&self.decoder.dims()[1..]);
        dims
    }

    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        encode(&self.encoder, x)
    }

    pub fn reconstruct(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.decoder.predict(self.encoder.predict(x)?.view())
    }

    /// Reconstruction loss on `x` and its gradients for both halves.
    fn loss_and_step(
        &mut self,
        x: ArrayView2<'_, f64>,
        enc_opt: &mut Adam,
        dec_opt: &mut Adam,
    ) -> Result<f64> {
        let enc_trace = self.encoder.forward(x)?;
        let dec_trace = self.decoder.forward(enc_trace.output().view())?;
        let recon = dec_trace.output();
        let loss = mse_loss(recon.view(), x)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("reconstruction loss became {loss}")));
        }
        let dec_grads = self
            .decoder
            .backward(&dec_trace, mse_grad(recon.view(), x).view())?;
        let enc_grads = self.encoder.backward(&enc_trace, dec_grads.input.view())?;
        dec_opt.step_network(&mut self.decoder, &dec_grads)?;
        enc_opt.step_network(&mut self.encoder, &enc_grads)?;
        Ok(loss)
    }
}

/// Latent codes for every row of `x`.
pub fn encode(encoder: &Mlp, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    encoder.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Sample-weighted mean minibatch loss of each epoch.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub wall_time_secs: f64,
    pub seed: u64,
}

impl PretrainReport {
    pub fn write_curve(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss\n");
        for (epoch, loss) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{loss}\n", epoch + 1));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Minimize the reconstruction loss with Adam over shuffled minibatches,
/// reshuffling every epoch. The trailing partial batch is kept.
///
/// If the loss goes non-finite, `ae` is restored to its state at the start
/// of the failing epoch and a numeric error is returned.
pub fn pretrain(
    ae: &mut Autoencoder,
    features: ArrayView2<'_, f64>,
    spec: &AutoencoderSpec,
    rng: &mut Rng,
) -> Result<PretrainReport> {
    spec.validate()?;
    if features.ncols() != ae.input_dim() || spec.input_dim != ae.input_dim() {
        return Err(Error::Shape(format!(
            "features have {} columns; spec says {} and the network expects {}",
            features.ncols(),
            spec.input_dim,
            ae.input_dim()
        )));
    }
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Data("no training samples".into()));
    }
    let start = Instant::now();
    let mut enc_opt = Adam::for_network(spec.adam, &ae.encoder);
    let mut dec_opt = Adam::for_network(spec.adam, &ae.decoder);
    let mut losses = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        let snapshot = ae.clone();
        let order = rng.permutation(n);
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let x = features.select(Axis(0), batch);
            match ae.loss_and_step(x.view(), &mut enc_opt, &mut dec_opt) {
                Ok(loss) => total += loss * batch.len() as f64,
                Err(Error::Numeric(msg)) => {
                    *ae = snapshot;
                    return Err(Error::Numeric(format!("epoch {}: {msg}", epoch + 1)));
                }
                Err(e) => return Err(e),
            }
        }
        losses.push(total / n as f64);
    }

    Ok(PretrainReport {
        final_loss: *losses.last().unwrap(),
        losses,
        wall_time_secs: start.elapsed().as_secs_f64(),
        seed: rng.seed(),
    })
}
