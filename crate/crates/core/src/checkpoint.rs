//! `DELC` model checkpoints.
//!
//! Layout (little-endian): magic `DELC`, `u16` version = 1, `u64` length of
//! a UTF-8 JSON preamble, the preamble, then one block per parameter
//! tensor. Each block is a `u64` element count followed by that many `f64`
//! values. Blocks run encoder weight, encoder bias, ... for every encoder
//! layer, then the decoder layers the same way (if present), then the
//! centroid matrix (if present).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::neural::{Activation, DenseLayer, Mlp};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DELC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Widths of every stored layer chain: encoder, then decoder without
    /// repeating the latent width.
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub encoder_layers: usize,
    pub seed: u64,
    pub phase: Phase,
    /// Pretraining epochs, or minibatch iterations for the clustering phase.
    pub epoch: usize,
    pub centroids: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub encoder: Mlp,
    pub decoder: Option<Mlp>,
    pub centroids: Option<Array2<f64>>,
}

impl Checkpoint {
    pub fn pretrained(ae: &Autoencoder, seed: u64, epoch: usize) -> Self {
        Self::build(
            ae.encoder.clone(),
            Some(ae.decoder.clone()),
            None,
            seed,
            Phase::Pretrain,
            epoch,
        )
    }

    pub fn clustered(encoder: &Mlp, centroids: &Array2<f64>, seed: u64, iterations: usize) -> Self {
        Self::build(
            encoder.clone(),
            None,
            Some(centroids.clone()),
            seed,
            Phase::Cluster,
            iterations,
        )
    }

    fn build(
        encoder: Mlp,
        decoder: Option<Mlp>,
        centroids: Option<Array2<f64>>,
        seed: u64,
        phase: Phase,
        epoch: usize,
    ) -> Self {
        let mut layer_dims = encoder.dims();
        let mut activations = encoder.activations();
        if let Some(dec) = &decoder {
            layer_dims.extend(&dec.dims()[1..]);
            activations.extend(dec.activations());
        }
        let meta = CheckpointMeta {
            layer_dims,
            activations,
            encoder_layers: encoder.layers().len(),
            seed,
            phase,
            epoch,
            centroids: centroids.as_ref().map(|c| [c.nrows(), c.ncols()]),
        };
        Self {
            meta,
            encoder,
            decoder,
            centroids,
        }
    }

    pub fn autoencoder(&self) -> Result<Autoencoder> {
        match &self.decoder {
            Some(dec) => Autoencoder::new(self.encoder.clone(), dec.clone()),
            None => Err(Error::Data("checkpoint holds no decoder".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let preamble = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(preamble.len() as u64).to_le_bytes());
        out.extend_from_slice(&preamble);
        let mut push_block = |data: &[f64]| {
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for block in self.encoder.blocks() {
            push_block(block);
        }
        if let Some(dec) = &self.decoder {
            for block in dec.blocks() {
                push_block(block);
            }
        }
        if let Some(c) = &self.centroids {
            push_block(c.as_standard_layout().as_slice().expect("standard layout"));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::at_byte(0, "file shorter than header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::at_byte(
                0,
                format!("bad magic {magic:?}, expected \"DELC\""),
            ));
        }
        let version = read_u16(&mut cur)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::at_byte(4, format!("unsupported version {version}")));
        }
        let len = read_u64(&mut cur)? as usize;
        let start = cur.position() as usize;
        let preamble = bytes
            .get(start..start.saturating_add(len))
            .ok_or_else(|| Error::at_byte(start as u64, "preamble truncated"))?;
        let meta: CheckpointMeta = serde_json::from_slice(preamble)
            .map_err(|e| Error::at_byte(start as u64, format!("bad preamble: {e}")))?;
        cur.set_position((start + len) as u64);

        let n_layers = meta.layer_dims.len().saturating_sub(1);
        if meta.activations.len() != n_layers
            || meta.encoder_layers == 0
            || meta.encoder_layers > n_layers
        {
            return Err(Error::at_byte(
                start as u64,
                "preamble layer description is inconsistent",
            ));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (inp, out) = (meta.layer_dims[l], meta.layer_dims[l + 1]);
            let w = read_block(&mut cur, out * inp)?;
            let b = read_block(&mut cur, out)?;
            layers.push(DenseLayer {
                weights: Array2::from_shape_vec((out, inp), w).expect("length checked"),
                bias: Array1::from(b),
                activation: meta.activations[l],
            });
        }
        let centroids = match meta.centroids {
            Some([k, m]) => {
                let c = read_block(&mut cur, k * m)?;
                Some(Array2::from_shape_vec((k, m), c).expect("length checked"))
            }
            None => None,
        };
        if (cur.position() as usize) != bytes.len() {
            return Err(Error::at_byte(
                cur.position(),
                "trailing bytes after last block",
            ));
        }
        let decoder_layers = layers.split_off(meta.encoder_layers);
        let encoder = Mlp::new(layers)?;
        let decoder = if decoder_layers.is_empty() {
            None
        } else {
            Some(Mlp::new(decoder_layers)?)
        };
        Ok(Self {
            meta,
            encoder,
            decoder,
            centroids,
        })
    }
}

fn read_u16(cur: &mut std::io::Cursor<&[u8]>) -> Result<u16> {
    let pos = cur.position();
    let mut b = [0u8; 2];
    cur.read_exact(&mut b)
        .map_err(|_| Error::at_byte(pos, "unexpected end of file"))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u64(cur: &mut std::io::Cursor<&[u8]>) -> Result<u64> {
    let pos = cur.position();
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| Error::at_byte(pos, "unexpected end of file"))?;
    Ok(u64::from_le_bytes(b))
}

fn read_block(cur: &mut std::io::Cursor<&[u8]>, expected: usize) -> Result<Vec<f64>> {
    let pos = cur.position();
    let len = read_u64(cur)? as usize;
    if len != expected {
        return Err(Error::at_byte(
            pos,
            format!("block holds {len} values, expected {expected}"),
        ));
    }
    let mut out = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        cur.read_exact(&mut b)
            .map_err(|_| Error::at_byte(cur.position(), "block truncated"))?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{build, AutoencoderSpec};
    use crate::rng::Rng;

    fn small_ae() -> Autoencoder {
        let spec = AutoencoderSpec {
            input_dim: 6,
            encoder_dims: vec![5, 3],
            ..AutoencoderSpec::default()
        };
        build(&spec, &mut Rng::new(3)).unwrap()
    }

    #[test]
    fn pretrain_checkpoint_roundtrip() {
        let ae = small_ae();
        let ck = Checkpoint::pretrained(&ae, 42, 7);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.autoencoder().unwrap(), ae);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta.layer_dims, vec![6, 5, 3, 5, 6]);
    }

    #[test]
    fn cluster_checkpoint_roundtrip() {
        let ae = small_ae();
        let mu = ndarray::array![[0.5, -1.0, 2.0], [1e-300, f64::MAX, -0.0]];
        let ck = Checkpoint::clustered(&ae.encoder, &mu, 1, 420);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(
            back.centroids.as_ref().unwrap().map(|v| v.to_bits()),
            mu.map(|v| v.to_bits())
        );
        assert!(back.decoder.is_none());
        assert!(back.autoencoder().is_err());
        assert_eq!(back.meta.phase, Phase::Cluster);
    }

    #[test]
    fn header_layout() {
        let bytes = Checkpoint::pretrained(&small_ae(), 0, 0).to_bytes();
        assert_eq!(&bytes[..4], b"DELC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[14..14 + len]).unwrap();
        assert_eq!(meta["phase"], "pretrain");
        assert_eq!(meta["activations"][0], "relu");
    }

    #[test]
    fn corruption_is_reported_with_offset() {
        let mut bytes = Checkpoint::pretrained(&small_ae(), 0, 0).to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
        let mut bytes = Checkpoint::pretrained(&small_ae(), 0, 0).to_bytes();
        bytes[0] = b'X';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { ref location, .. } if location == "byte 0"));
    }
}
