//! Encoder/decoder pair and exact Jacobian-vector products.
//!
//! `J(u) = J_d(φ_e(u)) J_e(u)` is never formed; products are chained through
//! the latent space.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Checkpoint, DenseNet, Grads, NetVars, Tape, TapeTrace, Var};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub full_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    /// Skip the networks entirely and use `z = u`.
    pub identity: bool,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            full_dim: 200,
            hidden: vec![100],
            latent_dim: 5,
            activation: Activation::Relu,
            identity: false,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identity {
            if self.full_dim == 0 {
                return Err(Error::InvalidArgument("identity encoder needs a positive dimension".into()));
            }
            return Ok(());
        }
        if self.latent_dim == 0 || self.latent_dim >= self.full_dim || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "autoencoder needs 0 < latent_dim < full_dim and positive hidden widths, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Autoencoder<T> {
    Identity(usize),
    Dense { encoder: DenseNet<T>, decoder: DenseNet<T> },
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &AutoencoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if cfg.identity {
            return Ok(Autoencoder::Identity(cfg.full_dim));
        }
        let mut enc = vec![cfg.full_dim];
        enc.extend_from_slice(&cfg.hidden);
        enc.push(cfg.latent_dim);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        let encoder = DenseNet::glorot(enc, cfg.activation, rng)?;
        let decoder = DenseNet::glorot(dec, cfg.activation, rng)?;
        Self::from_nets(encoder, decoder)
    }

    pub fn identity(dim: usize) -> Self {
        Autoencoder::Identity(dim)
    }

    pub fn from_nets(encoder: DenseNet<T>, decoder: DenseNet<T>) -> Result<Self> {
        check_dim("decoder output", encoder.input_dim(), decoder.output_dim())?;
        check_dim("decoder input", encoder.output_dim(), decoder.input_dim())?;
        Ok(Autoencoder::Dense { encoder, decoder })
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Autoencoder::Identity(_))
    }

    pub fn full_dim(&self) -> usize {
        match self {
            Autoencoder::Identity(n) => *n,
            Autoencoder::Dense { encoder, .. } => encoder.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Autoencoder::Identity(n) => *n,
            Autoencoder::Dense { encoder, .. } => encoder.output_dim(),
        }
    }

    pub fn encode(&self, u: &[T]) -> Result<Vec<T>> {
        match self {
            Autoencoder::Identity(n) => {
                check_dim("state", *n, u.len())?;
                Ok(u.to_vec())
            }
            Autoencoder::Dense { encoder, .. } => encoder.forward(u),
        }
    }

    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        match self {
            Autoencoder::Identity(n) => {
                check_dim("latent state", *n, z.len())?;
                Ok(z.to_vec())
            }
            Autoencoder::Dense { decoder, .. } => decoder.forward(z),
        }
    }

    pub fn reconstruct(&self, u: &[T]) -> Result<Vec<T>> {
        self.decode(&self.encode(u)?)
    }

    /// Encodes every row of `states` (time × N_u) into time × d.
    pub fn encode_rows(&self, states: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("state columns", self.full_dim(), states.ncols())?;
        match self {
            Autoencoder::Identity(_) => Ok(states.to_owned()),
            Autoencoder::Dense { encoder, .. } => Ok(encoder.forward_batch(states.t())?.reversed_axes()),
        }
    }

    /// Decodes every row of `latent` (time × d) into time × N_u.
    pub fn decode_rows(&self, latent: ArrayView2<T>) -> Result<Array2<T>> {
        check_dim("latent columns", self.latent_dim(), latent.ncols())?;
        match self {
            Autoencoder::Identity(_) => Ok(latent.to_owned()),
            Autoencoder::Dense { decoder, .. } => Ok(decoder.forward_batch(latent.t())?.reversed_axes()),
        }
    }

    /// `J_e(u) v`.
    pub fn encoder_jvp(&self, u: &[T], v: &[T]) -> Result<Vec<T>> {
        match self {
            Autoencoder::Identity(n) => {
                check_dim("state", *n, u.len())?;
                check_dim("tangent", *n, v.len())?;
                Ok(v.to_vec())
            }
            Autoencoder::Dense { encoder, .. } => encoder.jvp(u, v),
        }
    }

    /// `J_d(z) w`.
    pub fn decoder_jvp(&self, z: &[T], w: &[T]) -> Result<Vec<T>> {
        match self {
            Autoencoder::Identity(n) => {
                check_dim("latent state", *n, z.len())?;
                check_dim("tangent", *n, w.len())?;
                Ok(w.to_vec())
            }
            Autoencoder::Dense { decoder, .. } => decoder.jvp(z, w),
        }
    }

    /// `J(u) v = J_d(φ_e(u)) (J_e(u) v)`.
    pub fn ae_jvp(&self, u: &[T], v: &[T]) -> Result<Vec<T>> {
        let z = self.encode(u)?;
        let w = self.encoder_jvp(u, v)?;
        self.decoder_jvp(&z, &w)
    }

    /// Full `N_u × N_u` Jacobian of `reconstruct`, column by column.
    pub fn jacobian(&self, u: &[T]) -> Result<Array2<T>> {
        let n = self.full_dim();
        let mut jac = Array2::zeros((n, n));
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.ae_jvp(u, &e)?;
            jac.column_mut(j).assign(&ndarray::Array1::from(col));
            e[j] = T::zero();
        }
        Ok(jac)
    }

    pub fn n_params(&self) -> usize {
        match self {
            Autoencoder::Identity(_) => 0,
            Autoencoder::Dense { encoder, decoder } => encoder.params().len() + decoder.params().len(),
        }
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn flat_params(&self) -> Vec<T> {
        match self {
            Autoencoder::Identity(_) => vec![],
            Autoencoder::Dense { encoder, decoder } => {
                let mut p = encoder.params().to_vec();
                p.extend_from_slice(decoder.params());
                p
            }
        }
    }

    pub fn set_flat_params(&mut self, p: &[T]) -> Result<()> {
        check_dim("autoencoder parameters", self.n_params(), p.len())?;
        if let Autoencoder::Dense { encoder, decoder } = self {
            let ne = encoder.params().len();
            encoder.set_params(&p[..ne])?;
            decoder.set_params(&p[ne..])?;
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape<T>) -> AeVars {
        match self {
            Autoencoder::Identity(n) => AeVars::Identity(*n),
            Autoencoder::Dense { encoder, decoder } => AeVars::Dense {
                encoder: encoder.on_tape(tape),
                decoder: decoder.on_tape(tape),
            },
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = match self {
            Autoencoder::Identity(n) => AeManifest::Identity { dim: *n },
            Autoencoder::Dense { encoder, decoder } => {
                Checkpoint::from_net("encoder", encoder, 0, 0, 0).save(&dir.join("encoder.ckpt"))?;
                Checkpoint::from_net("decoder", decoder, 0, 0, 0).save(&dir.join("decoder.ckpt"))?;
                AeManifest::Dense {
                    encoder: "encoder.ckpt".into(),
                    decoder: "decoder.ckpt".into(),
                }
            }
        };
        let path = dir.join("autoencoder.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("autoencoder.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: AeManifest = serde_json::from_str(&text).map_err(|e| Error::parse("autoencoder manifest", e.to_string()))?;
        match m {
            AeManifest::Identity { dim } => Ok(Autoencoder::Identity(dim)),
            AeManifest::Dense { encoder, decoder } => Self::from_nets(
                Checkpoint::load(&dir.join(encoder))?.to_net()?,
                Checkpoint::load(&dir.join(decoder))?.to_net()?,
            ),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum AeManifest {
    Identity { dim: usize },
    Dense { encoder: String, decoder: String },
}

/// Tape handles for an [`Autoencoder`].
#[derive(Clone, Debug)]
pub enum AeVars {
    Identity(usize),
    Dense { encoder: NetVars, decoder: NetVars },
}

/// A recorded encoder or decoder pass; `None` for the identity map.
#[derive(Clone, Debug)]
pub struct AeTrace {
    trace: Option<TapeTrace>,
    pub output: Var,
}

impl AeVars {
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, u: Var) -> AeTrace {
        match self {
            AeVars::Identity(_) => AeTrace { trace: None, output: u },
            AeVars::Dense { encoder, .. } => {
                let tr = encoder.forward(tape, u);
                AeTrace {
                    output: tr.output,
                    trace: Some(tr),
                }
            }
        }
    }

    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, z: Var) -> AeTrace {
        match self {
            AeVars::Identity(_) => AeTrace { trace: None, output: z },
            AeVars::Dense { decoder, .. } => {
                let tr = decoder.forward(tape, z);
                AeTrace {
                    output: tr.output,
                    trace: Some(tr),
                }
            }
        }
    }

    /// `J_e v` along an encoder trace.
    pub fn encoder_jvp<T: Scalar>(&self, tape: &mut Tape<T>, tr: &AeTrace, v: Var) -> Var {
        match (self, &tr.trace) {
            (AeVars::Dense { encoder, .. }, Some(t)) => encoder.jvp(tape, t, v),
            _ => v,
        }
    }

    /// `J_d w` along a decoder trace.
    pub fn decoder_jvp<T: Scalar>(&self, tape: &mut Tape<T>, tr: &AeTrace, w: Var) -> Var {
        match (self, &tr.trace) {
            (AeVars::Dense { decoder, .. }, Some(t)) => decoder.jvp(tape, t, w),
            _ => w,
        }
    }

    /// `wᵀ J_e` (as a column per sample) along an encoder trace.
    pub fn encoder_vjp<T: Scalar>(&self, tape: &mut Tape<T>, tr: &AeTrace, w: Var) -> Var {
        match (self, &tr.trace) {
            (AeVars::Dense { encoder, .. }, Some(t)) => encoder.vjp(tape, t, w),
            _ => w,
        }
    }

    pub fn flat_grad<T: Scalar>(&self, grads: &Grads<T>, out: &mut Vec<T>) {
        if let AeVars::Dense { encoder, decoder } = self {
            encoder.flat_grad(grads, out);
            decoder.flat_grad(grads, out);
        }
    }
}
