//! Flat dense autoencoder: encoder `E: R^n -> R^m`, decoder `D: R^m -> R^n`,
//! with analytic Jacobians of both maps and the directional derivative of
//! the decoder Jacobian.

mod mlp;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{elu, elu_derivative, elu_second_derivative, Activation, LayerSpec, Mlp};
pub use train::{
    adam_step, grid_search, loss_gradient, lr_at_epoch, mean_reconstruction_loss, train,
    AdamConfig, AdamState, GridResult, GridRun, GridSpec, LossGradient, LossHistory,
    TrainConfig, TrainedModel,
};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::numerics::Matrix;

/// Hidden widths of the encoder; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Architecture {
    /// Three ELU hidden layers at 3/4, 1/2 and 1/4 of the input width, the
    /// proportions of the 400 -> 300 -> 200 -> 100 -> m reference network.
    pub fn proportional(input_dim: usize, latent_dim: usize) -> Self {
        let hidden = [0.75, 0.5, 0.25]
            .iter()
            .map(|f| ((input_dim as f64 * f).round() as usize).max(latent_dim).max(1))
            .collect();
        Self {
            input_dim,
            hidden,
            latent_dim,
        }
    }

    fn chain(dims: &[usize]) -> Vec<LayerSpec> {
        let last = dims.len() - 2;
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i == last {
                    Activation::Linear
                } else {
                    Activation::Elu
                },
            })
            .collect()
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.latent_dim);
        Self::chain(&dims)
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.latent_dim];
        dims.extend(self.hidden.iter().rev());
        dims.push(self.input_dim);
        Self::chain(&dims)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpAutoencoder {
    encoder: Mlp,
    decoder: Mlp,
}

impl MlpAutoencoder {
    pub fn new(encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.out_dim() != decoder.in_dim() {
            return Err(Error::dims("latent width", encoder.out_dim(), decoder.in_dim()));
        }
        if encoder.in_dim() != decoder.out_dim() {
            return Err(Error::dims("reconstruction width", encoder.in_dim(), decoder.out_dim()));
        }
        Ok(Self { encoder, decoder })
    }

    pub fn random(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::glorot(arch.encoder_specs(), &mut rng)?;
        let decoder = Mlp::glorot(arch.decoder_specs(), &mut rng)?;
        Self::new(encoder, decoder)
    }

    /// Single linear layers `E(q) = W_e q + b_e`, `D(xi) = W_d xi + b_d`.
    pub fn linear(enc_w: Matrix, enc_b: Vec<f64>, dec_w: Matrix, dec_b: Vec<f64>) -> Result<Self> {
        Self::new(
            Mlp::from_layers(vec![(Activation::Linear, enc_w, enc_b)])?,
            Mlp::from_layers(vec![(Activation::Linear, dec_w, dec_b)])?,
        )
    }

    /// Exact identity autoencoder with `m = n`.
    pub fn identity(n: usize) -> Result<Self> {
        Self::linear(Matrix::identity(n), vec![0.0; n], Matrix::identity(n), vec![0.0; n])
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Mlp, &mut Mlp) {
        (&mut self.encoder, &mut self.decoder)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.params().len() + self.decoder.params().len()
    }

    pub fn encode(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.encoder.check_input(q)?;
        Ok(self.encoder.forward(q))
    }

    pub fn decode(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.decoder.check_input(xi)?;
        Ok(self.decoder.forward(xi))
    }

    pub fn reconstruct(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(q)?)
    }

    /// `||q - D(E(q))||^2`
    pub fn reconstruction_loss(&self, q: &[f64]) -> Result<f64> {
        let r = self.reconstruct(q)?;
        Ok(q.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum())
    }

    /// `dD/dxi`, `n x m`.
    pub fn decoder_jacobian(&self, xi: &[f64]) -> Result<Matrix> {
        self.decoder.check_input(xi)?;
        Ok(self.decoder.jacobian(xi))
    }

    /// `dE/dq`, `m x n`.
    pub fn encoder_jacobian(&self, q: &[f64]) -> Result<Matrix> {
        self.encoder.check_input(q)?;
        Ok(self.encoder.jacobian(q))
    }

    /// `d/de dD/dxi (xi + e v)` at `e = 0`, `n x m`.
    pub fn decoder_jacobian_directional_derivative(&self, xi: &[f64], v: &[f64]) -> Result<Matrix> {
        Ok(self.decode_with_derivatives(xi, v)?.2)
    }

    /// `(D(xi), dD/dxi, directional derivative of dD/dxi along v)` in one sweep.
    pub fn decode_with_derivatives(&self, xi: &[f64], v: &[f64]) -> Result<(Vec<f64>, Matrix, Matrix)> {
        self.decoder.check_input(xi)?;
        self.decoder.check_input(v)?;
        Ok(self.decoder.jacobian_and_directional_derivative(xi, v))
    }

    pub fn to_file(&self, train_config: Option<TrainConfig>, loss_history: Option<LossHistory>) -> ModelFile {
        let layers = |mlp: &Mlp| {
            mlp.specs()
                .iter()
                .enumerate()
                .map(|(l, s)| LayerFile {
                    r#in: s.in_dim,
                    out: s.out_dim,
                    activation: s.activation,
                    weights: mlp.weights(l).to_vec(),
                    biases: mlp.biases(l).to_vec(),
                })
                .collect()
        };
        ModelFile {
            latent_dim: self.latent_dim(),
            encoder: layers(&self.encoder),
            decoder: layers(&self.decoder),
            train_config,
            loss_history,
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let build = |layers: &[LayerFile]| -> Result<Mlp> {
            Mlp::from_layers(
                layers
                    .iter()
                    .map(|l| {
                        Ok((
                            l.activation,
                            Matrix::from_row_major(l.out, l.r#in, l.weights.clone())?,
                            l.biases.clone(),
                        ))
                    })
                    .collect::<Result<_>>()?,
            )
        };
        let ae = Self::new(build(&file.encoder)?, build(&file.decoder)?)?;
        if ae.latent_dim() != file.latent_dim {
            return Err(Error::dims("model latent_dim", file.latent_dim, ae.latent_dim()));
        }
        Ok(ae)
    }

    pub fn save(&self, path: &Path, train_config: Option<TrainConfig>, loss_history: Option<LossHistory>) -> Result<()> {
        write_json(path, &self.to_file(train_config, loss_history))
    }

    pub fn load(path: &Path) -> Result<(Self, ModelFile)> {
        let file: ModelFile = read_json(path)?;
        Ok((Self::from_file(&file)?, file))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub r#in: usize,
    pub out: usize,
    pub activation: Activation,
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub latent_dim: usize,
    pub encoder: Vec<LayerFile>,
    pub decoder: Vec<LayerFile>,
    pub train_config: Option<TrainConfig>,
    pub loss_history: Option<LossHistory>,
}
