//! Reconstruction-loss training: reverse-mode gradients, Adam with L2
//! regularization in the loss, and the step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, Mlp, MlpAutoencoder};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// L2 coefficient on the sum of squared weights (biases excluded).
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub lr_step: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-6,
            lr_gamma: 0.5,
            lr_step: 100,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.lr_gamma > 0.0
            && self.lr_gamma <= 1.0
            && self.lr_step >= 1
            && self.epochs >= 1
            && self.batch_size >= 1
            && (0.0..1.0).contains(&self.adam.beta1)
            && (0.0..1.0).contains(&self.adam.beta2)
            && self.adam.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration: {self:?}")))
        }
    }
}

/// Learning rate used during epoch `epoch` (1-based): starting from `lr`,
/// multiplied by `gamma` after every epoch `e` with `e mod step == 0`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = cfg.lr;
    for e in 1..epoch {
        if e % cfg.lr_step == 0 {
            lr *= cfg.lr_gamma;
        }
    }
    lr
}

/// First and second moment estimates for one parameter buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update at step `t >= 1`. Any L2 term must already
/// be folded into `grads` (see [`loss_gradient`]).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    t: usize,
    lr: f64,
    cfg: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    /// Mean per-sample reconstruction loss plus the L2 term.
    pub loss: f64,
    /// Mean per-sample reconstruction loss alone.
    pub reconstruction: f64,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

fn l2_term(mlp: &Mlp, weight_decay: f64, grads: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for ((p, g), is_weight) in mlp.params().iter().zip(grads.iter_mut()).zip(mlp.weight_mask()) {
        if is_weight {
            sum += p * p;
            *g += 2.0 * weight_decay * p;
        }
    }
    weight_decay * sum
}

/// Gradient of `mean_i ||q_i - D(E(q_i))||^2 + weight_decay * sum(w^2)` with
/// respect to every encoder and decoder parameter, by reverse-mode sweeps.
pub fn loss_gradient<Q: AsRef<[f64]>>(
    ae: &MlpAutoencoder,
    batch: &[Q],
    weight_decay: f64,
) -> Result<LossGradient> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let (enc, dec) = (ae.encoder(), ae.decoder());
    let n = enc.in_dim();
    let rows = batch.len();
    let mut x = Vec::with_capacity(rows * n);
    for q in batch {
        let q = q.as_ref();
        enc.check_input(q)?;
        x.extend_from_slice(q);
    }
    let mut g_enc = vec![0.0; enc.params().len()];
    let mut g_dec = vec![0.0; dec.params().len()];
    let scale = 1.0 / rows as f64;
    let et = enc.forward_batch(x, rows);
    let dt = dec.forward_batch(et.output.clone(), rows);
    let x = &et.inputs[0];
    let mut recon = 0.0;
    let grad_out: Vec<f64> = dt
        .output
        .iter()
        .zip(x)
        .map(|(r, q)| {
            let d = r - q;
            recon += d * d;
            2.0 * scale * d
        })
        .collect();
    let grad_latent = dec.backward_batch(&dt, grad_out, &mut g_dec);
    enc.backward_batch(&et, grad_latent, &mut g_enc);
    recon *= scale;
    let l2 = l2_term(enc, weight_decay, &mut g_enc) + l2_term(dec, weight_decay, &mut g_dec);
    Ok(LossGradient {
        loss: recon + l2,
        reconstruction: recon,
        encoder: g_enc,
        decoder: g_dec,
    })
}

/// Mean per-sample `||q - D(E(q))||^2` over a set.
pub fn mean_reconstruction_loss<Q: AsRef<[f64]>>(ae: &MlpAutoencoder, set: &[Q]) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let (enc, dec) = (ae.encoder(), ae.decoder());
    let mut total = 0.0;
    for chunk in set.chunks(256) {
        let mut x = Vec::with_capacity(chunk.len() * enc.in_dim());
        for q in chunk {
            let q = q.as_ref();
            enc.check_input(q)?;
            x.extend_from_slice(q);
        }
        let z = enc.forward_batch(x, chunk.len());
        let r = dec.forward_batch(z.output, chunk.len());
        total += r.output.iter().zip(&z.inputs[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / set.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossHistory {
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: MlpAutoencoder,
    pub config: TrainConfig,
    pub history: LossHistory,
}

impl TrainedModel {
    pub fn final_valid(&self) -> f64 {
        self.history.valid.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_train(&self) -> f64 {
        self.history.train.last().copied().unwrap_or(f64::NAN)
    }
}

/// Mini-batch Adam training. Samples are reshuffled every epoch from a
/// generator seeded with `cfg.seed`; the logged train loss is the
/// sample-weighted mean reconstruction loss over the epoch's batches.
pub fn train<Q: AsRef<[f64]>>(
    mut ae: MlpAutoencoder,
    train_set: &[Q],
    valid_set: &[Q],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut enc_state = AdamState::new(ae.encoder().params().len());
    let mut dec_state = AdamState::new(ae.decoder().params().len());
    let mut history = LossHistory::default();
    let mut t = 0;
    let mut batch: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(cfg, epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].as_ref()));
            let grad = loss_gradient(&ae, &batch, cfg.weight_decay)?;
            if !grad.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += grad.reconstruction * chunk.len() as f64;
            t += 1;
            let (enc, dec) = ae.parts_mut();
            adam_step(enc.params_mut(), &grad.encoder, &mut enc_state, t, lr, &cfg.adam);
            adam_step(dec.params_mut(), &grad.decoder, &mut dec_state, t, lr, &cfg.adam);
        }
        let valid = mean_reconstruction_loss(&ae, valid_set)?;
        if !valid.is_finite() && !valid_set.is_empty() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.train.push(epoch_loss / train_set.len() as f64);
        history.valid.push(valid);
        history.lr.push(lr);
    }
    Ok(TrainedModel {
        model: ae,
        config: cfg.clone(),
        history,
    })
}

/// Hyperparameter grid over learning rate, L2 coefficient, decay factor and
/// decay step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub lr_gamma: Vec<f64>,
    pub lr_step: Vec<usize>,
}

impl Default for GridSpec {
    /// The flat-autoencoder grid: 3 x 3 x 2 x 2 = 36 configurations.
    fn default() -> Self {
        Self {
            lr: vec![1e-3, 5e-4, 1e-4],
            weight_decay: vec![1e-5, 1e-6, 1e-7],
            lr_gamma: vec![0.3, 0.5],
            lr_step: vec![100, 200],
        }
    }
}

impl GridSpec {
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &weight_decay in &self.weight_decay {
                for &lr_gamma in &self.lr_gamma {
                    for &lr_step in &self.lr_step {
                        out.push(TrainConfig {
                            lr,
                            weight_decay,
                            lr_gamma,
                            lr_step,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub config: TrainConfig,
    pub final_train: f64,
    pub final_valid: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    pub best_index: usize,
    pub best: TrainedModel,
}

/// Trains one model per grid point, all from the same initialization
/// (seeded with `base.seed`), and keeps the lowest final validation loss.
/// Diverging runs are recorded and skipped.
pub fn grid_search<Q: AsRef<[f64]>>(
    arch: &Architecture,
    train_set: &[Q],
    valid_set: &[Q],
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridResult> {
    let init = MlpAutoencoder::random(arch, base.seed)?;
    let mut runs = Vec::new();
    let mut best: Option<(usize, TrainedModel)> = None;
    for cfg in grid.configs(base) {
        match train(init.clone(), train_set, valid_set, &cfg) {
            Ok(trained) => {
                let score = if valid_set.is_empty() {
                    trained.final_train()
                } else {
                    trained.final_valid()
                };
                runs.push(GridRun {
                    config: cfg,
                    final_train: trained.final_train(),
                    final_valid: trained.final_valid(),
                    diverged: false,
                });
                let better = match &best {
                    None => true,
                    Some((_, b)) => {
                        let b_score = if valid_set.is_empty() {
                            b.final_train()
                        } else {
                            b.final_valid()
                        };
                        score < b_score
                    }
                };
                if better {
                    best = Some((runs.len() - 1, trained));
                }
            }
            Err(Error::NonFiniteLoss { .. }) => runs.push(GridRun {
                config: cfg,
                final_train: f64::INFINITY,
                final_valid: f64::INFINITY,
                diverged: true,
            }),
            Err(e) => return Err(e),
        }
    }
    let (best_index, best) =
        best.ok_or_else(|| Error::NonFiniteLoss { epoch: base.epochs })?;
    Ok(GridResult {
        runs,
        best_index,
        best,
    })
}
