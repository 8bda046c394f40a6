//! Autoencoder over scattering features with an optional variational
//! bottleneck and an optional property-regression head.
//!
//! The model standardizes features (and property targets) with statistics
//! fitted on the training split, then minimizes
//! `L = L_r + lambda_p * L_p (+ beta * KL)` full-batch with Adam:
//! `L_r` is the mean squared reconstruction error, `L_p` the mean squared
//! property-prediction error in standardized units, and the KL term is the
//! closed-form divergence from a unit Gaussian. Setting
//! `regression_weight = 0` removes the property branch from the loss graph
//! entirely, so the plain-autoencoder ablation is arithmetically identical
//! to a reconstruction-only training loop.
//!
//! With a learned wavelet selector the features themselves sit on the tape
//! (see [`train_with_selector`]): each epoch rebuilds scattering moments
//! from the current selector so its logits receive gradients from the same
//! loss. Standardization statistics stay frozen at the initial selector.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, TensorId};
use crate::nn::{
    save_params, standard_normal, Activation, Adam, Mlp, NnError, ParamTensor,
};
use crate::scattering::{moments_tape, DiffusionStacks, ScatteringConfig};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset has {got} graphs, training needs at least {min}")]
    DatasetTooSmall { got: usize, min: usize },
    #[error("property {name:?} missing for record {id:?}")]
    MissingProperty { name: String, id: String },
    #[error("model is not variational")]
    NotVariational,
    #[error("invalid latent model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Autoencoder configuration; ablation axes are `variational` and
/// `regression_weight` (0 disables the property head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModelConfig {
    /// Feature width; 0 in a run config means "derive from the features".
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Encoder widths, mirrored by the decoder.
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub variational: bool,
    /// lambda_p; 0 removes the property loss branch entirely.
    #[serde(default = "default_regression_weight")]
    pub regression_weight: f64,
    /// beta on the KL term (variational mode only).
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    #[serde(default)]
    pub property_names: Vec<String>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_latent_dim() -> usize {
    32
}
fn default_hidden_dims() -> Vec<usize> {
    vec![256, 128]
}
fn default_regression_weight() -> f64 {
    1.0
}
fn default_kl_weight() -> f64 {
    1e-3
}
fn default_lr() -> f64 {
    1e-3
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    25
}

impl LatentModelConfig {
    /// Baseline config for `input_dim` features; callers override fields as
    /// needed.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            latent_dim: default_latent_dim(),
            hidden_dims: default_hidden_dims(),
            variational: false,
            regression_weight: default_regression_weight(),
            kl_weight: default_kl_weight(),
            property_names: Vec::new(),
            lr: default_lr(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        if self.input_dim == 0 {
            return Err(LatentError::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return Err(LatentError::InvalidConfig(format!(
                "latent_dim must satisfy 1 <= latent_dim < input_dim ({} vs {})",
                self.latent_dim, self.input_dim
            )));
        }
        if self.regression_weight < 0.0 {
            return Err(LatentError::InvalidConfig(
                "regression_weight must be >= 0".into(),
            ));
        }
        if self.regression_weight > 0.0 && self.property_names.is_empty() {
            return Err(LatentError::InvalidConfig(
                "regression_weight > 0 requires property_names".into(),
            ));
        }
        if self.property_names.len() > 10 {
            return Err(LatentError::InvalidConfig(
                "at most 10 property names are supported".into(),
            ));
        }
        if self.kl_weight < 0.0 {
            return Err(LatentError::InvalidConfig("kl_weight must be >= 0".into()));
        }
        if self.lr <= 0.0 {
            return Err(LatentError::InvalidConfig("lr must be > 0".into()));
        }
        if self.max_epochs == 0 {
            return Err(LatentError::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(LatentError::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }

    fn uses_regression(&self) -> bool {
        self.regression_weight > 0.0
    }
}

/// Per-column affine normalization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Identity transform for `dim` columns.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Column means and standard deviations over the given rows; constant
    /// columns get unit scale so they pass through unchanged.
    pub fn fit(data: &Array2<f64>, rows: &[usize]) -> Self {
        let dim = data.ncols();
        let count = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(data.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let mut var = vec![0.0; dim];
        for &r in rows {
            for ((s, m), v) in var.iter_mut().zip(&mean).zip(data.row(r)) {
                let d = v - m;
                *s += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd < 1e-8 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// Standardizes selected rows into one row-major [rows.len(), dim]
    /// buffer.
    pub fn transform_rows(&self, data: &Array2<f64>, rows: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * self.dim());
        for &r in rows {
            for ((v, m), s) in data.row(r).iter().zip(&self.mean).zip(&self.std) {
                out.push((v - m) / s);
            }
        }
        out
    }
}

/// Deterministic 80/10/10 index split by seeded shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn new(n: usize, seed: u64) -> Result<Self, LatentError> {
        if n < 10 {
            return Err(LatentError::DatasetTooSmall { got: n, min: 10 });
        }
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let n_val = (n / 10).max(1);
        let n_test = (n / 10).max(1);
        let n_train = n - n_val - n_test;
        let train = indices[..n_train].to_vec();
        let val = indices[n_train..n_train + n_val].to_vec();
        let test = indices[n_train + n_val..].to_vec();
        Ok(Self { train, val, test })
    }
}

/// Encoder/decoder/regressor triple plus the standardization statistics
/// they were trained under.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub config: LatentModelConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub regressor: Mlp,
    pub feature_stats: Standardizer,
    pub property_stats: Standardizer,
}

fn chain(first: usize, middle: &[usize], last: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(middle.len() + 2);
    dims.push(first);
    dims.extend_from_slice(middle);
    dims.push(last);
    dims
}

impl LatentModel {
    /// Glorot-initialized model; the regressor gets one hidden layer of the
    /// innermost encoder width.
    pub fn new(config: LatentModelConfig, rng: &mut impl Rng) -> Result<Self, LatentError> {
        config.validate()?;
        let enc_out = if config.variational {
            2 * config.latent_dim
        } else {
            config.latent_dim
        };
        let enc_dims = chain(config.input_dim, &config.hidden_dims, enc_out);
        let mut dec_hidden = config.hidden_dims.clone();
        dec_hidden.reverse();
        let dec_dims = chain(config.latent_dim, &dec_hidden, config.input_dim);
        let reg_hidden = *config.hidden_dims.last().unwrap_or(&config.latent_dim);
        let reg_out = config.property_names.len().max(1);
        let reg_dims = vec![config.latent_dim, reg_hidden, reg_out];
        let encoder = Mlp::new(&enc_dims, Activation::Relu, "enc", rng);
        let decoder = Mlp::new(&dec_dims, Activation::Relu, "dec", rng);
        let regressor = Mlp::new(&reg_dims, Activation::Relu, "reg", rng);
        let feature_stats = Standardizer::identity(config.input_dim);
        let property_stats = Standardizer::identity(config.property_names.len());
        Ok(Self {
            config,
            encoder,
            decoder,
            regressor,
            feature_stats,
            property_stats,
        })
    }

    /// Latent code of one raw feature vector; the variational model returns
    /// the posterior mean, so evaluation encoding is a pure function.
    pub fn encode(&self, features: &[f64]) -> Result<Vec<f64>, LatentError> {
        if features.len() != self.config.input_dim {
            return Err(LatentError::DimensionMismatch {
                expected: self.config.input_dim,
                got: features.len(),
            });
        }
        let x = self.feature_stats.transform_row(features);
        let out = self.encoder.forward(&x, 1);
        Ok(out[..self.config.latent_dim].to_vec())
    }

    /// Encodes every row of a raw feature matrix into [n, latent_dim].
    pub fn encode_matrix(&self, features: &Array2<f64>) -> Result<Array2<f64>, LatentError> {
        let n = features.nrows();
        let mut out = Array2::zeros((n, self.config.latent_dim));
        for i in 0..n {
            let row = features.row(i).to_vec();
            let z = self.encode(&row)?;
            out.row_mut(i).assign(&ndarray::Array1::from(z));
        }
        Ok(out)
    }

    /// Decodes a latent vector back to standardized feature space.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, LatentError> {
        if z.len() != self.config.latent_dim {
            return Err(LatentError::DimensionMismatch {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        Ok(self.decoder.forward(z, 1))
    }

    /// Property predictions for one raw feature vector, in original units.
    pub fn predict_properties(&self, features: &[f64]) -> Result<Vec<f64>, LatentError> {
        if self.config.property_names.is_empty() {
            return Err(LatentError::InvalidConfig(
                "model has no property names configured".into(),
            ));
        }
        let z = self.encode(features)?;
        let pred = self.regressor.forward(&z, 1);
        Ok(self.property_stats.inverse_row(&pred))
    }

    /// Mean over the batch of the squared reconstruction error in
    /// standardized feature space.
    pub fn reconstruction_loss(&self, features: &Array2<f64>) -> Result<f64, LatentError> {
        let b = features.nrows();
        if b == 0 {
            return Err(LatentError::EmptyBatch);
        }
        let rows: Vec<usize> = (0..b).collect();
        let x = self.feature_stats.transform_rows(features, &rows);
        let z = self.encoder.forward(&x, b);
        let latent: Vec<f64> = (0..b)
            .flat_map(|i| {
                z[i * self.encoder.output_dim()..i * self.encoder.output_dim() + self.config.latent_dim]
                    .to_vec()
            })
            .collect();
        let recon = self.decoder.forward(&latent, b);
        let sum: f64 = recon.iter().zip(&x).map(|(r, t)| (r - t) * (r - t)).sum();
        Ok(sum / b as f64)
    }

    /// Mean squared property-prediction error in standardized units.
    pub fn property_loss(
        &self,
        features: &Array2<f64>,
        properties: &Array2<f64>,
    ) -> Result<f64, LatentError> {
        let b = features.nrows();
        if b == 0 {
            return Err(LatentError::EmptyBatch);
        }
        let p = self.config.property_names.len();
        if properties.ncols() != p || properties.nrows() != b {
            return Err(LatentError::DimensionMismatch {
                expected: b * p,
                got: properties.len(),
            });
        }
        let mut sum = 0.0;
        for i in 0..b {
            let row = features.row(i).to_vec();
            let z = self.encode(&row)?;
            let pred = self.regressor.forward(&z, 1);
            let target = self.property_stats.transform_row(&properties.row(i).to_vec());
            sum += pred
                .iter()
                .zip(&target)
                .map(|(a, t)| (a - t) * (a - t))
                .sum::<f64>();
        }
        Ok(sum / (b * p) as f64)
    }

    /// Per-property mean absolute prediction error in original units.
    pub fn property_mae(
        &self,
        features: &Array2<f64>,
        properties: &Array2<f64>,
    ) -> Result<Vec<f64>, LatentError> {
        let b = features.nrows();
        if b == 0 {
            return Err(LatentError::EmptyBatch);
        }
        let p = self.config.property_names.len();
        if properties.ncols() != p {
            return Err(LatentError::DimensionMismatch {
                expected: p,
                got: properties.ncols(),
            });
        }
        let mut acc = vec![0.0; p];
        for i in 0..b {
            let row = features.row(i).to_vec();
            let pred = self.predict_properties(&row)?;
            for (a, (y, t)) in acc.iter_mut().zip(pred.iter().zip(properties.row(i))) {
                *a += (y - t).abs();
            }
        }
        for a in &mut acc {
            *a /= b as f64;
        }
        Ok(acc)
    }

    fn optimized_params(&mut self, learned_selector: bool) -> Vec<&mut ParamTensor> {
        let with_reg = self.config.uses_regression();
        let _ = learned_selector;
        let mut params: Vec<&mut ParamTensor> = Vec::new();
        params.extend(self.encoder.params_mut());
        params.extend(self.decoder.params_mut());
        if with_reg {
            params.extend(self.regressor.params_mut());
        }
        params
    }

    /// Serialized parameter blob covering encoder, decoder, and regressor.
    pub fn params_blob(&self) -> Vec<u8> {
        let mut all = self.encoder.params();
        all.extend(self.decoder.params());
        all.extend(self.regressor.params());
        save_params(&all)
    }

    /// Rebuilds a model from a manifest and parameter blob.
    pub fn from_parts(manifest: &LatentManifest, blob: &[u8]) -> Result<Self, LatentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = LatentModel::new(manifest.config.clone(), &mut rng)?;
        let loaded = crate::nn::load_params(blob)?;
        let mut targets: Vec<&mut ParamTensor> = Vec::new();
        targets.extend(model.encoder.params_mut());
        targets.extend(model.decoder.params_mut());
        targets.extend(model.regressor.params_mut());
        crate::nn::restore_params(&mut targets, &loaded)?;
        model.feature_stats = Standardizer {
            mean: manifest.feature_mean.clone(),
            std: manifest.feature_std.clone(),
        };
        model.property_stats = Standardizer {
            mean: manifest.property_mean.clone(),
            std: manifest.property_std.clone(),
        };
        Ok(model)
    }

    /// Checkpoint sidecar for [`params_blob`].
    pub fn manifest(&self, best_epoch: usize, best_val_loss: f64) -> LatentManifest {
        LatentManifest {
            config: self.config.clone(),
            feature_mean: self.feature_stats.mean.clone(),
            feature_std: self.feature_stats.std.clone(),
            property_mean: self.property_stats.mean.clone(),
            property_std: self.property_stats.std.clone(),
            best_epoch,
            best_val_loss,
        }
    }
}

/// JSON sidecar describing a saved latent model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentManifest {
    pub config: LatentModelConfig,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub property_mean: Vec<f64>,
    pub property_std: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Closed-form KL divergence of N(mu, sigma^2) from N(0, 1), averaged over
/// `batch` rows; nonnegative for every input.
pub fn kl_divergence(mu: &[f64], log_var: &[f64], batch: usize) -> f64 {
    assert_eq!(mu.len(), log_var.len());
    assert!(batch > 0);
    let sum: f64 = mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum();
    -0.5 * sum / batch as f64
}

/// Loss tensors assembled on a tape; disabled branches stay `None` so the
/// graph for an ablated model contains no trace of the removed term.
pub struct LossParts {
    pub total: TensorId,
    pub recon: TensorId,
    pub property: Option<TensorId>,
    pub kl: Option<TensorId>,
}

/// Builds the standardized-space training loss on `tape`.
///
/// `x` is the [B, input_dim] standardized feature tensor, `targets` the
/// [B, P] standardized property tensor (required iff the config uses
/// regression), and `noise` the detached [B, latent_dim] reparameterization
/// sample; `None` selects evaluation mode where the code is the posterior
/// mean.
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss(
    tape: &mut Tape,
    model: &LatentModel,
    enc: &[(TensorId, TensorId)],
    dec: &[(TensorId, TensorId)],
    reg: &[(TensorId, TensorId)],
    x: TensorId,
    targets: Option<TensorId>,
    noise: Option<TensorId>,
    batch: usize,
) -> Result<LossParts, LatentError> {
    let cfg = &model.config;
    let l = cfg.latent_dim;
    let enc_out = model.encoder.forward_tape(tape, x, enc);
    let (z, kl) = if cfg.variational {
        let mu = tape.slice_cols(enc_out, 0, l)?;
        let log_var = tape.slice_cols(enc_out, l, 2 * l)?;
        let var = tape.exp(log_var);
        let mu_sq = tape.mul(mu, mu)?;
        let ones = tape.leaf(&[batch, l], vec![1.0; batch * l], false);
        let t1 = tape.add(ones, log_var)?;
        let t2 = tape.sub(t1, mu_sq)?;
        let t3 = tape.sub(t2, var)?;
        let ksum = tape.sum(t3);
        let kl = tape.scale(ksum, -0.5 / batch as f64);
        let z = match noise {
            Some(eps) => {
                let sigma = {
                    let half = tape.scale(log_var, 0.5);
                    tape.exp(half)
                };
                let scaled = tape.mul(sigma, eps)?;
                tape.add(mu, scaled)?
            }
            None => mu,
        };
        (z, Some(kl))
    } else {
        (enc_out, None)
    };
    let recon = model.decoder.forward_tape(tape, z, dec);
    let diff = tape.sub(recon, x)?;
    let sq = tape.mul(diff, diff)?;
    let ssum = tape.sum(sq);
    let recon_loss = tape.scale(ssum, 1.0 / batch as f64);
    let mut total = recon_loss;
    let mut property = None;
    if cfg.uses_regression() {
        let t = targets.ok_or(LatentError::InvalidConfig(
            "regression enabled but no property targets supplied".into(),
        ))?;
        let pred = model.regressor.forward_tape(tape, z, reg);
        let pdiff = tape.sub(pred, t)?;
        let psq = tape.mul(pdiff, pdiff)?;
        let psum = tape.sum(psq);
        let p = cfg.property_names.len();
        let ploss = tape.scale(psum, 1.0 / (batch * p) as f64);
        let weighted = tape.scale(ploss, cfg.regression_weight);
        total = tape.add(total, weighted)?;
        property = Some(ploss);
    }
    if let Some(kl_id) = kl {
        let weighted = tape.scale(kl_id, cfg.kl_weight);
        total = tape.add(total, weighted)?;
    }
    Ok(LossParts {
        total,
        recon: recon_loss,
        property,
        kl,
    })
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub recon_loss: f64,
    pub property_loss: f64,
    pub kl_loss: f64,
}

/// Training outcome: loss history, the epoch whose parameters were kept,
/// and the index split used.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub split: DataSplit,
}

struct Snapshot {
    values: Vec<Vec<f64>>,
}

fn take_snapshot(params: &[&mut ParamTensor]) -> Snapshot {
    Snapshot {
        values: params.iter().map(|p| p.values.clone()).collect(),
    }
}

fn restore_snapshot(params: &mut [&mut ParamTensor], snap: &Snapshot) {
    for (p, v) in params.iter_mut().zip(&snap.values) {
        p.values.clone_from(v);
    }
}

fn eval_loss(
    model: &LatentModel,
    x_rows: &[f64],
    t_rows: Option<&[f64]>,
    batch: usize,
) -> Result<f64, LatentError> {
    let mut tape = Tape::new();
    let enc = model.encoder.load_params(&mut tape, false);
    let dec = model.decoder.load_params(&mut tape, false);
    let reg = model.regressor.load_params(&mut tape, false);
    let x = tape.leaf(&[batch, model.config.input_dim], x_rows.to_vec(), false);
    let targets = t_rows.map(|t| {
        tape.leaf(
            &[batch, model.config.property_names.len()],
            t.to_vec(),
            false,
        )
    });
    let parts = assemble_loss(&mut tape, model, &enc, &dec, &reg, x, targets, None, batch)?;
    Ok(tape.scalar(parts.total))
}

/// Trains on a fixed feature matrix; property targets are required when the
/// config enables regression (pass an [n, 0] matrix otherwise). Fits
/// standardizers on the training split, runs full-batch Adam with
/// best-validation early stopping, and leaves the best parameters in
/// `model`.
pub fn train(
    model: &mut LatentModel,
    features: &Array2<f64>,
    properties: &Array2<f64>,
    seed: u64,
) -> Result<TrainReport, LatentError> {
    model.config.validate()?;
    let n = features.nrows();
    if features.ncols() != model.config.input_dim {
        return Err(LatentError::DimensionMismatch {
            expected: model.config.input_dim,
            got: features.ncols(),
        });
    }
    let split = DataSplit::new(n, seed)?;
    model.feature_stats = Standardizer::fit(features, &split.train);
    let use_reg = model.config.uses_regression();
    if use_reg {
        let p = model.config.property_names.len();
        if properties.ncols() != p || properties.nrows() != n {
            return Err(LatentError::DimensionMismatch {
                expected: n * p,
                got: properties.len(),
            });
        }
        model.property_stats = Standardizer::fit(properties, &split.train);
    }
    let x_tr = model.feature_stats.transform_rows(features, &split.train);
    let x_val = model.feature_stats.transform_rows(features, &split.val);
    let t_tr = use_reg.then(|| model.property_stats.transform_rows(properties, &split.train));
    let t_val = use_reg.then(|| model.property_stats.transform_rows(properties, &split.val));
    let b_tr = split.train.len();
    let b_val = split.val.len();
    let cfg = model.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    let sizes: Vec<usize> = model
        .optimized_params(false)
        .iter()
        .map(|p| p.values.len())
        .collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut best_snap = take_snapshot(&model.optimized_params(false));

    for epoch in 1..=cfg.max_epochs {
        let noise_vals: Option<Vec<f64>> = cfg.variational.then(|| {
            (0..b_tr * cfg.latent_dim)
                .map(|_| standard_normal(&mut rng))
                .collect()
        });
        let (grads, stats) = {
            let mut tape = Tape::new();
            let enc = model.encoder.load_params(&mut tape, true);
            let dec = model.decoder.load_params(&mut tape, true);
            let reg = model.regressor.load_params(&mut tape, use_reg);
            let x = tape.leaf(&[b_tr, cfg.input_dim], x_tr.clone(), false);
            let targets = t_tr
                .as_ref()
                .map(|t| tape.leaf(&[b_tr, cfg.property_names.len()], t.clone(), false));
            let noise = noise_vals
                .as_ref()
                .map(|v| tape.leaf(&[b_tr, cfg.latent_dim], v.clone(), false));
            let parts =
                assemble_loss(&mut tape, model, &enc, &dec, &reg, x, targets, noise, b_tr)?;
            tape.backward(parts.total)?;
            let mut ids: Vec<TensorId> = Vec::new();
            for (w, b) in enc.iter().chain(dec.iter()) {
                ids.push(*w);
                ids.push(*b);
            }
            if use_reg {
                for (w, b) in &reg {
                    ids.push(*w);
                    ids.push(*b);
                }
            }
            let grads: Vec<Vec<f64>> = ids
                .iter()
                .map(|id| tape.grad(*id).map(|g| g.to_vec()))
                .collect::<Result<_, _>>()?;
            let stats = (
                tape.scalar(parts.total),
                tape.scalar(parts.recon),
                parts.property.map_or(0.0, |p| tape.scalar(p)),
                parts.kl.map_or(0.0, |k| tape.scalar(k)),
            );
            (grads, stats)
        };
        {
            let mut params = model.optimized_params(false);
            adam.step(&mut params, &grads);
        }
        let val_loss = eval_loss(model, &x_val, t_val.as_deref(), b_val)?;
        history.push(EpochStats {
            epoch,
            train_loss: stats.0,
            val_loss,
            recon_loss: stats.1,
            property_loss: stats.2,
            kl_loss: stats.3,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            best_snap = take_snapshot(&model.optimized_params(false));
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    {
        let mut params = model.optimized_params(false);
        restore_snapshot(&mut params, &best_snap);
    }
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss: best_val,
        split,
    })
}

/// Frozen-path scattering features for every graph at the given selector,
/// evaluated through the same arithmetic the tape path uses.
pub fn features_at_selector(
    stacks: &[DiffusionStacks],
    scattering_cfg: &ScatteringConfig,
    selector_rows: &Array2<f64>,
) -> Array2<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(stacks.len());
    for s in stacks {
        let mut tape = Tape::new();
        let sel = tape.leaf(
            &[selector_rows.nrows(), selector_rows.ncols()],
            selector_rows.iter().cloned().collect(),
            false,
        );
        let feats = moments_tape(&mut tape, s, sel, scattering_cfg);
        rows.push(tape.values(feats).to_vec());
    }
    let dim = rows.first().map_or(0, |r| r.len());
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&ndarray::Array1::from(r));
    }
    out
}

/// Logits whose row-softmax reproduces the dyadic selector to machine
/// precision: one spike of 50 at power 2^k per row, which softmax maps to
/// a weight within 1e-20 of one.
pub fn dyadic_selector_logits(num_scales: usize, max_power: usize) -> ParamTensor {
    let cols = max_power + 1;
    let mut logits = ParamTensor::zeros("selector.logits", vec![num_scales + 1, cols]);
    for k in 0..=num_scales {
        logits.values[k * cols + (1 << k).min(max_power)] = 50.0;
    }
    logits
}

/// Row-softmax of selector logits on plain f64, for frozen evaluation.
pub fn selector_rows(logits: &ParamTensor) -> Array2<f64> {
    softmax_rows_plain(logits)
}

fn softmax_rows_plain(logits: &ParamTensor) -> Array2<f64> {
    let rows = logits.shape[0];
    let cols = logits.shape[1];
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        let row = &logits.values[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for c in 0..cols {
            out[[r, c]] = exps[c] / sum;
        }
    }
    out
}

/// Joint training of the autoencoder and a learnable wavelet selector.
///
/// Each epoch re-derives training features on the tape from
/// `softmax_rows(selector_logits)`, so the selector receives gradients from
/// the autoencoder loss. Standardization statistics are fitted once, at the
/// initial selector, and stay frozen so the feature scale seen by the
/// encoder does not drift mid-run. Validation features track the current
/// selector through the frozen path.
pub fn train_with_selector(
    model: &mut LatentModel,
    stacks: &[DiffusionStacks],
    scattering_cfg: &ScatteringConfig,
    selector_logits: &mut ParamTensor,
    properties: &Array2<f64>,
    seed: u64,
) -> Result<TrainReport, LatentError> {
    model.config.validate()?;
    scattering_cfg
        .validate()
        .map_err(|e| LatentError::InvalidConfig(e.to_string()))?;
    let n = stacks.len();
    let split = DataSplit::new(n, seed)?;
    let init_features =
        features_at_selector(stacks, scattering_cfg, &softmax_rows_plain(selector_logits));
    if init_features.ncols() != model.config.input_dim {
        return Err(LatentError::DimensionMismatch {
            expected: model.config.input_dim,
            got: init_features.ncols(),
        });
    }
    model.feature_stats = Standardizer::fit(&init_features, &split.train);
    let use_reg = model.config.uses_regression();
    if use_reg {
        let p = model.config.property_names.len();
        if properties.ncols() != p || properties.nrows() != n {
            return Err(LatentError::DimensionMismatch {
                expected: n * p,
                got: properties.len(),
            });
        }
        model.property_stats = Standardizer::fit(properties, &split.train);
    }
    let t_tr = use_reg.then(|| model.property_stats.transform_rows(properties, &split.train));
    let t_val = use_reg.then(|| model.property_stats.transform_rows(properties, &split.val));
    let b_tr = split.train.len();
    let b_val = split.val.len();
    let cfg = model.config.clone();
    let sel_shape = [selector_logits.shape[0], selector_logits.shape[1]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    let neg_mean: Vec<f64> = model.feature_stats.mean.iter().map(|m| -m).collect();
    let inv_std_tr: Vec<f64> = {
        let one_row: Vec<f64> = model.feature_stats.std.iter().map(|s| 1.0 / s).collect();
        one_row
            .iter()
            .cycle()
            .take(b_tr * cfg.input_dim)
            .cloned()
            .collect()
    };

    let mut sizes: Vec<usize> = model
        .optimized_params(true)
        .iter()
        .map(|p| p.values.len())
        .collect();
    sizes.push(selector_logits.values.len());
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut best_snap = {
        let params = model.optimized_params(true);
        let mut s = take_snapshot(&params);
        s.values.push(selector_logits.values.clone());
        s
    };

    for epoch in 1..=cfg.max_epochs {
        let noise_vals: Option<Vec<f64>> = cfg.variational.then(|| {
            (0..b_tr * cfg.latent_dim)
                .map(|_| standard_normal(&mut rng))
                .collect()
        });
        let (grads, sel_grad, stats) = {
            let mut tape = Tape::new();
            let enc = model.encoder.load_params(&mut tape, true);
            let dec = model.decoder.load_params(&mut tape, true);
            let reg = model.regressor.load_params(&mut tape, use_reg);
            let logits = tape.leaf(&sel_shape, selector_logits.values.clone(), true);
            let sel = tape.softmax_rows(logits)?;
            let feat_rows: Vec<TensorId> = split
                .train
                .iter()
                .map(|&i| moments_tape(&mut tape, &stacks[i], sel, scattering_cfg))
                .collect();
            let raw = tape.concat(&feat_rows, 0)?;
            let nm = tape.leaf(&[cfg.input_dim], neg_mean.clone(), false);
            let centered = tape.add_bias(raw, nm)?;
            let inv = tape.leaf(&[b_tr, cfg.input_dim], inv_std_tr.clone(), false);
            let x = tape.mul(centered, inv)?;
            let targets = t_tr
                .as_ref()
                .map(|t| tape.leaf(&[b_tr, cfg.property_names.len()], t.clone(), false));
            let noise = noise_vals
                .as_ref()
                .map(|v| tape.leaf(&[b_tr, cfg.latent_dim], v.clone(), false));
            let parts =
                assemble_loss(&mut tape, model, &enc, &dec, &reg, x, targets, noise, b_tr)?;
            tape.backward(parts.total)?;
            let mut ids: Vec<TensorId> = Vec::new();
            for (w, b) in enc.iter().chain(dec.iter()) {
                ids.push(*w);
                ids.push(*b);
            }
            if use_reg {
                for (w, b) in &reg {
                    ids.push(*w);
                    ids.push(*b);
                }
            }
            let grads: Vec<Vec<f64>> = ids
                .iter()
                .map(|id| tape.grad(*id).map(|g| g.to_vec()))
                .collect::<Result<_, _>>()?;
            let sel_grad = tape.grad(logits)?.to_vec();
            let stats = (
                tape.scalar(parts.total),
                tape.scalar(parts.recon),
                parts.property.map_or(0.0, |p| tape.scalar(p)),
                parts.kl.map_or(0.0, |k| tape.scalar(k)),
            );
            (grads, sel_grad, stats)
        };
        {
            let mut params = model.optimized_params(true);
            params.push(selector_logits);
            let mut all_grads = grads;
            all_grads.push(sel_grad);
            adam.step(&mut params, &all_grads);
        }
        let val_feats = {
            let sel = softmax_rows_plain(selector_logits);
            let val_stacks: Vec<DiffusionStacks> =
                split.val.iter().map(|&i| stacks[i].clone()).collect();
            features_at_selector(&val_stacks, scattering_cfg, &sel)
        };
        let rows: Vec<usize> = (0..b_val).collect();
        let x_val = model.feature_stats.transform_rows(&val_feats, &rows);
        let val_loss = eval_loss(model, &x_val, t_val.as_deref(), b_val)?;
        history.push(EpochStats {
            epoch,
            train_loss: stats.0,
            val_loss,
            recon_loss: stats.1,
            property_loss: stats.2,
            kl_loss: stats.3,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            best_snap = {
                let params = model.optimized_params(true);
                let mut s = take_snapshot(&params);
                s.values.push(selector_logits.values.clone());
                s
            };
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    {
        let mut params = model.optimized_params(true);
        params.push(selector_logits);
        restore_snapshot(&mut params, &best_snap);
    }
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss: best_val,
        split,
    })
}

/// Fits only the regressor head on frozen latent codes (the post-hoc probe
/// used to score property prediction for models trained without the
/// regression loss). Uses the same split, early-stopping rule, and property
/// standardization as [`train`].
pub fn fit_regressor(
    model: &mut LatentModel,
    features: &Array2<f64>,
    properties: &Array2<f64>,
    seed: u64,
) -> Result<TrainReport, LatentError> {
    model.config.validate()?;
    if model.config.property_names.is_empty() {
        return Err(LatentError::InvalidConfig(
            "regressor probe requires property_names".into(),
        ));
    }
    let n = features.nrows();
    let p = model.config.property_names.len();
    if properties.ncols() != p || properties.nrows() != n {
        return Err(LatentError::DimensionMismatch {
            expected: n * p,
            got: properties.len(),
        });
    }
    let split = DataSplit::new(n, seed)?;
    model.property_stats = Standardizer::fit(properties, &split.train);
    let z_all = model.encode_matrix(features)?;
    let l = model.config.latent_dim;
    let gather = |idx: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            out.extend(z_all.row(i));
        }
        out
    };
    let z_tr = gather(&split.train);
    let z_val = gather(&split.val);
    let t_tr = model.property_stats.transform_rows(properties, &split.train);
    let t_val = model.property_stats.transform_rows(properties, &split.val);
    let b_tr = split.train.len();
    let b_val = split.val.len();
    let cfg = model.config.clone();

    let sizes: Vec<usize> = model
        .regressor
        .params()
        .iter()
        .map(|p| p.values.len())
        .collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut best_snap = take_snapshot(&model.regressor.params_mut());

    let probe_loss = |model: &LatentModel, z: &[f64], t: &[f64], b: usize| -> Result<f64, LatentError> {
        let mut tape = Tape::new();
        let reg = model.regressor.load_params(&mut tape, false);
        let zid = tape.leaf(&[b, l], z.to_vec(), false);
        let tid = tape.leaf(&[b, p], t.to_vec(), false);
        let pred = model.regressor.forward_tape(&mut tape, zid, &reg);
        let diff = tape.sub(pred, tid)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        let loss = tape.scale(s, 1.0 / (b * p) as f64);
        Ok(tape.scalar(loss))
    };

    for epoch in 1..=cfg.max_epochs {
        let (grads, train_loss) = {
            let mut tape = Tape::new();
            let reg = model.regressor.load_params(&mut tape, true);
            let zid = tape.leaf(&[b_tr, l], z_tr.clone(), false);
            let tid = tape.leaf(&[b_tr, p], t_tr.clone(), false);
            let pred = model.regressor.forward_tape(&mut tape, zid, &reg);
            let diff = tape.sub(pred, tid)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum(sq);
            let loss = tape.scale(s, 1.0 / (b_tr * p) as f64);
            tape.backward(loss)?;
            let mut ids = Vec::new();
            for (w, b) in &reg {
                ids.push(*w);
                ids.push(*b);
            }
            let grads: Vec<Vec<f64>> = ids
                .iter()
                .map(|id| tape.grad(*id).map(|g| g.to_vec()))
                .collect::<Result<_, _>>()?;
            let train_loss = tape.scalar(loss);
            (grads, train_loss)
        };
        {
            let mut params = model.regressor.params_mut();
            adam.step(&mut params, &grads);
        }
        let val_loss = probe_loss(model, &z_val, &t_val, b_val)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            recon_loss: 0.0,
            property_loss: train_loss,
            kl_loss: 0.0,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            since_best = 0;
            best_snap = take_snapshot(&model.regressor.params_mut());
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    {
        let mut params = model.regressor.params_mut();
        restore_snapshot(&mut params, &best_snap);
    }
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss: best_val,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::graph::{AtomAlphabet, MolecularGraph};
    use crate::scattering::{diffusion_stacks, featurize_dataset};

    fn tiny_alphabet() -> AtomAlphabet {
        AtomAlphabet::new(["C", "N", "O"])
    }

    fn test_graphs(count: usize) -> Vec<MolecularGraph> {
        let alphabet = tiny_alphabet();
        (0..count)
            .map(|i| {
                let n = 4 + (i % 5);
                let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
                if i % 2 == 0 {
                    edges.push((0, n - 1));
                }
                if i % 3 == 0 && n > 4 {
                    edges.push((1, 3));
                }
                let labels = (0..n).map(|v| (v + i) % 3).collect();
                MolecularGraph::from_edges(n, &edges, labels, &alphabet).unwrap()
            })
            .collect()
    }

    fn test_features(count: usize) -> Array2<f64> {
        let cfg = ScatteringConfig {
            num_scales: 2,
            num_moments: 1,
            ..ScatteringConfig::default()
        };
        featurize_dataset(&test_graphs(count), &tiny_alphabet(), &cfg, None).unwrap()
    }

    fn test_properties(count: usize) -> Array2<f64> {
        let graphs = test_graphs(count);
        let mut out = Array2::zeros((count, 2));
        for (i, g) in graphs.iter().enumerate() {
            out[[i, 0]] = g.n() as f64;
            out[[i, 1]] = g.edges().len() as f64 - g.n() as f64 + 1.0;
        }
        out
    }

    fn small_config(input_dim: usize) -> LatentModelConfig {
        LatentModelConfig {
            latent_dim: 4,
            hidden_dims: vec![12],
            property_names: vec!["nodes".into(), "rings".into()],
            max_epochs: 40,
            patience: 40,
            lr: 5e-3,
            ..LatentModelConfig::new(input_dim)
        }
    }

    #[test]
    fn config_validation_rejects_inconsistencies() {
        let mut cfg = LatentModelConfig::new(10);
        cfg.latent_dim = 10;
        assert!(cfg.validate().is_err());
        cfg.latent_dim = 4;
        cfg.regression_weight = -0.5;
        assert!(cfg.validate().is_err());
        cfg.regression_weight = 1.0;
        cfg.property_names.clear();
        assert!(cfg.validate().is_err());
        cfg.property_names = vec!["a".into()];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn encode_is_deterministic_and_latent_sized() {
        let cfg = small_config(21);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = LatentModel::new(cfg, &mut rng).unwrap();
        let s: Vec<f64> = (0..21).map(|i| i as f64 * 0.1).collect();
        let z1 = model.encode(&s).unwrap();
        let z2 = model.encode(&s).unwrap();
        assert_eq!(z1.len(), 4);
        assert_eq!(z1, z2);
    }

    #[test]
    fn variational_eval_encoding_is_a_pure_function() {
        let cfg = LatentModelConfig {
            variational: true,
            ..small_config(21)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = LatentModel::new(cfg, &mut rng).unwrap();
        assert_eq!(model.encoder.output_dim(), 8);
        let s: Vec<f64> = (0..21).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(model.encode(&s).unwrap(), model.encode(&s).unwrap());
    }

    #[test]
    fn kl_divergence_matches_closed_forms() {
        assert_eq!(kl_divergence(&[0.0], &[0.0], 1), 0.0);
        assert!((kl_divergence(&[1.0], &[0.0], 1) - 0.5).abs() < 1e-15);
        let mu = [0.3, -1.2, 0.7, 0.0];
        let lv = [0.5, -0.3, 0.0, 1.1];
        assert!(kl_divergence(&mu, &lv, 2) >= -1e-12);
    }

    #[test]
    fn reconstruction_loss_rejects_empty_batches() {
        let cfg = small_config(21);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = LatentModel::new(cfg, &mut rng).unwrap();
        let empty = Array2::zeros((0, 21));
        assert!(matches!(
            model.reconstruction_loss(&empty),
            Err(LatentError::EmptyBatch)
        ));
        let x = test_features(12);
        assert!(model.reconstruction_loss(&x).unwrap() >= 0.0);
    }

    #[test]
    fn total_loss_gradient_passes_finite_difference_check() {
        let cfg = LatentModelConfig {
            input_dim: 6,
            latent_dim: 2,
            hidden_dims: vec![5],
            variational: true,
            regression_weight: 0.7,
            kl_weight: 0.05,
            property_names: vec!["p0".into()],
            ..LatentModelConfig::new(6)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = LatentModel::new(cfg, &mut rng).unwrap();
        let batch = 3;
        let x_vals: Vec<f64> = (0..batch * 6).map(|i| ((i as f64) * 0.41).sin()).collect();
        let t_vals: Vec<f64> = (0..batch).map(|i| i as f64 * 0.2 - 0.1).collect();
        let eps_vals: Vec<f64> = (0..batch * 2).map(|i| ((i as f64) * 0.77).cos()).collect();

        let flat: Vec<f64> = {
            let mut all = Vec::new();
            for p in model
                .encoder
                .params()
                .iter()
                .chain(model.decoder.params().iter())
                .chain(model.regressor.params().iter())
            {
                all.extend_from_slice(&p.values);
            }
            all
        };
        let eval = |theta: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut m = model.clone();
            let mut off = 0;
            for p in m
                .encoder
                .params_mut()
                .into_iter()
                .chain(m.decoder.params_mut())
                .chain(m.regressor.params_mut())
            {
                let len = p.values.len();
                p.values.copy_from_slice(&theta[off..off + len]);
                off += len;
            }
            let mut tape = Tape::new();
            let enc = m.encoder.load_params(&mut tape, true);
            let dec = m.decoder.load_params(&mut tape, true);
            let reg = m.regressor.load_params(&mut tape, true);
            let x = tape.leaf(&[batch, 6], x_vals.clone(), false);
            let t = tape.leaf(&[batch, 1], t_vals.clone(), false);
            let eps = tape.leaf(&[batch, 2], eps_vals.clone(), false);
            let parts =
                assemble_loss(&mut tape, &m, &enc, &dec, &reg, x, Some(t), Some(eps), batch)
                    .unwrap();
            let loss = tape.scalar(parts.total);
            if !want_grad {
                return (loss, None);
            }
            tape.backward(parts.total).unwrap();
            let mut g = Vec::new();
            for (w, b) in enc.iter().chain(dec.iter()).chain(reg.iter()) {
                g.extend_from_slice(tape.grad(*w).unwrap());
                g.extend_from_slice(tape.grad(*b).unwrap());
            }
            (loss, Some(g))
        };
        let (_, grad) = eval(&flat, true);
        let err = gradient_check(|th| eval(th, false).0, &flat, &grad.unwrap());
        assert!(err < 1e-4, "total loss gradient error {err}");
    }

    #[test]
    fn plain_ae_training_matches_hand_assembled_reconstruction_loop() {
        let features = test_features(12);
        let dim = features.ncols();
        let cfg = LatentModelConfig {
            input_dim: dim,
            latent_dim: 3,
            hidden_dims: vec![8],
            variational: false,
            regression_weight: 0.0,
            property_names: Vec::new(),
            max_epochs: 15,
            patience: 15,
            lr: 1e-2,
            ..LatentModelConfig::new(dim)
        };
        let seed = 42;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trained = LatentModel::new(cfg.clone(), &mut rng).unwrap();
        let mut reference = trained.clone();
        let props = Array2::zeros((12, 0));
        let report = train(&mut trained, &features, &props, seed).unwrap();

        let split = DataSplit::new(12, seed).unwrap();
        reference.feature_stats = Standardizer::fit(&features, &split.train);
        let x_tr = reference.feature_stats.transform_rows(&features, &split.train);
        let x_val = reference.feature_stats.transform_rows(&features, &split.val);
        let b_tr = split.train.len();
        let b_val = split.val.len();
        let sizes: Vec<usize> = reference
            .encoder
            .params()
            .iter()
            .chain(reference.decoder.params().iter())
            .map(|p| p.values.len())
            .collect();
        let mut adam = Adam::new(cfg.lr, &sizes);
        let mut hand_history = Vec::new();
        for _epoch in 1..=cfg.max_epochs {
            let mut tape = Tape::new();
            let enc = reference.encoder.load_params(&mut tape, true);
            let dec = reference.decoder.load_params(&mut tape, true);
            let x = tape.leaf(&[b_tr, dim], x_tr.clone(), false);
            let code = reference.encoder.forward_tape(&mut tape, x, &enc);
            let recon = reference.decoder.forward_tape(&mut tape, code, &dec);
            let diff = tape.sub(recon, x).unwrap();
            let sq = tape.mul(diff, diff).unwrap();
            let s = tape.sum(sq);
            let loss = tape.scale(s, 1.0 / b_tr as f64);
            tape.backward(loss).unwrap();
            let mut grads = Vec::new();
            for (w, b) in enc.iter().chain(dec.iter()) {
                grads.push(tape.grad(*w).unwrap().to_vec());
                grads.push(tape.grad(*b).unwrap().to_vec());
            }
            let train_loss = tape.scalar(loss);
            let mut params: Vec<&mut ParamTensor> = reference.encoder.params_mut();
            params.extend(reference.decoder.params_mut());
            adam.step(&mut params, &grads);

            let mut vtape = Tape::new();
            let enc = reference.encoder.load_params(&mut vtape, false);
            let dec = reference.decoder.load_params(&mut vtape, false);
            let xv = vtape.leaf(&[b_val, dim], x_val.clone(), false);
            let code = reference.encoder.forward_tape(&mut vtape, xv, &enc);
            let recon = reference.decoder.forward_tape(&mut vtape, code, &dec);
            let diffv = vtape.sub(recon, xv).unwrap();
            let sqv = vtape.mul(diffv, diffv).unwrap();
            let sv = vtape.sum(sqv);
            let lossv = vtape.scale(sv, 1.0 / b_val as f64);
            hand_history.push((train_loss, vtape.scalar(lossv)));
        }
        assert_eq!(report.history.len(), hand_history.len());
        for (got, want) in report.history.iter().zip(&hand_history) {
            assert_eq!(got.train_loss.to_bits(), want.0.to_bits());
            assert_eq!(got.val_loss.to_bits(), want.1.to_bits());
        }
    }

    #[test]
    fn training_is_deterministic_under_a_fixed_seed() {
        let features = test_features(14);
        let props = test_properties(14);
        let cfg = LatentModelConfig {
            variational: true,
            max_epochs: 10,
            ..small_config(features.ncols())
        };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut model = LatentModel::new(cfg.clone(), &mut rng).unwrap();
            train(&mut model, &features, &props, seed).unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
            assert_eq!(x.val_loss.to_bits(), y.val_loss.to_bits());
        }
    }

    #[test]
    fn best_checkpoint_tracks_running_minimum_of_val_loss() {
        let features = test_features(14);
        let props = test_properties(14);
        let cfg = small_config(features.ncols());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        let report = train(&mut model, &features, &props, 8).unwrap();
        let mut best = f64::INFINITY;
        for e in &report.history {
            best = best.min(e.val_loss);
        }
        assert_eq!(report.best_val_loss, best);
        let best_in_history = report
            .history
            .iter()
            .find(|e| e.epoch == report.best_epoch)
            .unwrap();
        assert_eq!(best_in_history.val_loss, best);
    }

    #[test]
    fn sustained_training_shrinks_reconstruction_loss() {
        let features = test_features(16);
        let cfg = LatentModelConfig {
            latent_dim: 6,
            hidden_dims: vec![16],
            regression_weight: 0.0,
            property_names: Vec::new(),
            max_epochs: 200,
            patience: 200,
            lr: 5e-3,
            ..LatentModelConfig::new(features.ncols())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        let props = Array2::zeros((16, 0));
        let report = train(&mut model, &features, &props, 4).unwrap();
        let first = report.history.first().unwrap().recon_loss;
        let last = report.history.last().unwrap().recon_loss;
        assert!(
            last < 0.1 * first,
            "reconstruction loss {last} vs initial {first}"
        );
    }

    #[test]
    fn constant_property_is_learned_to_near_zero_error() {
        let features = test_features(12);
        let n = features.nrows();
        let props = Array2::from_elem((n, 1), 3.25);
        let cfg = LatentModelConfig {
            latent_dim: 3,
            hidden_dims: vec![8],
            property_names: vec!["const".into()],
            max_epochs: 60,
            patience: 60,
            lr: 1e-2,
            ..LatentModelConfig::new(features.ncols())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        train(&mut model, &features, &props, 2).unwrap();
        let row = features.row(0).to_vec();
        let pred = model.predict_properties(&row).unwrap();
        assert!((pred[0] - 3.25).abs() < 0.2, "predicted {}", pred[0]);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_encodings_exactly() {
        let features = test_features(12);
        let props = test_properties(12);
        let cfg = small_config(features.ncols());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        let report = train(&mut model, &features, &props, 6).unwrap();
        let blob = model.params_blob();
        let manifest = model.manifest(report.best_epoch, report.best_val_loss);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: LatentManifest = serde_json::from_str(&json).unwrap();
        let restored = LatentModel::from_parts(&back, &blob).unwrap();
        let row = features.row(3).to_vec();
        let z1 = model.encode(&row).unwrap();
        let z2 = restored.encode(&row).unwrap();
        for (a, b) in z1.iter().zip(&z2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let p1 = model.predict_properties(&row).unwrap();
        let p2 = restored.predict_properties(&row).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn split_is_disjoint_and_sized_80_10_10() {
        let split = DataSplit::new(10, 0).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.val.len(), 1);
        assert_eq!(split.test.len(), 1);
        let split = DataSplit::new(64, 123).unwrap();
        assert_eq!(split.val.len(), 6);
        assert_eq!(split.test.len(), 6);
        assert_eq!(split.train.len(), 52);
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .cloned()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        assert!(matches!(
            DataSplit::new(9, 0),
            Err(LatentError::DatasetTooSmall { got: 9, min: 10 })
        ));
    }

    #[test]
    fn regressor_probe_beats_mean_baseline_on_varying_property() {
        let features = test_features(20);
        let props = test_properties(20);
        let cfg = LatentModelConfig {
            regression_weight: 0.0,
            max_epochs: 120,
            patience: 120,
            ..small_config(features.ncols())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        let empty = Array2::zeros((20, 0));
        train(&mut model, &features, &empty, 11).unwrap();
        let report = fit_regressor(&mut model, &features, &props, 11).unwrap();
        let test_rows = &report.split.test;
        let mut test_feats = Array2::zeros((test_rows.len(), features.ncols()));
        let mut test_props = Array2::zeros((test_rows.len(), 2));
        for (k, &i) in test_rows.iter().enumerate() {
            test_feats.row_mut(k).assign(&features.row(i));
            test_props.row_mut(k).assign(&props.row(i));
        }
        let mae = model.property_mae(&test_feats, &test_props).unwrap();
        assert_eq!(mae.len(), 2);
        assert!(mae.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn joint_selector_training_moves_the_selector() {
        let graphs = test_graphs(12);
        let alphabet = tiny_alphabet();
        let scattering_cfg = ScatteringConfig {
            num_scales: 2,
            num_moments: 1,
            max_power: 4,
            mode: crate::scattering::ScatteringMode::Learned,
            ..ScatteringConfig::default()
        };
        let stacks: Vec<DiffusionStacks> = graphs
            .iter()
            .map(|g| diffusion_stacks(g, &alphabet, scattering_cfg.max_power))
            .collect();
        let dim = crate::scattering::feature_dimension(&scattering_cfg, alphabet.len());
        let cfg = LatentModelConfig {
            latent_dim: 3,
            hidden_dims: vec![8],
            regression_weight: 0.0,
            property_names: Vec::new(),
            max_epochs: 5,
            patience: 5,
            lr: 1e-2,
            ..LatentModelConfig::new(dim)
        };
        let big = 50.0;
        let mut logits = ParamTensor::zeros("selector.logits", vec![3, 5]);
        for k in 0..3 {
            logits.values[k * 5 + (1 << k).min(4)] = big;
        }
        let init = logits.values.clone();
        let run = |logits_init: &ParamTensor| {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let mut model = LatentModel::new(cfg.clone(), &mut rng).unwrap();
            let mut lg = logits_init.clone();
            let props = Array2::zeros((12, 0));
            let report = train_with_selector(
                &mut model,
                &stacks,
                &scattering_cfg,
                &mut lg,
                &props,
                19,
            )
            .unwrap();
            (lg, report)
        };
        let (trained, report) = run(&logits);
        assert!(trained.values.iter().zip(&init).any(|(a, b)| a != b));
        let (trained2, report2) = run(&logits);
        assert_eq!(trained.values, trained2.values);
        assert_eq!(report.history.len(), report2.history.len());
        for (x, y) in report.history.iter().zip(&report2.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }
}
