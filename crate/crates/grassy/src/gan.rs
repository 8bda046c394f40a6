//! Latent-interpolation adversarial generator.
//!
//! The generator M maps a latent vector to upper-triangle edge logits,
//! which a sigmoid and symmetrization turn into a soft adjacency matrix
//! with zero diagonal. Training walks latent segments
//! `z(alpha) = (1 - alpha) z_i + alpha z_j` sampled between encoded
//! training graphs and minimizes three terms: endpoint adjacency
//! reconstruction (Frobenius distance at alpha = 0 and 1), an adversarial
//! term summed over the K+1 trajectory points against a GCN discriminator,
//! and a trajectory-smoothness term on the frozen decoder's outputs (a
//! forward-difference estimate of the derivative of decoded moments along
//! alpha). The discriminator trains alternately with binary cross-entropy
//! on real padded adjacencies versus generated interpolants.
//!
//! The smoothness term depends only on the frozen autoencoder and the
//! (constant) trajectory, so it contributes no generator gradient under
//! this training split; it is still assembled on the tape so histories
//! report it and so composite-loss gradients can be checked against finite
//! differences with the latent endpoints as leaves.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{upper_index, AutodiffError, Tape, TensorId};
use crate::graph::{GraphError, MolecularGraph, MAX_NODES};
use crate::latent::{LatentError, LatentModel};
use crate::nn::{
    load_params, restore_params, save_params, standard_normal, Activation, Adam, Mlp, NnError,
    ParamTensor,
};

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("graph has {n} nodes, exceeding the padded size {n_max}")]
    GraphTooLarge { n: usize, n_max: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset has {got} graphs, adversarial training needs at least {min}")]
    DatasetTooSmall { got: usize, min: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Generator/discriminator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Padded graph size; every training graph must fit. 0 in a run
    /// config means "derive from the dataset".
    #[serde(default)]
    pub n_max: usize,
    /// Latent dimensionality of the frozen autoencoder. 0 in a run
    /// config means "derive from the autoencoder".
    #[serde(default)]
    pub latent_dim: usize,
    /// Interpolation steps K; trajectories have K+1 points.
    #[serde(default = "default_steps_k")]
    pub interpolation_steps: usize,
    #[serde(default = "default_w_adjacency")]
    pub w_adjacency: f64,
    #[serde(default = "default_w_small")]
    pub w_adversarial: f64,
    #[serde(default = "default_w_small")]
    pub w_smoothness: f64,
    #[serde(default = "default_generator_hidden")]
    pub generator_hidden: Vec<usize>,
    #[serde(default = "default_discriminator_hidden")]
    pub discriminator_hidden: usize,
    /// Edge threshold used when discretizing generated adjacencies.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Latent perturbation scale for sampling.
    #[serde(default = "default_sigma")]
    pub perturb_sigma: f64,
    /// Alternating training steps.
    #[serde(default = "default_train_steps")]
    pub train_steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_steps_k() -> usize {
    8
}
fn default_w_adjacency() -> f64 {
    1.0
}
fn default_w_small() -> f64 {
    0.1
}
fn default_generator_hidden() -> Vec<usize> {
    vec![128]
}
fn default_discriminator_hidden() -> usize {
    16
}
fn default_threshold() -> f64 {
    0.5
}
fn default_sigma() -> f64 {
    0.1
}
fn default_train_steps() -> usize {
    500
}
fn default_lr() -> f64 {
    1e-3
}

impl GeneratorConfig {
    pub fn new(n_max: usize, latent_dim: usize) -> Self {
        Self {
            n_max,
            latent_dim,
            interpolation_steps: default_steps_k(),
            w_adjacency: default_w_adjacency(),
            w_adversarial: default_w_small(),
            w_smoothness: default_w_small(),
            generator_hidden: default_generator_hidden(),
            discriminator_hidden: default_discriminator_hidden(),
            threshold: default_threshold(),
            perturb_sigma: default_sigma(),
            train_steps: default_train_steps(),
            lr: default_lr(),
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        if self.n_max < 2 || self.n_max > MAX_NODES {
            return Err(GanError::InvalidConfig(format!(
                "n_max must be in 2..={MAX_NODES}, got {}",
                self.n_max
            )));
        }
        if self.latent_dim == 0 {
            return Err(GanError::InvalidConfig("latent_dim must be >= 1".into()));
        }
        if self.interpolation_steps == 0 {
            return Err(GanError::InvalidConfig(
                "interpolation_steps must be >= 1".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(GanError::InvalidConfig(format!(
                "threshold must lie strictly inside (0, 1), got {}",
                self.threshold
            )));
        }
        if self.w_adjacency < 0.0 || self.w_adversarial < 0.0 || self.w_smoothness < 0.0 {
            return Err(GanError::InvalidConfig(
                "loss weights must be >= 0".into(),
            ));
        }
        if self.perturb_sigma < 0.0 {
            return Err(GanError::InvalidConfig("perturb_sigma must be >= 0".into()));
        }
        if self.train_steps == 0 {
            return Err(GanError::InvalidConfig("train_steps must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(GanError::InvalidConfig("lr must be > 0".into()));
        }
        if self.discriminator_hidden == 0 {
            return Err(GanError::InvalidConfig(
                "discriminator_hidden must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Upper-triangle logit count for the padded size.
    pub fn edge_slots(&self) -> usize {
        self.n_max * (self.n_max - 1) / 2
    }
}

/// Two GCN layers over the normalized soft adjacency, mean-pooled into a
/// sigmoid scalar head.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    pub w_head: ParamTensor,
    pub b_head: ParamTensor,
}

/// Tape ids of one loaded discriminator parameter set.
#[derive(Debug, Clone, Copy)]
pub struct GcnParams {
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    w_head: TensorId,
    b_head: TensorId,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl Gcn {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: ParamTensor::new("disc.1.w", vec![1, hidden], glorot(rng, 1, hidden, hidden)),
            b1: ParamTensor::zeros("disc.1.b", vec![hidden]),
            w2: ParamTensor::new(
                "disc.2.w",
                vec![hidden, hidden],
                glorot(rng, hidden, hidden, hidden * hidden),
            ),
            b2: ParamTensor::zeros("disc.2.b", vec![hidden]),
            w_head: ParamTensor::new(
                "disc.head.w",
                vec![hidden, 1],
                glorot(rng, hidden, 1, hidden),
            ),
            b_head: ParamTensor::zeros("disc.head.b", vec![1]),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w_head,
            &self.b_head,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_head,
            &mut self.b_head,
        ]
    }

    /// Zeroes the scalar head, pinning the output to exactly 0.5 for every
    /// input; used to realize constant-discriminator closed forms.
    pub fn zero_head(&mut self) {
        self.w_head.values.iter_mut().for_each(|v| *v = 0.0);
        self.b_head.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn load_params(&self, tape: &mut Tape, requires_grad: bool) -> GcnParams {
        let mut load = |p: &ParamTensor| tape.leaf(&p.shape, p.values.clone(), requires_grad);
        GcnParams {
            w1: load(&self.w1),
            b1: load(&self.b1),
            w2: load(&self.w2),
            b2: load(&self.b2),
            w_head: load(&self.w_head),
            b_head: load(&self.b_head),
        }
    }

    /// Discriminator score in (0, 1) for an [n, n] soft adjacency on the
    /// tape. Renormalizes with self-loops, propagates soft degrees through
    /// two convolution layers, mean-pools, and applies the sigmoid head.
    pub fn forward_tape(&self, tape: &mut Tape, w_hat: TensorId, p: &GcnParams) -> TensorId {
        let n = tape.shape(w_hat)[0];
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let identity = tape.leaf(&[n, n], eye, false);
        let with_loops = tape.add(w_hat, identity).expect("same shape");
        let ones = tape.leaf(&[n, 1], vec![1.0; n], false);
        let deg = tape.matmul(with_loops, ones).expect("column of degrees");
        let log_deg = tape.log(deg);
        let half_neg = tape.scale(log_deg, -0.5);
        let d_col = tape.exp(half_neg);
        let d_row = tape.reshape(d_col, &[1, n]).expect("same length");
        let outer = tape.matmul(d_col, d_row).expect("outer product");
        let a_hat = tape.mul(outer, with_loops).expect("same shape");
        let soft_deg = tape.matmul(w_hat, ones).expect("soft degrees");
        let h1 = {
            let hw = tape.matmul(soft_deg, p.w1).expect("feature lift");
            let prop = tape.matmul(a_hat, hw).expect("propagate");
            let z = tape.add_bias(prop, p.b1).expect("bias");
            tape.relu(z)
        };
        let h2 = {
            let hw = tape.matmul(h1, p.w2).expect("hidden transform");
            let prop = tape.matmul(a_hat, hw).expect("propagate");
            let z = tape.add_bias(prop, p.b2).expect("bias");
            tape.relu(z)
        };
        let pool_row = tape.leaf(&[1, n], vec![1.0 / n as f64; n], false);
        let pooled = tape.matmul(pool_row, h2).expect("mean pool");
        let logit = tape.matmul(pooled, p.w_head).expect("head");
        let logit = tape.add_bias(logit, p.b_head).expect("head bias");
        tape.sigmoid(logit)
    }

    /// Frozen score of an [n, n] soft adjacency.
    pub fn score(&self, w_hat: &Array2<f64>) -> f64 {
        let mut tape = Tape::new();
        let ids = self.load_params(&mut tape, false);
        let n = w_hat.nrows();
        let w = tape.leaf(&[n, n], w_hat.iter().cloned().collect(), false);
        let out = self.forward_tape(&mut tape, w, &ids);
        tape.scalar(out)
    }
}

/// Generator M plus discriminator D.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub generator: Mlp,
    pub discriminator: Gcn,
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self, GanError> {
        config.validate()?;
        let mut dims = Vec::with_capacity(config.generator_hidden.len() + 2);
        dims.push(config.latent_dim);
        dims.extend_from_slice(&config.generator_hidden);
        dims.push(config.edge_slots());
        let generator = Mlp::new(&dims, Activation::Relu, "gen", rng);
        let discriminator = Gcn::new(config.discriminator_hidden, rng);
        Ok(Self {
            config,
            generator,
            discriminator,
        })
    }

    /// Soft adjacency for one latent vector: sigmoid of upper-triangle
    /// logits, mirrored, zero diagonal.
    pub fn generate_adjacency(&self, z: &[f64]) -> Result<Array2<f64>, GanError> {
        if z.len() != self.config.latent_dim {
            return Err(GanError::DimensionMismatch {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        let logits = self.generator.forward(z, 1);
        let n = self.config.n_max;
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let p = 1.0 / (1.0 + (-logits[upper_index(i, j, n)]).exp());
                w[[i, j]] = p;
                w[[j, i]] = p;
            }
        }
        Ok(w)
    }

    /// Tape twin of [`generate_adjacency`]: latent row in, [n, n] soft
    /// adjacency out.
    pub fn generate_adjacency_tape(
        &self,
        tape: &mut Tape,
        z: TensorId,
        gen_params: &[(TensorId, TensorId)],
    ) -> Result<TensorId, GanError> {
        let n = self.config.n_max;
        let logits = self.generator.forward_tape(tape, z, gen_params);
        let m = self.config.edge_slots();
        let flat = tape.reshape(logits, &[m])?;
        let probs = tape.sigmoid(flat);
        Ok(tape.sym_from_upper(probs, n)?)
    }

    /// Serialized generator + discriminator parameters.
    pub fn params_blob(&self) -> Vec<u8> {
        let mut all = self.generator.params();
        all.extend(self.discriminator.params());
        save_params(&all)
    }

    pub fn from_parts(manifest: &GanManifest, blob: &[u8]) -> Result<Self, GanError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = GeneratorModel::new(manifest.config.clone(), &mut rng)?;
        let loaded = load_params(blob)?;
        let mut targets: Vec<&mut ParamTensor> = model.generator.params_mut();
        targets.extend(model.discriminator.params_mut());
        restore_params(&mut targets, &loaded)?;
        Ok(model)
    }

    pub fn manifest(&self, steps_trained: usize) -> GanManifest {
        GanManifest {
            config: self.config.clone(),
            steps_trained,
        }
    }
}

/// JSON sidecar describing a saved generator checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanManifest {
    pub config: GeneratorConfig,
    pub steps_trained: usize,
}

/// Convex combination `(1 - alpha) z_i + alpha z_j`; the endpoints return
/// the inputs bit-for-bit.
pub fn interpolate(z_i: &[f64], z_j: &[f64], alpha: f64) -> Result<Vec<f64>, GanError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GanError::AlphaOutOfRange(alpha));
    }
    if z_i.len() != z_j.len() {
        return Err(GanError::DimensionMismatch {
            expected: z_i.len(),
            got: z_j.len(),
        });
    }
    if alpha == 0.0 {
        return Ok(z_i.to_vec());
    }
    if alpha == 1.0 {
        return Ok(z_j.to_vec());
    }
    Ok(z_i
        .iter()
        .zip(z_j)
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect())
}

/// The K+1 trajectory points as [1, latent] tensors built from latent
/// endpoints already on the tape, so gradients reach `z_i` and `z_j`.
pub fn trajectory_tape(
    tape: &mut Tape,
    z_i: TensorId,
    z_j: TensorId,
    k_steps: usize,
) -> Result<Vec<TensorId>, GanError> {
    let mut points = Vec::with_capacity(k_steps + 1);
    for k in 0..=k_steps {
        let alpha = k as f64 / k_steps as f64;
        let a = tape.scale(z_i, 1.0 - alpha);
        let b = tape.scale(z_j, alpha);
        points.push(tape.add(a, b)?);
    }
    Ok(points)
}

/// Endpoint adjacency reconstruction: Frobenius distances (not squared)
/// between the padded targets and the generated endpoints.
pub fn loss_adjacency(
    tape: &mut Tape,
    w_hat_i: TensorId,
    w_hat_j: TensorId,
    w_pad_i: TensorId,
    w_pad_j: TensorId,
) -> Result<TensorId, GanError> {
    let di = tape.sub(w_pad_i, w_hat_i)?;
    let ni = tape.frobenius_norm(di);
    let dj = tape.sub(w_pad_j, w_hat_j)?;
    let nj = tape.frobenius_norm(dj);
    Ok(tape.add(ni, nj)?)
}

/// Generator-side adversarial term: sum over trajectory points of
/// `-log D(W_hat)`, with scores clamped away from 0 and 1.
pub fn loss_adversarial(tape: &mut Tape, scores: &[TensorId]) -> Result<TensorId, GanError> {
    if scores.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    let mut total: Option<TensorId> = None;
    for &s in scores {
        let safe = tape.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let lg = tape.log(safe);
        let neg = tape.scale(lg, -1.0);
        total = Some(match total {
            Some(t) => tape.add(t, neg)?,
            None => neg,
        });
    }
    Ok(tape.sum(total.expect("nonempty scores")))
}

/// Trajectory smoothness of decoded moments: squared forward differences
/// of `F(z(alpha))` scaled by K, summed over the K segments.
pub fn loss_smoothness(
    tape: &mut Tape,
    decoder: &Mlp,
    dec_params: &[(TensorId, TensorId)],
    trajectory: &[TensorId],
) -> Result<TensorId, GanError> {
    let k_steps = trajectory.len() - 1;
    let decoded: Vec<TensorId> = trajectory
        .iter()
        .map(|&z| decoder.forward_tape(tape, z, dec_params))
        .collect();
    let mut total: Option<TensorId> = None;
    for k in 0..k_steps {
        let diff = tape.sub(decoded[k + 1], decoded[k])?;
        let scaled = tape.scale(diff, k_steps as f64);
        let sq = tape.mul(scaled, scaled)?;
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    Ok(total.expect("K >= 1"))
}

/// Discriminator objective: mean binary cross-entropy with real padded
/// adjacencies labeled 1 and generated interpolants labeled 0.
pub fn discriminator_loss(
    tape: &mut Tape,
    real_scores: &[TensorId],
    fake_scores: &[TensorId],
) -> Result<TensorId, GanError> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(GanError::EmptyBatch);
    }
    let mut real_term: Option<TensorId> = None;
    for &s in real_scores {
        let safe = tape.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let lg = tape.log(safe);
        real_term = Some(match real_term {
            Some(t) => tape.add(t, lg)?,
            None => lg,
        });
    }
    let mut fake_term: Option<TensorId> = None;
    for &s in fake_scores {
        let safe = tape.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP);
        let shape = tape.shape(safe).to_vec();
        let len: usize = shape.iter().product::<usize>().max(1);
        let one = tape.leaf(&shape, vec![1.0; len], false);
        let inv = tape.sub(one, safe)?;
        let lg = tape.log(inv);
        fake_term = Some(match fake_term {
            Some(t) => tape.add(t, lg)?,
            None => lg,
        });
    }
    let real_mean = tape.scale(real_term.expect("nonempty"), -1.0 / real_scores.len() as f64);
    let fake_mean = tape.scale(fake_term.expect("nonempty"), -1.0 / fake_scores.len() as f64);
    let sum = tape.add(real_mean, fake_mean)?;
    let halved = tape.scale(sum, 0.5);
    Ok(tape.sum(halved))
}

/// Per-step training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanStepStats {
    pub step: usize,
    pub d_loss: f64,
    pub g_total: f64,
    pub adjacency: f64,
    pub adversarial: f64,
    pub smoothness: f64,
}

fn padded_rows(graphs: &[MolecularGraph], n_max: usize) -> Result<Vec<Vec<f64>>, GanError> {
    graphs
        .iter()
        .map(|g| {
            if g.n() > n_max {
                return Err(GanError::GraphTooLarge {
                    n: g.n(),
                    n_max,
                });
            }
            let padded = g.pad_adjacency(n_max)?;
            Ok(padded.iter().cloned().collect())
        })
        .collect()
}

fn distinct_pair(rng: &mut impl Rng, n: usize) -> (usize, usize) {
    let i = rng.gen_range(0..n);
    let mut j = rng.gen_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Alternating discriminator/generator training against a frozen
/// autoencoder. Each step samples one latent segment between two distinct
/// encoded training graphs; the discriminator sees the pair's real padded
/// adjacencies versus the generated trajectory, then the generator takes a
/// composite-loss step. Deterministic for a fixed seed.
pub fn train_gan(
    config: GeneratorConfig,
    latent: &LatentModel,
    graphs: &[MolecularGraph],
    features: &Array2<f64>,
    seed: u64,
) -> Result<(GeneratorModel, Vec<GanStepStats>), GanError> {
    config.validate()?;
    if graphs.len() < 2 {
        return Err(GanError::DatasetTooSmall {
            got: graphs.len(),
            min: 2,
        });
    }
    if config.latent_dim != latent.config.latent_dim {
        return Err(GanError::DimensionMismatch {
            expected: latent.config.latent_dim,
            got: config.latent_dim,
        });
    }
    let n_max = config.n_max;
    let k_steps = config.interpolation_steps;
    let pads = padded_rows(graphs, n_max)?;
    let z_all = latent.encode_matrix(features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GeneratorModel::new(config.clone(), &mut rng)?;

    let d_sizes: Vec<usize> = model
        .discriminator
        .params()
        .iter()
        .map(|p| p.values.len())
        .collect();
    let g_sizes: Vec<usize> = model
        .generator
        .params()
        .iter()
        .map(|p| p.values.len())
        .collect();
    let mut d_adam = Adam::new(config.lr, &d_sizes);
    let mut g_adam = Adam::new(config.lr, &g_sizes);
    let mut history = Vec::with_capacity(config.train_steps);

    for step in 1..=config.train_steps {
        let (i, j) = distinct_pair(&mut rng, graphs.len());
        let z_i = z_all.row(i).to_vec();
        let z_j = z_all.row(j).to_vec();
        let traj_vals: Vec<Vec<f64>> = (0..=k_steps)
            .map(|k| interpolate(&z_i, &z_j, k as f64 / k_steps as f64))
            .collect::<Result<_, _>>()?;

        let d_loss = {
            let mut tape = Tape::new();
            let d_ids = model.discriminator.load_params(&mut tape, true);
            let g_ids = model.generator.load_params(&mut tape, false);
            let fake_scores: Vec<TensorId> = traj_vals
                .iter()
                .map(|z| {
                    let zid = tape.leaf(&[1, config.latent_dim], z.clone(), false);
                    let w_hat = model.generate_adjacency_tape(&mut tape, zid, &g_ids)?;
                    Ok(model.discriminator.forward_tape(&mut tape, w_hat, &d_ids))
                })
                .collect::<Result<_, GanError>>()?;
            let real_scores: Vec<TensorId> = [i, j]
                .iter()
                .map(|&idx| {
                    let w = tape.leaf(&[n_max, n_max], pads[idx].clone(), false);
                    model.discriminator.forward_tape(&mut tape, w, &d_ids)
                })
                .collect();
            let loss = discriminator_loss(&mut tape, &real_scores, &fake_scores)?;
            tape.backward(loss)?;
            let ids = [d_ids.w1, d_ids.b1, d_ids.w2, d_ids.b2, d_ids.w_head, d_ids.b_head];
            let grads: Vec<Vec<f64>> = ids
                .iter()
                .map(|id| tape.grad(*id).map(|g| g.to_vec()))
                .collect::<Result<_, _>>()?;
            let mut params = model.discriminator.params_mut();
            d_adam.step(&mut params, &grads);
            tape.scalar(loss)
        };

        let (g_total, l_m, l_a, l_s) = {
            let mut tape = Tape::new();
            let d_ids = model.discriminator.load_params(&mut tape, false);
            let g_ids = model.generator.load_params(&mut tape, true);
            let dec_ids = latent.decoder.load_params(&mut tape, false);
            let zi = tape.leaf(&[1, config.latent_dim], z_i.clone(), false);
            let zj = tape.leaf(&[1, config.latent_dim], z_j.clone(), false);
            let traj = trajectory_tape(&mut tape, zi, zj, k_steps)?;
            let w_hats: Vec<TensorId> = traj
                .iter()
                .map(|&z| model.generate_adjacency_tape(&mut tape, z, &g_ids))
                .collect::<Result<_, _>>()?;
            let w_pad_i = tape.leaf(&[n_max, n_max], pads[i].clone(), false);
            let w_pad_j = tape.leaf(&[n_max, n_max], pads[j].clone(), false);
            let l_m = loss_adjacency(
                &mut tape,
                w_hats[0],
                w_hats[k_steps],
                w_pad_i,
                w_pad_j,
            )?;
            let scores: Vec<TensorId> = w_hats
                .iter()
                .map(|&w| model.discriminator.forward_tape(&mut tape, w, &d_ids))
                .collect();
            let l_a = loss_adversarial(&mut tape, &scores)?;
            let l_s = loss_smoothness(&mut tape, &latent.decoder, &dec_ids, &traj)?;
            let wm = tape.scale(l_m, config.w_adjacency);
            let wa = tape.scale(l_a, config.w_adversarial);
            let ws = tape.scale(l_s, config.w_smoothness);
            let partial = tape.add(wm, wa)?;
            let total = tape.add(partial, ws)?;
            tape.backward(total)?;
            let grads: Vec<Vec<f64>> = g_ids
                .iter()
                .flat_map(|(w, b)| [*w, *b])
                .map(|id| tape.grad(id).map(|g| g.to_vec()))
                .collect::<Result<_, _>>()?;
            let mut params = model.generator.params_mut();
            g_adam.step(&mut params, &grads);
            (
                tape.scalar(total),
                tape.scalar(l_m),
                tape.scalar(l_a),
                tape.scalar(l_s),
            )
        };

        history.push(GanStepStats {
            step,
            d_loss,
            g_total,
            adjacency: l_m,
            adversarial: l_a,
            smoothness: l_s,
        });
    }
    Ok((model, history))
}

/// How a sample's latent code was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SampleProvenance {
    /// Gaussian perturbation of one encoded training graph.
    Perturbation { source_index: usize, sigma: f64 },
    /// Interpolation between two encoded training graphs.
    Interpolation {
        source_i: usize,
        source_j: usize,
        alpha: f64,
    },
}

/// One generated soft adjacency with its provenance.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample_id: usize,
    pub provenance: SampleProvenance,
    pub soft_adjacency: Array2<f64>,
}

/// Latent sampling strategy for generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Perturb,
    Interpolate,
}

/// Draws `count` soft adjacencies from the trained generator, seeding the
/// latent codes from encoded training graphs either by Gaussian
/// perturbation (scale `config.perturb_sigma`) or by uniform-alpha
/// interpolation between random pairs.
pub fn sample_molecules(
    model: &GeneratorModel,
    latent: &LatentModel,
    features: &Array2<f64>,
    count: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<GeneratedSample>, GanError> {
    if features.nrows() == 0 && count > 0 {
        return Err(GanError::EmptyBatch);
    }
    if mode == SampleMode::Interpolate && features.nrows() < 2 && count > 0 {
        return Err(GanError::DatasetTooSmall {
            got: features.nrows(),
            min: 2,
        });
    }
    let z_all = latent.encode_matrix(features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for sample_id in 0..count {
        let (z, provenance) = match mode {
            SampleMode::Perturb => {
                let idx = rng.gen_range(0..z_all.nrows());
                let sigma = model.config.perturb_sigma;
                let z: Vec<f64> = z_all
                    .row(idx)
                    .iter()
                    .map(|v| v + sigma * standard_normal(&mut rng))
                    .collect();
                (
                    z,
                    SampleProvenance::Perturbation {
                        source_index: idx,
                        sigma,
                    },
                )
            }
            SampleMode::Interpolate => {
                let (i, j) = distinct_pair(&mut rng, z_all.nrows());
                let alpha: f64 = rng.gen();
                let z = interpolate(&z_all.row(i).to_vec(), &z_all.row(j).to_vec(), alpha)?;
                (
                    z,
                    SampleProvenance::Interpolation {
                        source_i: i,
                        source_j: j,
                        alpha,
                    },
                )
            }
        };
        let soft_adjacency = model.generate_adjacency(&z)?;
        out.push(GeneratedSample {
            sample_id,
            provenance,
            soft_adjacency,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use crate::graph::AtomAlphabet;
    use crate::latent::{train, LatentModelConfig};
    use crate::scattering::{featurize_dataset, ScatteringConfig};

    fn tiny_alphabet() -> AtomAlphabet {
        AtomAlphabet::new(["C", "N", "O"])
    }

    fn test_graphs(count: usize) -> Vec<MolecularGraph> {
        let alphabet = tiny_alphabet();
        (0..count)
            .map(|i| {
                let n = 4 + (i % 3);
                let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
                if i % 2 == 0 {
                    edges.push((0, n - 1));
                }
                let labels = (0..n).map(|v| (v + i) % 3).collect();
                MolecularGraph::from_edges(n, &edges, labels, &alphabet).unwrap()
            })
            .collect()
    }

    fn trained_latent(features: &Array2<f64>) -> LatentModel {
        let cfg = LatentModelConfig {
            latent_dim: 3,
            hidden_dims: vec![8],
            regression_weight: 0.0,
            property_names: Vec::new(),
            max_epochs: 5,
            patience: 5,
            ..LatentModelConfig::new(features.ncols())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = LatentModel::new(cfg, &mut rng).unwrap();
        let props = Array2::zeros((features.nrows(), 0));
        train(&mut model, features, &props, 7).unwrap();
        model
    }

    fn test_features(graphs: &[MolecularGraph]) -> Array2<f64> {
        let cfg = ScatteringConfig {
            num_scales: 2,
            num_moments: 1,
            ..ScatteringConfig::default()
        };
        featurize_dataset(graphs, &tiny_alphabet(), &cfg, None).unwrap()
    }

    #[test]
    fn interpolation_endpoints_are_bitwise_inputs() {
        let z_i = vec![0.1, -0.0, 3.5e-12];
        let z_j = vec![-7.25, 2.0, 1.0];
        let at0 = interpolate(&z_i, &z_j, 0.0).unwrap();
        let at1 = interpolate(&z_i, &z_j, 1.0).unwrap();
        for (a, b) in at0.iter().zip(&z_i) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in at1.iter().zip(&z_j) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mid = interpolate(&[0.0, 2.0], &[2.0, 0.0], 0.5).unwrap();
        assert_eq!(mid, vec![1.0, 1.0]);
        assert!(matches!(
            interpolate(&z_i, &z_j, 1.5),
            Err(GanError::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            interpolate(&z_i, &[1.0], 0.5),
            Err(GanError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generated_adjacency_is_symmetric_open_unit_zero_diagonal() {
        let cfg = GeneratorConfig::new(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = GeneratorModel::new(cfg, &mut rng).unwrap();
        let z = vec![0.3, -1.0, 0.5];
        let w = model.generate_adjacency(&z).unwrap();
        let w2 = model.generate_adjacency(&z).unwrap();
        assert_eq!(w, w2);
        for i in 0..5 {
            assert_eq!(w[[i, i]], 0.0);
            for j in 0..5 {
                assert_eq!(w[[i, j]], w[[j, i]]);
                if i != j {
                    assert!(w[[i, j]] > 0.0 && w[[i, j]] < 1.0);
                }
            }
        }
        assert!(matches!(
            model.generate_adjacency(&[1.0, 2.0]),
            Err(GanError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tape_and_frozen_generation_agree_bitwise() {
        let cfg = GeneratorConfig::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = GeneratorModel::new(cfg, &mut rng).unwrap();
        let z = vec![0.7, -0.2];
        let frozen = model.generate_adjacency(&z).unwrap();
        let mut tape = Tape::new();
        let g_ids = model.generator.load_params(&mut tape, false);
        let zid = tape.leaf(&[1, 2], z.clone(), false);
        let w = model.generate_adjacency_tape(&mut tape, zid, &g_ids).unwrap();
        for (a, b) in frozen.iter().zip(tape.values(w)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adjacency_loss_matches_hand_computed_frobenius_distance() {
        let mut tape = Tape::new();
        let half_off_diag = {
            let mut v = vec![0.5; 9];
            v[0] = 0.0;
            v[4] = 0.0;
            v[8] = 0.0;
            v
        };
        let w_hat_i = tape.leaf(&[3, 3], half_off_diag.clone(), false);
        let w_hat_j = tape.leaf(&[3, 3], half_off_diag, false);
        let k2_padded = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let w_i = tape.leaf(&[3, 3], k2_padded.clone(), false);
        let w_j = tape.leaf(&[3, 3], k2_padded, false);
        let loss = loss_adjacency(&mut tape, w_hat_i, w_hat_j, w_i, w_j).unwrap();
        let expected = 2.0 * 1.5_f64.sqrt();
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn adjacency_loss_is_symmetric_under_pair_swap() {
        let cfg = GeneratorConfig::new(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = GeneratorModel::new(cfg, &mut rng).unwrap();
        let za = vec![0.4, -0.6];
        let zb = vec![-1.1, 0.9];
        let graphs = test_graphs(2);
        let pads = padded_rows(&graphs, 5).unwrap();
        let eval = |z1: &[f64], z2: &[f64], p1: &[f64], p2: &[f64]| {
            let mut tape = Tape::new();
            let g_ids = model.generator.load_params(&mut tape, false);
            let z1id = tape.leaf(&[1, 2], z1.to_vec(), false);
            let z2id = tape.leaf(&[1, 2], z2.to_vec(), false);
            let w1 = model.generate_adjacency_tape(&mut tape, z1id, &g_ids).unwrap();
            let w2 = model.generate_adjacency_tape(&mut tape, z2id, &g_ids).unwrap();
            let p1id = tape.leaf(&[5, 5], p1.to_vec(), false);
            let p2id = tape.leaf(&[5, 5], p2.to_vec(), false);
            let loss = loss_adjacency(&mut tape, w1, w2, p1id, p2id).unwrap();
            tape.scalar(loss)
        };
        let forward = eval(&za, &zb, &pads[0], &pads[1]);
        let swapped = eval(&zb, &za, &pads[1], &pads[0]);
        assert!((forward - swapped).abs() < 1e-15);
    }

    #[test]
    fn adversarial_loss_closed_forms_at_constant_discriminator() {
        let cfg = GeneratorConfig::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut model = GeneratorModel::new(cfg, &mut rng).unwrap();
        model.discriminator.zero_head();
        let mut tape = Tape::new();
        let d_ids = model.discriminator.load_params(&mut tape, false);
        let g_ids = model.generator.load_params(&mut tape, false);
        let k = 4;
        let scores: Vec<TensorId> = (0..=k)
            .map(|i| {
                let z = vec![i as f64 * 0.1, -0.3];
                let zid = tape.leaf(&[1, 2], z, false);
                let w = model.generate_adjacency_tape(&mut tape, zid, &g_ids).unwrap();
                model.discriminator.forward_tape(&mut tape, w, &d_ids)
            })
            .collect();
        for &s in &scores {
            assert_eq!(tape.scalar(s), 0.5);
        }
        let loss = loss_adversarial(&mut tape, &scores).unwrap();
        let expected = 5.0 * std::f64::consts::LN_2;
        assert!((tape.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn adversarial_loss_vanishes_when_discriminator_says_real() {
        let mut tape = Tape::new();
        let ones: Vec<TensorId> = (0..3).map(|_| tape.leaf(&[1, 1], vec![1.0], false)).collect();
        let loss = loss_adversarial(&mut tape, &ones).unwrap();
        assert!(tape.scalar(loss) < 1e-5);
        assert!(matches!(
            loss_adversarial(&mut tape, &[]),
            Err(GanError::EmptyBatch)
        ));
    }

    #[test]
    fn smoothness_loss_is_zero_on_a_constant_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let decoder = Mlp::new(&[2, 4, 3], Activation::Tanh, "dec", &mut rng);
        let mut tape = Tape::new();
        let dec_ids = decoder.load_params(&mut tape, false);
        let z = tape.leaf(&[1, 2], vec![0.3, -0.8], false);
        let traj = trajectory_tape(&mut tape, z, z, 4).unwrap();
        let loss = loss_smoothness(&mut tape, &decoder, &dec_ids, &traj).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn smoothness_loss_matches_linear_decoder_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let decoder = Mlp::new(&[3, 5], Activation::Relu, "dec", &mut rng);
        let z_i = vec![0.2, -0.4, 1.1];
        let z_j = vec![-0.9, 0.6, 0.3];
        let k = 6;
        let mut tape = Tape::new();
        let dec_ids = decoder.load_params(&mut tape, false);
        let zi = tape.leaf(&[1, 3], z_i.clone(), false);
        let zj = tape.leaf(&[1, 3], z_j.clone(), false);
        let traj = trajectory_tape(&mut tape, zi, zj, k).unwrap();
        let loss = loss_smoothness(&mut tape, &decoder, &dec_ids, &traj).unwrap();
        let diff: Vec<f64> = z_j.iter().zip(&z_i).map(|(a, b)| a - b).collect();
        let f_diff = decoder.forward(&diff, 1);
        let f_zero = decoder.forward(&[0.0, 0.0, 0.0], 1);
        let expected: f64 = k as f64
            * f_diff
                .iter()
                .zip(&f_zero)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        assert!(
            (tape.scalar(loss) - expected).abs() < 1e-9,
            "{} vs {expected}",
            tape.scalar(loss)
        );
    }

    #[test]
    fn discriminator_loss_closed_form_at_half() {
        let cfg = GeneratorConfig::new(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut model = GeneratorModel::new(cfg, &mut rng).unwrap();
        model.discriminator.zero_head();
        let graphs = test_graphs(2);
        let pads = padded_rows(&graphs, 5).unwrap();
        let mut tape = Tape::new();
        let d_ids = model.discriminator.load_params(&mut tape, false);
        let real: Vec<TensorId> = pads
            .iter()
            .map(|p| {
                let w = tape.leaf(&[5, 5], p.clone(), false);
                model.discriminator.forward_tape(&mut tape, w, &d_ids)
            })
            .collect();
        let g_ids = model.generator.load_params(&mut tape, false);
        let fake: Vec<TensorId> = (0..3)
            .map(|i| {
                let zid = tape.leaf(&[1, 2], vec![0.2 * i as f64, -0.5], false);
                let w = model.generate_adjacency_tape(&mut tape, zid, &g_ids).unwrap();
                model.discriminator.forward_tape(&mut tape, w, &d_ids)
            })
            .collect();
        let loss = discriminator_loss(&mut tape, &real, &fake).unwrap();
        assert!((tape.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            discriminator_loss(&mut tape, &[], &fake),
            Err(GanError::EmptyBatch)
        ));
    }

    #[test]
    fn composite_loss_gradient_passes_finite_difference_check() {
        let n_max = 3;
        let latent_dim = 2;
        let cfg = GeneratorConfig {
            generator_hidden: vec![4],
            interpolation_steps: 3,
            w_adjacency: 1.0,
            w_smoothness: 0.1,
            ..GeneratorConfig::new(n_max, latent_dim)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let model = GeneratorModel::new(cfg.clone(), &mut rng).unwrap();
        let decoder = Mlp::new(&[latent_dim, 4, 3], Activation::Tanh, "dec", &mut rng);
        let z_i = vec![0.35, -0.15];
        let z_j = vec![-0.45, 0.55];
        let pad: Vec<f64> = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];

        let gen_len: usize = model.generator.params().iter().map(|p| p.values.len()).sum();
        let flat: Vec<f64> = {
            let mut all: Vec<f64> = model
                .generator
                .params()
                .iter()
                .flat_map(|p| p.values.clone())
                .collect();
            all.extend_from_slice(&z_i);
            all.extend_from_slice(&z_j);
            all
        };
        let eval = |theta: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
            let mut m = model.clone();
            let mut off = 0;
            for p in m.generator.params_mut() {
                let len = p.values.len();
                p.values.copy_from_slice(&theta[off..off + len]);
                off += len;
            }
            let zi_vals = theta[gen_len..gen_len + latent_dim].to_vec();
            let zj_vals = theta[gen_len + latent_dim..].to_vec();
            let mut tape = Tape::new();
            let g_ids = m.generator.load_params(&mut tape, true);
            let dec_ids = decoder.load_params(&mut tape, false);
            let zi = tape.leaf(&[1, latent_dim], zi_vals, true);
            let zj = tape.leaf(&[1, latent_dim], zj_vals, true);
            let traj = trajectory_tape(&mut tape, zi, zj, cfg.interpolation_steps).unwrap();
            let w0 = m.generate_adjacency_tape(&mut tape, traj[0], &g_ids).unwrap();
            let wk = m
                .generate_adjacency_tape(&mut tape, traj[cfg.interpolation_steps], &g_ids)
                .unwrap();
            let pi = tape.leaf(&[n_max, n_max], pad.clone(), false);
            let pj = tape.leaf(&[n_max, n_max], pad.clone(), false);
            let l_m = loss_adjacency(&mut tape, w0, wk, pi, pj).unwrap();
            let l_s = loss_smoothness(&mut tape, &decoder, &dec_ids, &traj).unwrap();
            let wm = tape.scale(l_m, cfg.w_adjacency);
            let ws = tape.scale(l_s, cfg.w_smoothness);
            let total = tape.add(wm, ws).unwrap();
            let loss = tape.scalar(total);
            if !want_grad {
                return (loss, None);
            }
            tape.backward(total).unwrap();
            let mut g = Vec::new();
            for (w, b) in &g_ids {
                g.extend_from_slice(tape.grad(*w).unwrap());
                g.extend_from_slice(tape.grad(*b).unwrap());
            }
            g.extend_from_slice(tape.grad(zi).unwrap());
            g.extend_from_slice(tape.grad(zj).unwrap());
            (loss, Some(g))
        };
        let (_, grad) = eval(&flat, true);
        let err = gradient_check(|t| eval(t, false).0, &flat, &grad.unwrap());
        assert!(err < 1e-4, "composite gradient error {err}");
    }

    #[test]
    fn training_is_deterministic_and_improves_endpoint_reconstruction() {
        let graphs = test_graphs(10);
        let features = test_features(&graphs);
        let latent = trained_latent(&features);
        let cfg = GeneratorConfig {
            generator_hidden: vec![16],
            discriminator_hidden: 4,
            interpolation_steps: 3,
            train_steps: 150,
            lr: 5e-3,
            ..GeneratorConfig::new(6, 3)
        };
        let (_, h1) = train_gan(cfg.clone(), &latent, &graphs, &features, 25).unwrap();
        let (_, h2) = train_gan(cfg, &latent, &graphs, &features, 25).unwrap();
        assert_eq!(h1.len(), h2.len());
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.g_total.to_bits(), b.g_total.to_bits());
            assert_eq!(a.d_loss.to_bits(), b.d_loss.to_bits());
        }
        let early: f64 = h1[..10].iter().map(|s| s.adjacency).sum::<f64>() / 10.0;
        let late: f64 = h1[h1.len() - 10..].iter().map(|s| s.adjacency).sum::<f64>() / 10.0;
        assert!(
            late < 0.9 * early,
            "endpoint reconstruction did not improve: {early} -> {late}"
        );
        for s in &h1 {
            assert!(s.d_loss.is_finite() && s.g_total.is_finite());
        }
    }

    #[test]
    fn training_rejects_undersized_datasets_and_mismatched_latents() {
        let graphs = test_graphs(10);
        let features = test_features(&graphs);
        let latent = trained_latent(&features);
        let cfg = GeneratorConfig::new(6, 3);
        assert!(matches!(
            train_gan(cfg.clone(), &latent, &graphs[..1], &features, 0),
            Err(GanError::DatasetTooSmall { got: 1, min: 2 })
        ));
        let bad = GeneratorConfig::new(6, 5);
        assert!(matches!(
            train_gan(bad, &latent, &graphs, &features, 0),
            Err(GanError::DimensionMismatch { .. })
        ));
        let tiny = GeneratorConfig::new(4, 3);
        assert!(matches!(
            train_gan(tiny, &latent, &graphs, &features, 0),
            Err(GanError::GraphTooLarge { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_respects_mode() {
        let graphs = test_graphs(10);
        let features = test_features(&graphs);
        let latent = trained_latent(&features);
        let cfg = GeneratorConfig {
            generator_hidden: vec![8],
            discriminator_hidden: 4,
            interpolation_steps: 2,
            train_steps: 3,
            ..GeneratorConfig::new(6, 3)
        };
        let (model, _) = train_gan(cfg, &latent, &graphs, &features, 1).unwrap();
        assert!(sample_molecules(&model, &latent, &features, 0, SampleMode::Perturb, 9)
            .unwrap()
            .is_empty());
        let a = sample_molecules(&model, &latent, &features, 5, SampleMode::Perturb, 9).unwrap();
        let b = sample_molecules(&model, &latent, &features, 5, SampleMode::Perturb, 9).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.provenance, y.provenance);
            for (u, v) in x.soft_adjacency.iter().zip(y.soft_adjacency.iter()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
            assert!(matches!(x.provenance, SampleProvenance::Perturbation { .. }));
            let w = &x.soft_adjacency;
            for i in 0..w.nrows() {
                assert_eq!(w[[i, i]], 0.0);
                for j in 0..w.ncols() {
                    assert_eq!(w[[i, j]], w[[j, i]]);
                }
            }
        }
        let c = sample_molecules(&model, &latent, &features, 4, SampleMode::Interpolate, 11)
            .unwrap();
        for s in &c {
            match s.provenance {
                SampleProvenance::Interpolation { source_i, source_j, alpha } => {
                    assert_ne!(source_i, source_j);
                    assert!((0.0..=1.0).contains(&alpha));
                }
                _ => panic!("expected interpolation provenance"),
            }
        }
    }

    #[test]
    fn zero_sigma_sampling_reproduces_direct_generation() {
        let graphs = test_graphs(10);
        let features = test_features(&graphs);
        let latent = trained_latent(&features);
        let cfg = GeneratorConfig {
            generator_hidden: vec![8],
            discriminator_hidden: 4,
            interpolation_steps: 2,
            train_steps: 3,
            perturb_sigma: 0.0,
            ..GeneratorConfig::new(6, 3)
        };
        let (model, _) = train_gan(cfg, &latent, &graphs, &features, 5).unwrap();
        let samples =
            sample_molecules(&model, &latent, &features, 3, SampleMode::Perturb, 21).unwrap();
        for s in &samples {
            let idx = match s.provenance {
                SampleProvenance::Perturbation { source_index, .. } => source_index,
                _ => unreachable!(),
            };
            let z = latent.encode(&features.row(idx).to_vec()).unwrap();
            let direct = model.generate_adjacency(&z).unwrap();
            for (a, b) in s.soft_adjacency.iter().zip(direct.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_preserves_generation_exactly() {
        let cfg = GeneratorConfig::new(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let model = GeneratorModel::new(cfg, &mut rng).unwrap();
        let blob = model.params_blob();
        let manifest = model.manifest(0);
        let json = serde_json::to_string(&manifest).unwrap();
        let back: GanManifest = serde_json::from_str(&json).unwrap();
        let restored = GeneratorModel::from_parts(&back, &blob).unwrap();
        let z = vec![0.4, -0.8, 1.2];
        let a = model.generate_adjacency(&z).unwrap();
        let b = restored.generate_adjacency(&z).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let w = Array2::from_elem((5, 5), 0.3);
        assert_eq!(model.discriminator.score(&w), restored.discriminator.score(&w));
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        let mut cfg = GeneratorConfig::new(5, 3);
        cfg.threshold = 1.0;
        assert!(cfg.validate().is_err());
        cfg.threshold = 0.5;
        cfg.interpolation_steps = 0;
        assert!(cfg.validate().is_err());
        cfg.interpolation_steps = 8;
        cfg.n_max = 1;
        assert!(cfg.validate().is_err());
        cfg.n_max = 5;
        assert!(cfg.validate().is_ok());
    }
}
