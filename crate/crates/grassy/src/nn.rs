//! Dense network building blocks on top of the autodiff tape.
//!
//! [`ParamTensor`] is a named, shaped block of trainable values. [`Mlp`]
//! stacks dense layers with a shared hidden activation and a linear output.
//! Every forward pass exists twice: a tape version used during training and
//! a frozen version for inference; both share the same matrix kernel so the
//! two paths agree bitwise. [`Adam`] implements the usual bias-corrected
//! moment updates. Parameter sets serialize to a little-endian binary blob
//! (magic `GRSY`) so checkpoints round-trip exactly.

use rand::Rng;

use thiserror::Error;

use crate::autodiff::{matmul_raw, Tape, TensorId};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("parameter blob does not start with magic GRSY")]
    BadMagic,
    #[error("unsupported parameter blob version {0}")]
    UnsupportedVersion(u32),
    #[error("parameter blob truncated while reading {0}")]
    Truncated(&'static str),
    #[error("parameter name is not valid UTF-8")]
    BadName,
    #[error("parameter {name}: expected shape {expected:?}, blob has {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter {0} missing from blob")]
    MissingParameter(String),
}

/// A named trainable tensor (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let shape_len: usize = shape.iter().product();
        assert_eq!(shape_len, values.len(), "shape/value length mismatch");
        Self {
            name: name.into(),
            shape,
            values,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![0.0; len])
    }
}

/// Hidden-layer nonlinearity; outputs are always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

/// One dense layer: weight [in, out] and bias [out].
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamTensor,
    pub b: ParamTensor,
}

/// Multi-layer perceptron with Glorot-uniform init and linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// Builds layers for consecutive `dims` (e.g. `[in, h1, h2, out]`).
    /// Weights are Glorot-uniform from `rng`, biases zero; names are
    /// `{prefix}.{layer}.w` / `.b`.
    pub fn new(dims: &[usize], activation: Activation, prefix: &str, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Dense {
                w: ParamTensor::new(format!("{prefix}.{l}.w"), vec![fan_in, fan_out], values),
                b: ParamTensor::zeros(format!("{prefix}.{l}.b"), vec![fan_out]),
            });
        }
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.shape[1]
    }

    /// Immutable parameter views in serialization order.
    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w, &l.b])
            .collect()
    }

    /// Mutable parameter views in serialization order.
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
            .collect()
    }

    /// Loads every layer parameter onto the tape as leaves and returns the
    /// (weight, bias) ids per layer. `requires_grad = false` freezes the
    /// network (values participate, gradients stop).
    pub fn load_params(&self, tape: &mut Tape, requires_grad: bool) -> Vec<(TensorId, TensorId)> {
        self.layers
            .iter()
            .map(|l| {
                let w = tape.leaf(&l.w.shape, l.w.values.clone(), requires_grad);
                let b = tape.leaf(&l.b.shape, l.b.values.clone(), requires_grad);
                (w, b)
            })
            .collect()
    }

    /// Tape forward pass for a [batch, in] input.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x: TensorId,
        loaded: &[(TensorId, TensorId)],
    ) -> TensorId {
        assert_eq!(loaded.len(), self.layers.len());
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, (w, b)) in loaded.iter().enumerate() {
            let z = tape.matmul(h, *w).expect("layer shapes fixed at build");
            let z = tape.add_bias(z, *b).expect("bias shape fixed at build");
            h = if l < last {
                match self.activation {
                    Activation::Relu => tape.relu(z),
                    Activation::Tanh => tape.tanh(z),
                    Activation::Sigmoid => tape.sigmoid(z),
                }
            } else {
                z
            };
        }
        h
    }

    /// Frozen forward pass for a [batch, in] row-major input; returns
    /// [batch, out]. Bitwise-identical to the tape forward on the same
    /// values.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.input_dim());
        let mut h = x.to_vec();
        let mut width = self.input_dim();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let out = layer.w.shape[1];
            let mut z = matmul_raw(&h, &layer.w.values, batch, width, out);
            for i in 0..batch {
                for j in 0..out {
                    z[i * out + j] += layer.b.values[j];
                }
            }
            if l < last {
                for v in &mut z {
                    *v = match self.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                        Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                    };
                }
            }
            h = z;
            width = out;
        }
        h
    }
}

/// Adam optimizer state over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` are the element counts of the parameter tensors, in the same
    /// order later passed to [`Adam::step`].
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Applies one bias-corrected update in place. `params` and `grads`
    /// must match the sizes given at construction, in the same order.
    pub fn step(&mut self, params: &mut [&mut ParamTensor], grads: &[Vec<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.values.len(), g.len());
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Standard normal draw via Box-Muller; the uniform is shifted into (0, 1]
/// so the log never sees zero.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    let v: f64 = rng.gen();
    (-2.0 * (1.0 - u).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

const BLOB_MAGIC: &[u8; 4] = b"GRSY";
const BLOB_VERSION: u32 = 1;

/// Serializes named tensors: magic `GRSY`, version u32, tensor count u32,
/// then per tensor name length (u32) + UTF-8 name, rank (u32), dims (u64
/// each), values (f64 each); all integers and floats little-endian.
pub fn save_params(tensors: &[&ParamTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a blob written by [`save_params`], preserving tensor order.
pub fn load_params(bytes: &[u8]) -> Result<Vec<ParamTensor>, NnError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize, what: &'static str| -> Result<&[u8], NnError> {
        if *pos + len > bytes.len() {
            return Err(NnError::Truncated(what));
        }
        let slice = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(slice)
    };
    if take(&mut pos, 4, "magic")? != BLOB_MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len =
            u32::from_le_bytes(take(&mut pos, 4, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len, "name")?)
            .map_err(|_| NnError::BadName)?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut pos, 4, "rank")?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(
                u64::from_le_bytes(take(&mut pos, 8, "dimension")?.try_into().unwrap()) as usize,
            );
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(
                take(&mut pos, 8, "values")?.try_into().unwrap(),
            ));
        }
        tensors.push(ParamTensor::new(name, shape, values));
    }
    Ok(tensors)
}

/// Copies blob tensors into an existing parameter list by name, enforcing
/// shape agreement. Extra blob tensors are ignored; missing ones error.
pub fn restore_params(
    targets: &mut [&mut ParamTensor],
    loaded: &[ParamTensor],
) -> Result<(), NnError> {
    for t in targets.iter_mut() {
        let found = loaded
            .iter()
            .find(|l| l.name == t.name)
            .ok_or_else(|| NnError::MissingParameter(t.name.clone()))?;
        if found.shape != t.shape {
            return Err(NnError::ShapeMismatch {
                name: t.name.clone(),
                expected: t.shape.clone(),
                got: found.shape.clone(),
            });
        }
        t.values.clone_from(&found.values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradient_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_gives_identical_initialization() {
        let a = Mlp::new(&[5, 8, 3], Activation::Relu, "m", &mut ChaCha8Rng::seed_from_u64(9));
        let b = Mlp::new(&[5, 8, 3], Activation::Relu, "m", &mut ChaCha8Rng::seed_from_u64(9));
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.values, pb.values);
        }
    }

    #[test]
    fn frozen_and_tape_forward_agree_bitwise() {
        let mlp = Mlp::new(&[4, 6, 2], Activation::Tanh, "m", &mut ChaCha8Rng::seed_from_u64(3));
        let x = vec![0.5, -1.2, 0.7, 2.2, 0.0, 1.0, -0.5, 0.25];
        let frozen = mlp.forward(&x, 2);
        let mut tape = Tape::new();
        let xid = tape.leaf(&[2, 4], x, false);
        let loaded = mlp.load_params(&mut tape, false);
        let y = mlp.forward_tape(&mut tape, xid, &loaded);
        let taped = tape.values(y);
        assert_eq!(frozen.len(), taped.len());
        for (a, b) in frozen.iter().zip(taped) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences_away_from_kinks() {
        // Flatten all parameters into one theta vector, rebuild the network
        // from it, and check the analytic gradient of a scalar loss.
        let base = Mlp::new(&[3, 4, 2], Activation::Relu, "m", &mut ChaCha8Rng::seed_from_u64(11));
        let x = vec![0.9, -0.4, 0.3, 0.1, 1.4, -0.8];
        let flatten = |m: &Mlp| -> Vec<f64> {
            m.params().iter().flat_map(|p| p.values.clone()).collect()
        };
        let rebuild = |theta: &[f64]| -> Mlp {
            let mut m = base.clone();
            let mut off = 0;
            for p in m.params_mut() {
                let len = p.values.len();
                p.values.copy_from_slice(&theta[off..off + len]);
                off += len;
            }
            m
        };
        let loss_of = |m: &Mlp| -> f64 {
            let y = m.forward(&x, 2);
            y.iter().map(|v| v * v).sum()
        };
        let theta = flatten(&base);
        // Analytic gradient via the tape.
        let mut tape = Tape::new();
        let xid = tape.leaf(&[2, 3], x.clone(), false);
        let loaded = base.load_params(&mut tape, true);
        let y = base.forward_tape(&mut tape, xid, &loaded);
        let sq = tape.abs_pow(y, 2).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let mut analytic = Vec::new();
        for (w, b) in &loaded {
            analytic.extend_from_slice(tape.grad(*w).unwrap());
            analytic.extend_from_slice(tape.grad(*b).unwrap());
        }
        let err = gradient_check(|t| loss_of(&rebuild(t)), &theta, &analytic);
        assert!(err < 1e-4, "mlp gradient error {err}");
    }

    #[test]
    fn adam_first_step_with_unit_gradient_moves_by_lr() {
        let mut p = ParamTensor::new("p", vec![1], vec![0.0]);
        let mut adam = Adam::new(0.001, &[1]);
        adam.step(&mut [&mut p], &[vec![1.0]]);
        // Bias correction makes the first step lr / (1 + eps).
        assert!((p.values[0] + 0.001).abs() < 1e-10, "step was {}", p.values[0]);
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state_changes_nothing() {
        let mut p = ParamTensor::new("p", vec![2], vec![0.5, -0.5]);
        let mut adam = Adam::new(0.01, &[2]);
        adam.step(&mut [&mut p], &[vec![0.0, 0.0]]);
        assert_eq!(p.values, vec![0.5, -0.5]);
    }

    #[test]
    fn adam_sequence_is_deterministic() {
        let run = || {
            let mut p = ParamTensor::new("p", vec![2], vec![1.0, -2.0]);
            let mut adam = Adam::new(0.05, &[2]);
            for k in 0..10 {
                let g = vec![p.values[0] * 0.3 + k as f64 * 0.01, p.values[1] - 0.2];
                adam.step(&mut [&mut p], &[g]);
            }
            p.values
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn parameter_blob_round_trips_exactly() {
        let t1 = ParamTensor::new("enc.0.w", vec![2, 3], vec![1.5, -2.25, 0.0, 3.25e-7, 1e300, -0.5]);
        let t2 = ParamTensor::new("enc.0.b", vec![3], vec![0.1, 0.2, 0.3]);
        let blob = save_params(&[&t1, &t2]);
        assert_eq!(&blob[0..4], b"GRSY");
        let back = load_params(&blob).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], t1);
        assert_eq!(back[1], t2);
    }

    #[test]
    fn blob_rejects_bad_magic_and_truncation() {
        let t = ParamTensor::new("p", vec![2], vec![1.0, 2.0]);
        let mut blob = save_params(&[&t]);
        assert!(matches!(load_params(&blob[..10]), Err(NnError::Truncated(_))));
        blob[0] = b'X';
        assert!(matches!(load_params(&blob), Err(NnError::BadMagic)));
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let src = ParamTensor::new("a", vec![2], vec![9.0, 8.0]);
        let blob = save_params(&[&src]);
        let loaded = load_params(&blob).unwrap();
        let mut dst = ParamTensor::zeros("a", vec![2]);
        restore_params(&mut [&mut dst], &loaded).unwrap();
        assert_eq!(dst.values, vec![9.0, 8.0]);
        let mut wrong_shape = ParamTensor::zeros("a", vec![3]);
        assert!(matches!(
            restore_params(&mut [&mut wrong_shape], &loaded),
            Err(NnError::ShapeMismatch { .. })
        ));
        let mut missing = ParamTensor::zeros("b", vec![2]);
        assert!(matches!(
            restore_params(&mut [&mut missing], &loaded),
            Err(NnError::MissingParameter(_))
        ));
    }
}
