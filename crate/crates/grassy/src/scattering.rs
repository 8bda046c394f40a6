//! Diffusion-wavelet scattering features for labeled graphs.
//!
//! Wavelets are differences of lazy random-walk powers. The dyadic bank
//! uses fixed scales `W_j = P^{2^(j-1)} - P^{2^j}` for j = 1..J, plus the
//! high-pass `Psi_0 = I - P` (kept for completeness; the telescoping sum
//! `Psi_0 + sum_j W_j = I - P^{2^J}` holds but Psi_0 is not a feature
//! channel). The learned bank replaces hard scales with a row-stochastic
//! selector over integer walk powers 0..T: wavelet k is the difference of
//! consecutive selector rows applied to the power stack, and a one-hot
//! selector at powers 1, 2, 4, ..., 2^J reproduces the dyadic bank exactly.
//!
//! Features per label signal x: zeroth-order `||x||_q^q`, first-order
//! `sum_v |W_j x(v)|^q`, and second-order `sum_v |W_j' |W_j x|(v)|^q`, for
//! q = 1..Q and either all (j, j') pairs or j' > j. Node sums make every
//! channel permutation-invariant and independent of graph size.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TensorId};
use crate::graph::{AtomAlphabet, DiffusionOperator, GraphError, MolecularGraph};

#[derive(Debug, Error)]
pub enum ScatteringError {
    #[error("selector row {row} is not a probability distribution (sum {sum})")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("selector shape {got:?} does not match (J+1, T+1) = {expected:?}")]
    SelectorShape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("wavelet bank covers {bank_n} nodes but the graph has {graph_n}")]
    BankGraphMismatch { bank_n: usize, graph_n: usize },
    #[error("invalid scattering config: {0}")]
    InvalidConfig(String),
    #[error("graph {index}: {source}")]
    GraphFailed {
        index: usize,
        #[source]
        source: Box<ScatteringError>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Which wavelet bank featurization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatteringMode {
    Dyadic,
    Learned,
}

/// Scattering transform configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringConfig {
    /// Number of wavelet scales J.
    #[serde(default = "default_num_scales")]
    pub num_scales: usize,
    /// Highest moment exponent Q; moments use q = 1..=Q.
    #[serde(default = "default_num_moments")]
    pub num_moments: u32,
    /// Highest walk power T available to the learned selector.
    #[serde(default = "default_max_power")]
    pub max_power: usize,
    #[serde(default = "default_mode")]
    pub mode: ScatteringMode,
    /// All J^2 second-order (j, j') pairs when true; j' > j only when false.
    #[serde(default = "default_true")]
    pub all_second_order_pairs: bool,
    /// Include the ||x||_q^q channels.
    #[serde(default = "default_true")]
    pub include_zeroth_order: bool,
}

fn default_num_scales() -> usize {
    4
}
fn default_num_moments() -> u32 {
    2
}
fn default_max_power() -> usize {
    16
}
fn default_mode() -> ScatteringMode {
    ScatteringMode::Dyadic
}
fn default_true() -> bool {
    true
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        Self {
            num_scales: default_num_scales(),
            num_moments: default_num_moments(),
            max_power: default_max_power(),
            mode: default_mode(),
            all_second_order_pairs: true,
            include_zeroth_order: true,
        }
    }
}

impl ScatteringConfig {
    pub fn validate(&self) -> Result<(), ScatteringError> {
        if self.num_scales == 0 {
            return Err(ScatteringError::InvalidConfig(
                "num_scales must be >= 1".into(),
            ));
        }
        if self.num_moments == 0 {
            return Err(ScatteringError::InvalidConfig(
                "num_moments must be >= 1".into(),
            ));
        }
        if self.num_scales > 20 {
            return Err(ScatteringError::InvalidConfig(
                "num_scales must be <= 20 (walk powers grow as 2^J)".into(),
            ));
        }
        if self.mode == ScatteringMode::Learned && self.max_power < (1 << self.num_scales) {
            return Err(ScatteringError::InvalidConfig(format!(
                "max_power {} must be >= 2^num_scales = {} in learned mode",
                self.max_power,
                1 << self.num_scales
            )));
        }
        Ok(())
    }

    fn second_order_pairs(&self) -> usize {
        let j = self.num_scales;
        if self.all_second_order_pairs {
            j * j
        } else {
            j * (j - 1) / 2
        }
    }

    /// Feature channels per label signal.
    pub fn channels_per_signal(&self) -> usize {
        let j = self.num_scales;
        let zeroth = usize::from(self.include_zeroth_order);
        self.num_moments as usize * (zeroth + j + self.second_order_pairs())
    }
}

/// Total feature dimension for an alphabet of `num_labels` symbols.
pub fn feature_dimension(cfg: &ScatteringConfig, num_labels: usize) -> usize {
    num_labels * cfg.channels_per_signal()
}

/// Human-readable channel names in feature order, e.g. `C|o0|q1`,
/// `C|o1|j2|q1`, `C|o2|j1|jp3|q2`.
pub fn feature_labels(cfg: &ScatteringConfig, alphabet: &AtomAlphabet) -> Vec<String> {
    let mut out = Vec::with_capacity(feature_dimension(cfg, alphabet.len()));
    let j_max = cfg.num_scales;
    for symbol in alphabet.symbols() {
        if cfg.include_zeroth_order {
            for q in 1..=cfg.num_moments {
                out.push(format!("{symbol}|o0|q{q}"));
            }
        }
        for j in 1..=j_max {
            for q in 1..=cfg.num_moments {
                out.push(format!("{symbol}|o1|j{j}|q{q}"));
            }
        }
        for j in 1..=j_max {
            let start = if cfg.all_second_order_pairs { 1 } else { j + 1 };
            for jp in start..=j_max {
                for q in 1..=cfg.num_moments {
                    out.push(format!("{symbol}|o2|j{j}|jp{jp}|q{q}"));
                }
            }
        }
    }
    out
}

/// Row-stochastic selector over walk powers; rows are per-scale coefficient
/// profiles, shape (J+1) x (T+1). Wavelet k is row k minus row k+1 applied
/// to the power stack; the last row is the terminal low-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorWeights {
    weights: Array2<f64>,
}

impl SelectorWeights {
    /// One-hot rows at powers 2^0, 2^1, ..., 2^J; reproduces the dyadic
    /// bank exactly. Requires T >= 2^J so the last one-hot fits.
    pub fn dyadic_init(num_scales: usize, max_power: usize) -> Result<Self, ScatteringError> {
        if max_power < (1 << num_scales) {
            return Err(ScatteringError::InvalidConfig(format!(
                "max_power {} too small for 2^{}",
                max_power, num_scales
            )));
        }
        let mut weights = Array2::zeros((num_scales + 1, max_power + 1));
        for k in 0..=num_scales {
            weights[[k, 1 << k]] = 1.0;
        }
        Ok(Self { weights })
    }

    /// Validates shape against the config and that rows are distributions.
    pub fn new(weights: Array2<f64>, cfg: &ScatteringConfig) -> Result<Self, ScatteringError> {
        let expected = (cfg.num_scales + 1, cfg.max_power + 1);
        let got = (weights.nrows(), weights.ncols());
        if got != expected {
            return Err(ScatteringError::SelectorShape { expected, got });
        }
        for (row, r) in weights.rows().into_iter().enumerate() {
            let sum: f64 = r.sum();
            if (sum - 1.0).abs() > 1e-9 || r.iter().any(|&v| v < 0.0) {
                return Err(ScatteringError::NotRowStochastic { row, sum });
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn num_scales(&self) -> usize {
        self.weights.nrows() - 1
    }

    pub fn max_power(&self) -> usize {
        self.weights.ncols() - 1
    }
}

/// Wavelet operators for one graph, as dense n x n matrices.
#[derive(Debug, Clone)]
pub struct WaveletBank {
    /// `Psi_0 = I - P`; present for dyadic banks, not a feature channel.
    pub high_pass: Option<Array2<f64>>,
    /// Feature-channel wavelets, scales j = 1..=J in order.
    pub wavelets: Vec<Array2<f64>>,
}

impl WaveletBank {
    pub fn n(&self) -> usize {
        self.wavelets[0].nrows()
    }

    pub fn num_scales(&self) -> usize {
        self.wavelets.len()
    }
}

/// Dyadic bank: `Psi_0 = I - P`, `W_j = P^{2^(j-1)} - P^{2^j}`.
pub fn build_dyadic_bank(op: &mut DiffusionOperator, num_scales: usize) -> WaveletBank {
    op.ensure_powers(1 << num_scales);
    let n = op.n();
    let high_pass = Some(Array2::eye(n) - op.power(1));
    let wavelets = (0..num_scales)
        .map(|k| op.power(1 << k) - op.power(1 << (k + 1)))
        .collect();
    WaveletBank { high_pass, wavelets }
}

/// Learned bank: wavelet k is the difference of consecutive selector rows
/// combined over the cached power stack.
pub fn build_learned_bank(
    op: &mut DiffusionOperator,
    selector: &SelectorWeights,
) -> WaveletBank {
    let t_max = selector.max_power();
    op.ensure_powers(t_max);
    let n = op.n();
    let f = selector.weights();
    let wavelets = (0..selector.num_scales())
        .map(|k| {
            let mut w = Array2::<f64>::zeros((n, n));
            for t in 0..=t_max {
                let coeff = f[[k, t]] - f[[k + 1, t]];
                if coeff != 0.0 {
                    w.scaled_add(coeff, op.power(t));
                }
            }
            w
        })
        .collect();
    WaveletBank {
        high_pass: None,
        wavelets,
    }
}

/// Builds the bank `cfg` asks for. Learned mode falls back to the dyadic
/// one-hot selector when none is supplied.
pub fn build_bank(
    op: &mut DiffusionOperator,
    cfg: &ScatteringConfig,
    selector: Option<&SelectorWeights>,
) -> Result<WaveletBank, ScatteringError> {
    match cfg.mode {
        ScatteringMode::Dyadic => Ok(build_dyadic_bank(op, cfg.num_scales)),
        ScatteringMode::Learned => {
            let owned;
            let sel = match selector {
                Some(s) => s,
                None => {
                    owned = SelectorWeights::dyadic_init(cfg.num_scales, cfg.max_power)?;
                    &owned
                }
            };
            if sel.num_scales() != cfg.num_scales {
                return Err(ScatteringError::SelectorShape {
                    expected: (cfg.num_scales + 1, cfg.max_power + 1),
                    got: (sel.num_scales() + 1, sel.max_power() + 1),
                });
            }
            Ok(build_learned_bank(op, sel))
        }
    }
}

fn moment(values: &Array1<f64>, q: u32) -> f64 {
    values.iter().map(|v| v.abs().powi(q as i32)).sum()
}

/// Scattering moments of one graph against a bank built from its own walk
/// operator. Output order matches [`feature_labels`].
pub fn scattering_moments(
    graph: &MolecularGraph,
    alphabet: &AtomAlphabet,
    bank: &WaveletBank,
    cfg: &ScatteringConfig,
) -> Result<Array1<f64>, ScatteringError> {
    cfg.validate()?;
    if bank.n() != graph.n() {
        return Err(ScatteringError::BankGraphMismatch {
            bank_n: bank.n(),
            graph_n: graph.n(),
        });
    }
    if bank.num_scales() != cfg.num_scales {
        return Err(ScatteringError::InvalidConfig(format!(
            "bank has {} scales, config expects {}",
            bank.num_scales(),
            cfg.num_scales
        )));
    }
    let j_max = cfg.num_scales;
    let mut out = Vec::with_capacity(feature_dimension(cfg, alphabet.len()));
    for x in graph.label_signals(alphabet) {
        if cfg.include_zeroth_order {
            for q in 1..=cfg.num_moments {
                out.push(moment(&x, q));
            }
        }
        let responses: Vec<Array1<f64>> =
            bank.wavelets.iter().map(|w| w.dot(&x)).collect();
        for r in &responses {
            for q in 1..=cfg.num_moments {
                out.push(moment(r, q));
            }
        }
        for (k, r) in responses.iter().enumerate() {
            let rectified = r.mapv(f64::abs);
            let start = if cfg.all_second_order_pairs { 0 } else { k + 1 };
            for kp in start..j_max {
                let second = bank.wavelets[kp].dot(&rectified);
                for q in 1..=cfg.num_moments {
                    out.push(moment(&second, q));
                }
            }
        }
    }
    Ok(Array1::from(out))
}

/// Featurizes every graph with a per-graph bank; rows follow input order.
/// Runs as a parallel map; output is independent of thread count. The
/// selector applies in learned mode only.
pub fn featurize_dataset(
    graphs: &[MolecularGraph],
    alphabet: &AtomAlphabet,
    cfg: &ScatteringConfig,
    selector: Option<&SelectorWeights>,
) -> Result<Array2<f64>, ScatteringError> {
    cfg.validate()?;
    let dim = feature_dimension(cfg, alphabet.len());
    let rows: Vec<Array1<f64>> = graphs
        .par_iter()
        .enumerate()
        .map(|(index, g)| {
            let mut op = DiffusionOperator::lazy_walk(g);
            let bank = build_bank(&mut op, cfg, selector).map_err(|e| {
                ScatteringError::GraphFailed {
                    index,
                    source: Box::new(e),
                }
            })?;
            scattering_moments(g, alphabet, &bank, cfg).map_err(|e| {
                ScatteringError::GraphFailed {
                    index,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<_, _>>()?;
    let mut out = Array2::zeros((graphs.len(), dim));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

/// Per-graph constants for the differentiable (tape) featurization path:
/// diffused label signals and transposed walk powers.
#[derive(Debug, Clone)]
pub struct DiffusionStacks {
    /// Per label signal, a [T+1, n] matrix whose row t is `(P^t x)^T`.
    pub signal_stacks: Vec<Vec<f64>>,
    /// `(P^t)^T` row-major, t = 0..=T; applied from the right to row
    /// vectors.
    pub powers_transposed: Vec<Vec<f64>>,
    pub n: usize,
    pub t_max: usize,
}

/// Precomputes the constant diffusion stacks the tape path combines with a
/// trainable selector.
pub fn diffusion_stacks(
    graph: &MolecularGraph,
    alphabet: &AtomAlphabet,
    t_max: usize,
) -> DiffusionStacks {
    let n = graph.n();
    let mut op = DiffusionOperator::lazy_walk(graph);
    op.ensure_powers(t_max);
    let signal_stacks = graph
        .label_signals(alphabet)
        .into_iter()
        .map(|x| {
            let mut stack = Vec::with_capacity((t_max + 1) * n);
            for t in 0..=t_max {
                stack.extend(op.power(t).dot(&x));
            }
            stack
        })
        .collect();
    let powers_transposed = (0..=t_max)
        .map(|t| op.power(t).t().iter().cloned().collect())
        .collect();
    DiffusionStacks {
        signal_stacks,
        powers_transposed,
        n,
        t_max,
    }
}

fn moments_of_rows(
    tape: &mut Tape,
    rows: TensorId,
    ones: TensorId,
    num_moments: u32,
) -> TensorId {
    let mut per_q = Vec::with_capacity(num_moments as usize);
    for q in 1..=num_moments {
        let powered = tape.abs_pow(rows, q).expect("q >= 1");
        let sums = tape.matmul(powered, ones).expect("ones matches width");
        per_q.push(sums);
    }
    let stacked = tape.concat(&per_q, 1).expect("same row counts");
    let rows_n = tape.shape(stacked)[0];
    let len = rows_n * num_moments as usize;
    tape.reshape(stacked, &[len]).expect("same element count")
}

/// Differentiable scattering features of one graph as a [1, dim] tensor.
///
/// `selector` must be the row-stochastic (J+1) x (T+1) matrix on the tape
/// (typically `softmax_rows` of a logit leaf so gradients reach the
/// logits). Output order matches the frozen path exactly.
pub fn moments_tape(
    tape: &mut Tape,
    stacks: &DiffusionStacks,
    selector: TensorId,
    cfg: &ScatteringConfig,
) -> TensorId {
    let j_max = cfg.num_scales;
    let t_len = stacks.t_max + 1;
    let n = stacks.n;
    assert_eq!(
        tape.shape(selector),
        &[j_max + 1, t_len],
        "selector shape must be (J+1, T+1)"
    );
    let upper = tape.slice_rows(selector, 0, j_max).expect("J rows");
    let lower = tape.slice_rows(selector, 1, j_max + 1).expect("J rows");
    let delta = tape.sub(upper, lower).expect("same shape");
    let ones = tape.leaf(&[n, 1], vec![1.0; n], false);
    let powers: Vec<TensorId> = stacks
        .powers_transposed
        .iter()
        .map(|p| tape.leaf(&[n, n], p.clone(), false))
        .collect();

    let mut blocks: Vec<TensorId> = Vec::new();
    for stack in &stacks.signal_stacks {
        if cfg.include_zeroth_order {
            let x = &stack[0..n];
            for q in 1..=cfg.num_moments {
                let v: f64 = x.iter().map(|e| e.abs().powi(q as i32)).sum();
                blocks.push(tape.leaf(&[1], vec![v], false));
            }
        }
        let stack_id = tape.leaf(&[t_len, n], stack.clone(), false);
        // All first-order responses at once: [J, n].
        let responses = tape.matmul(delta, stack_id).expect("selector x stack");
        blocks.push(moments_of_rows(tape, responses, ones, cfg.num_moments));
        let rectified = tape.abs_pow(responses, 1).expect("q = 1");
        for k in 0..j_max {
            let row = tape.slice_rows(rectified, k, k + 1).expect("row k");
            let diffused: Vec<TensorId> = powers
                .iter()
                .map(|p| tape.matmul(row, *p).expect("row x power"))
                .collect();
            let row_stack = tape.concat(&diffused, 0).expect("equal widths");
            let second = tape.matmul(delta, row_stack).expect("selector x stack");
            let second = if cfg.all_second_order_pairs {
                second
            } else if k + 1 < j_max {
                tape.slice_rows(second, k + 1, j_max).expect("tail rows")
            } else {
                continue;
            };
            blocks.push(moments_of_rows(tape, second, ones, cfg.num_moments));
        }
    }
    let flat = tape.concat(&blocks, 0).expect("rank-1 blocks");
    let dim = tape.values(flat).len();
    tape.reshape(flat, &[1, dim]).expect("row vector")
}
