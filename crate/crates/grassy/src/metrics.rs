//! Evaluation metrics and latent export.
//!
//! Three quantities summarize a trained latent model: per-property
//! absolute prediction error on a held-out set, smoothness of each
//! property over the latent space, and (when samples are available) the
//! validity fraction of generated molecules.
//!
//! Smoothness is the Rayleigh quotient s = p'Lp / p'p where L is the
//! graph Laplacian of a symmetric k-nearest-neighbor graph over the
//! latent codes with Gaussian weights exp(-d^2 / eps). The bandwidth is
//! adaptive: eps_i is the squared distance from point i to its k-th
//! neighbor, and an edge uses the average (eps_i + eps_j) / 2. Lower s
//! means the property varies less between nearby latent codes. The
//! quadratic form is evaluated in its energy form
//! sum_{i<j} w_ij (p_i - p_j)^2 so a constant property scores 0 exactly.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::{LatentError, LatentModel};
use crate::validity::{ValidityRule, ValidityVerdict};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("need at least {need} points for k = {k} neighbors, got {got}")]
    TooFewPoints { got: usize, need: usize, k: usize },
    #[error("property vector is identically zero")]
    ZeroPropertyVector,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid smoothness config: {0}")]
    InvalidConfig(String),
    #[error("{context} produced a non-finite value")]
    NonFinite { context: String },
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Neighborhood size for the latent kNN graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConfig {
    #[serde(default = "default_neighbors")]
    pub k: usize,
}

fn default_neighbors() -> usize {
    5
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        Self {
            k: default_neighbors(),
        }
    }
}

impl SmoothnessConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.k == 0 {
            return Err(MetricsError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Floor applied to adaptive bandwidths so duplicate points cannot
/// produce a zero denominator.
const BANDWIDTH_FLOOR: f64 = 1e-12;

fn squared_distances(z: &Array2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = z.row(i);
            (0..n)
                .map(|j| {
                    let zj = z.row(j);
                    zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum()
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Gaussian edge weights of the symmetric kNN graph over the rows of
/// `z`. An edge joins i and j when either is among the other's k nearest
/// neighbors (ties broken by index); its weight is
/// exp(-d^2_ij / eps_ij) with eps_ij the averaged adaptive bandwidth.
pub fn knn_weights(z: &Array2<f64>, cfg: &SmoothnessConfig) -> Result<Array2<f64>, MetricsError> {
    cfg.validate()?;
    let n = z.nrows();
    if n < cfg.k + 1 {
        return Err(MetricsError::TooFewPoints {
            got: n,
            need: cfg.k + 1,
            k: cfg.k,
        });
    }
    let d2 = squared_distances(z);
    let mut eps = vec![0.0; n];
    let mut neighbor = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            d2[[i, a]]
                .partial_cmp(&d2[[i, b]])
                .expect("distances are finite")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(cfg.k) {
            neighbor[i][j] = true;
        }
        eps[i] = d2[[i, order[cfg.k - 1]]].max(BANDWIDTH_FLOOR);
    }
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if neighbor[i][j] || neighbor[j][i] {
                let bandwidth = 0.5 * (eps[i] + eps[j]);
                let weight = (-d2[[i, j]] / bandwidth).exp();
                w[[i, j]] = weight;
                w[[j, i]] = weight;
            }
        }
    }
    Ok(w)
}

/// Graph Laplacian L = D - W of the latent kNN graph; symmetric and
/// positive semidefinite.
pub fn latent_knn_laplacian(
    z: &Array2<f64>,
    cfg: &SmoothnessConfig,
) -> Result<Array2<f64>, MetricsError> {
    let w = knn_weights(z, cfg)?;
    let n = w.nrows();
    let mut l = -&w;
    for i in 0..n {
        l[[i, i]] = w.row(i).sum();
    }
    Ok(l)
}

/// Smoothness s = p'Lp / p'p of a property vector over the latent kNN
/// graph, evaluated in energy form; a constant vector scores 0 exactly.
pub fn smoothness(
    z: &Array2<f64>,
    p: &[f64],
    cfg: &SmoothnessConfig,
) -> Result<f64, MetricsError> {
    if p.len() != z.nrows() {
        return Err(MetricsError::LengthMismatch {
            expected: z.nrows(),
            got: p.len(),
        });
    }
    let norm: f64 = p.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(MetricsError::ZeroPropertyVector);
    }
    let w = knn_weights(z, cfg)?;
    let n = w.nrows();
    let mut energy = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = p[i] - p[j];
            energy += w[[i, j]] * diff * diff;
        }
    }
    Ok(energy / norm)
}

/// One property's absolute-error statistics in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyErrorRow {
    pub property: String,
    pub mean: f64,
    pub std: f64,
}

/// One property's latent smoothness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessRow {
    pub property: String,
    pub smoothness: f64,
}

/// Columnwise mean and population standard deviation of |pred - target|.
pub fn absolute_error_stats(
    predictions: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let n = predictions.nrows();
    if n == 0 {
        return Err(MetricsError::EmptyTestSet);
    }
    if targets.nrows() != n || targets.ncols() != predictions.ncols() {
        return Err(MetricsError::LengthMismatch {
            expected: predictions.len(),
            got: targets.len(),
        });
    }
    let p = predictions.ncols();
    let mut out = Vec::with_capacity(p);
    for c in 0..p {
        let errors: Vec<f64> = (0..n)
            .map(|r| (predictions[[r, c]] - targets[[r, c]]).abs())
            .collect();
        let mean = errors.iter().sum::<f64>() / n as f64;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
        out.push((mean, var.sqrt()));
    }
    Ok(out)
}

/// Per-property absolute prediction error of a trained model on a test
/// set, reported as mean and population standard deviation in the
/// property's original units.
pub fn property_error(
    model: &LatentModel,
    features: &Array2<f64>,
    properties: &Array2<f64>,
) -> Result<Vec<PropertyErrorRow>, MetricsError> {
    let n = features.nrows();
    if n == 0 {
        return Err(MetricsError::EmptyTestSet);
    }
    let names = &model.config.property_names;
    if properties.ncols() != names.len() || properties.nrows() != n {
        return Err(MetricsError::LengthMismatch {
            expected: n * names.len(),
            got: properties.len(),
        });
    }
    let mut predictions = Array2::zeros((n, names.len()));
    for i in 0..n {
        let row = features.row(i).to_vec();
        let pred = model.predict_properties(&row)?;
        for (c, v) in pred.into_iter().enumerate() {
            predictions[[i, c]] = v;
        }
    }
    let stats = absolute_error_stats(&predictions, properties)?;
    Ok(names
        .iter()
        .zip(stats)
        .map(|(name, (mean, std))| PropertyErrorRow {
            property: name.clone(),
            mean,
            std,
        })
        .collect())
}

/// Validity tallies over a batch of generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub total: usize,
    pub valid: usize,
    pub fraction: f64,
    pub failures_by_rule: BTreeMap<String, usize>,
}

impl ValiditySummary {
    pub fn from_verdicts(verdicts: &[ValidityVerdict]) -> Result<Self, MetricsError> {
        if verdicts.is_empty() {
            return Err(MetricsError::EmptyTestSet);
        }
        let valid = verdicts.iter().filter(|v| v.valid).count();
        let mut failures_by_rule = BTreeMap::new();
        for verdict in verdicts {
            for rule in &verdict.failed_rules {
                let key = match rule {
                    ValidityRule::TooSmall => "too_small",
                    ValidityRule::RingTooLarge => "ring_too_large",
                    ValidityRule::DegreeTooHigh => "degree_too_high",
                };
                *failures_by_rule.entry(key.to_string()).or_insert(0) += 1;
            }
        }
        Ok(Self {
            total: verdicts.len(),
            valid,
            fraction: valid as f64 / verdicts.len() as f64,
            failures_by_rule,
        })
    }
}

/// Full evaluation summary for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub test_points: usize,
    pub property_error: Vec<PropertyErrorRow>,
    pub smoothness: Vec<SmoothnessRow>,
    pub validity: Option<ValiditySummary>,
}

impl MetricsReport {
    /// Every reported value must be finite.
    pub fn validate(&self) -> Result<(), MetricsError> {
        for row in &self.property_error {
            if !row.mean.is_finite() || !row.std.is_finite() {
                return Err(MetricsError::NonFinite {
                    context: format!("property error for {}", row.property),
                });
            }
        }
        for row in &self.smoothness {
            if !row.smoothness.is_finite() {
                return Err(MetricsError::NonFinite {
                    context: format!("smoothness for {}", row.property),
                });
            }
        }
        if let Some(v) = &self.validity {
            if !v.fraction.is_finite() {
                return Err(MetricsError::NonFinite {
                    context: "validity fraction".into(),
                });
            }
        }
        Ok(())
    }

    /// Aligned plain-text tables (model x property).
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "model: {}    test points: {}\n",
            self.model, self.test_points
        ));
        let name_width = self
            .property_error
            .iter()
            .map(|r| r.property.len())
            .chain(self.smoothness.iter().map(|r| r.property.len()))
            .chain(["property".len()])
            .max()
            .unwrap_or(8);
        if !self.property_error.is_empty() {
            out.push_str("\nproperty prediction error (mean +/- std)\n");
            out.push_str(&format!("  {:name_width$}  error\n", "property"));
            for row in &self.property_error {
                out.push_str(&format!(
                    "  {:name_width$}  {:.4} +/- {:.4}\n",
                    row.property, row.mean, row.std
                ));
            }
        }
        if !self.smoothness.is_empty() {
            out.push_str("\nlatent smoothness (lower is smoother)\n");
            out.push_str(&format!("  {:name_width$}  s\n", "property"));
            for row in &self.smoothness {
                out.push_str(&format!(
                    "  {:name_width$}  {:.4}\n",
                    row.property, row.smoothness
                ));
            }
        }
        if let Some(v) = &self.validity {
            out.push_str(&format!(
                "\nvalidity: {} / {} samples ({:.2}%)\n",
                v.valid,
                v.total,
                100.0 * v.fraction
            ));
            for (rule, count) in &v.failures_by_rule {
                out.push_str(&format!("  {rule}: {count}\n"));
            }
        }
        out
    }
}

/// Evaluates one model on a held-out set: prediction error (when the
/// model carries a property head), smoothness of every dataset property
/// over the latent codes, and optional validity tallies for generated
/// samples.
pub fn build_report(
    label: &str,
    model: &LatentModel,
    features: &Array2<f64>,
    properties: &Array2<f64>,
    property_names: &[String],
    cfg: &SmoothnessConfig,
    verdicts: Option<&[ValidityVerdict]>,
) -> Result<MetricsReport, MetricsError> {
    let n = features.nrows();
    if n == 0 {
        return Err(MetricsError::EmptyTestSet);
    }
    if properties.nrows() != n || properties.ncols() != property_names.len() {
        return Err(MetricsError::LengthMismatch {
            expected: n * property_names.len(),
            got: properties.len(),
        });
    }
    let prop_rows = if model.config.property_names.is_empty() {
        Vec::new()
    } else {
        property_error(model, features, properties)?
    };
    let z = model.encode_matrix(features)?;
    let mut smooth_rows = Vec::with_capacity(property_names.len());
    for (c, name) in property_names.iter().enumerate() {
        let p: Vec<f64> = (0..n).map(|r| properties[[r, c]]).collect();
        let s = smoothness(&z, &p, cfg)?;
        smooth_rows.push(SmoothnessRow {
            property: name.clone(),
            smoothness: s,
        });
    }
    let validity = verdicts.map(ValiditySummary::from_verdicts).transpose()?;
    let report = MetricsReport {
        model: label.to_string(),
        test_points: n,
        property_error: prop_rows,
        smoothness: smooth_rows,
        validity,
    };
    report.validate()?;
    Ok(report)
}

/// Formats a float with 17 significant digits, enough to reparse the
/// exact same f64.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one CSV row per graph: id, latent coordinates, then raw
/// property values, in input order. Floats carry full f64 precision.
pub fn export_latent(
    model: &LatentModel,
    ids: &[String],
    features: &Array2<f64>,
    properties: &Array2<f64>,
    property_names: &[String],
    path: &Path,
) -> Result<(), MetricsError> {
    let n = features.nrows();
    if ids.len() != n || properties.nrows() != n || properties.ncols() != property_names.len() {
        return Err(MetricsError::LengthMismatch {
            expected: n,
            got: ids.len().min(properties.nrows()),
        });
    }
    let latent_dim = model.config.latent_dim;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["id".to_string()];
    header.extend((0..latent_dim).map(|d| format!("z{d}")));
    header.extend(property_names.iter().cloned());
    writeln!(file, "{}", header.join(","))?;
    for i in 0..n {
        let row = features.row(i).to_vec();
        let z = model.encode(&row)?;
        let mut cells = vec![ids[i].clone()];
        cells.extend(z.iter().map(|v| format_full(*v)));
        cells.extend((0..property_names.len()).map(|c| format_full(properties[[i, c]])));
        writeln!(file, "{}", cells.join(","))?;
    }
    file.flush()?;
    Ok(())
}
