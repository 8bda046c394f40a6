//! End-to-end workflow: dataset ingestion, featurization, model training,
//! generation, validation, and metrics, with deterministic artifacts.
//!
//! Every command reads a [`RunConfig`], validates it before touching data,
//! and writes fixed-name artifacts into an output directory. Artifacts are
//! written to a temporary sibling and renamed into place, so an
//! interrupted run never leaves a half-written checkpoint. All randomness
//! derives from the config's seed, and parallel stages gather results by
//! input index, so a rerun with the same config and seed produces
//! byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gan::{
    sample_molecules, train_gan, GanError, GanManifest, GanStepStats, GeneratedSample,
    GeneratorConfig, GeneratorModel, SampleMode, SampleProvenance,
};
use crate::graph::{AtomAlphabet, MolecularGraph};
use crate::latent::{
    dyadic_selector_logits, features_at_selector, fit_regressor, selector_rows, train,
    train_with_selector, EpochStats, LatentError, LatentManifest, LatentModel, LatentModelConfig,
    TrainReport,
};
use crate::metrics::{
    build_report, MetricsError, MetricsReport, SmoothnessConfig, ValiditySummary,
};
use crate::scattering::{
    diffusion_stacks, feature_dimension, feature_labels, featurize_dataset, DiffusionStacks,
    ScatteringConfig, ScatteringError, ScatteringMode, SelectorWeights,
};
use crate::smiles::parse_smiles;
use crate::validity::{check_sample, ValidityConfig, ValidityError, ValidityVerdict};

pub const FEATURES_FILE: &str = "features.csv";
pub const BANK_FILE: &str = "bank.json";
pub const FEATURIZE_ERRORS_FILE: &str = "featurize_errors.jsonl";
pub const AE_PARAMS_FILE: &str = "ae.bin";
pub const AE_MANIFEST_FILE: &str = "ae.json";
pub const AE_HISTORY_FILE: &str = "ae_history.csv";
pub const SELECTOR_FILE: &str = "selector.csv";
pub const GAN_PARAMS_FILE: &str = "gan.bin";
pub const GAN_MANIFEST_FILE: &str = "gan.json";
pub const GAN_HISTORY_FILE: &str = "gan_history.csv";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const VALIDATED_FILE: &str = "validated.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config field {field}: {message}")]
    Config { field: String, message: String },
    #[error("cannot read dataset {path}: {source}")]
    DatasetUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset line {line}: {message}")]
    DatasetInvalid { line: usize, message: String },
    #[error(
        "{failed} of {total} records failed featurization (tolerated {tolerated}); \
         see {sidecar}"
    )]
    TooManyRecordFailures {
        failed: usize,
        total: usize,
        tolerated: usize,
        sidecar: PathBuf,
    },
    #[error("missing prerequisite {what}: {hint}")]
    MissingPrerequisite { what: String, hint: String },
    #[error("artifact {path} is malformed: {message}")]
    ArtifactCorrupt { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Validity(#[from] ValidityError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> PipelineError {
    PipelineError::ArtifactCorrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes to a temporary sibling and renames into place so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| corrupt(path, "path has no file name"))?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Full f64 precision so a reparse recovers identical bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// An explicit graph given as labeled nodes plus an edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySpec {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

/// One dataset molecule: an id, exactly one structure encoding, and a
/// name-to-value property map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smiles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<AdjacencySpec>,
    #[serde(default)]
    pub properties: BTreeMap<String, f64>,
}

impl DatasetRecord {
    /// Checks the exactly-one-of structure rule.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("record id is empty".into());
        }
        match (&self.smiles, &self.adjacency) {
            (Some(_), Some(_)) => Err(format!(
                "record {} has both smiles and adjacency; exactly one is allowed",
                self.id
            )),
            (None, None) => Err(format!(
                "record {} has neither smiles nor adjacency",
                self.id
            )),
            _ => Ok(()),
        }
    }

    /// Builds the molecular graph from whichever encoding is present.
    pub fn to_graph(&self, alphabet: &AtomAlphabet) -> Result<MolecularGraph, String> {
        if let Some(smiles) = &self.smiles {
            return parse_smiles(smiles, alphabet).map_err(|e| e.to_string());
        }
        let spec = self
            .adjacency
            .as_ref()
            .expect("validate() guarantees one encoding");
        let labels: Vec<usize> = spec
            .labels
            .iter()
            .map(|s| {
                alphabet
                    .index_of(s)
                    .ok_or_else(|| format!("atom symbol {s} is not in the alphabet"))
            })
            .collect::<Result<_, _>>()?;
        MolecularGraph::from_edges(spec.labels.len(), &spec.edges, labels, alphabet)
            .map_err(|e| e.to_string())
    }
}

/// Reads a JSONL dataset, enforcing per-record structure and id
/// uniqueness. Blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|source| PipelineError::DatasetUnreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| PipelineError::DatasetUnreadable {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| PipelineError::DatasetInvalid {
                line: line_no,
                message: e.to_string(),
            })?;
        record
            .validate()
            .map_err(|message| PipelineError::DatasetInvalid {
                line: line_no,
                message,
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(PipelineError::DatasetInvalid {
                line: line_no,
                message: format!("duplicate record id {}", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Full run configuration: one section per stage plus the global seed and
/// the dataset path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: PathBuf,
    #[serde(default)]
    pub scattering: ScatteringConfig,
    #[serde(default = "default_latent_section")]
    pub latent: LatentModelConfig,
    #[serde(default = "default_generator_section")]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub validity: ValidityConfig,
    #[serde(default)]
    pub smoothness: SmoothnessConfig,
}

fn default_latent_section() -> LatentModelConfig {
    LatentModelConfig::new(0)
}

fn default_generator_section() -> GeneratorConfig {
    GeneratorConfig::new(0, 0)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| corrupt(path, format!("not a valid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level validation of everything checkable before data is
    /// read. Zero-valued derivable fields (latent.input_dim,
    /// generator.n_max, generator.latent_dim) are filled in by the
    /// commands that know the dataset.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let field = |field: &str, message: String| PipelineError::Config {
            field: field.to_string(),
            message,
        };
        if self.dataset.as_os_str().is_empty() {
            return Err(field("dataset", "dataset path is empty".into()));
        }
        self.scattering
            .validate()
            .map_err(|e| field("scattering", e.to_string()))?;
        if self.scattering.max_power < (1 << self.scattering.num_scales) {
            return Err(field(
                "scattering.max_power",
                format!(
                    "{} cannot host the dyadic selector; need >= 2^num_scales = {}",
                    self.scattering.max_power,
                    1 << self.scattering.num_scales
                ),
            ));
        }
        if self.latent.latent_dim == 0 {
            return Err(field("latent.latent_dim", "must be >= 1".into()));
        }
        if self.latent.lr <= 0.0 {
            return Err(field("latent.lr", "must be positive".into()));
        }
        if self.latent.max_epochs == 0 {
            return Err(field("latent.max_epochs", "must be >= 1".into()));
        }
        if self.latent.regression_weight < 0.0 {
            return Err(field("latent.regression_weight", "must be >= 0".into()));
        }
        if self.latent.input_dim != 0 {
            let expected = feature_dimension(&self.scattering, AtomAlphabet::standard().len());
            if self.latent.input_dim != expected {
                return Err(field(
                    "latent.input_dim",
                    format!("{} does not match the feature width {expected}; omit it to derive", self.latent.input_dim),
                ));
            }
        }
        if self.generator.latent_dim != 0 && self.generator.latent_dim != self.latent.latent_dim {
            return Err(field(
                "generator.latent_dim",
                format!(
                    "{} does not match latent.latent_dim {}; omit it to derive",
                    self.generator.latent_dim, self.latent.latent_dim
                ),
            ));
        }
        if self.generator.train_steps == 0 {
            return Err(field("generator.train_steps", "must be >= 1".into()));
        }
        if self.generator.lr <= 0.0 {
            return Err(field("generator.lr", "must be positive".into()));
        }
        if !(self.generator.threshold > 0.0 && self.generator.threshold < 1.0) {
            return Err(field(
                "generator.threshold",
                "must lie strictly inside (0, 1)".into(),
            ));
        }
        self.validity
            .validate()
            .map_err(|e| field("validity", e.to_string()))?;
        self.smoothness
            .validate()
            .map_err(|e| field("smoothness", e.to_string()))?;
        Ok(())
    }
}

/// One record that could not be turned into a graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFailure {
    pub id: String,
    pub line: usize,
    pub error: String,
}

struct PreparedDataset {
    records: Vec<DatasetRecord>,
    graphs: Vec<MolecularGraph>,
    failures: Vec<RecordFailure>,
    property_names: Vec<String>,
    properties: Array2<f64>,
}

fn prepare_dataset(path: &Path, alphabet: &AtomAlphabet) -> Result<PreparedDataset, PipelineError> {
    let all = read_dataset(path)?;
    let parsed: Vec<Result<MolecularGraph, String>> = all
        .par_iter()
        .map(|record| record.to_graph(alphabet))
        .collect();
    let mut records = Vec::new();
    let mut graphs = Vec::new();
    let mut failures = Vec::new();
    for (idx, (record, parse)) in all.into_iter().zip(parsed).enumerate() {
        match parse {
            Ok(graph) => {
                records.push(record);
                graphs.push(graph);
            }
            Err(error) => failures.push(RecordFailure {
                id: record.id,
                line: idx + 1,
                error,
            }),
        }
    }
    let property_names: Vec<String> = records
        .first()
        .map(|r| r.properties.keys().cloned().collect())
        .unwrap_or_default();
    for record in &records {
        let keys: Vec<&String> = record.properties.keys().collect();
        if keys.len() != property_names.len()
            || keys.iter().zip(&property_names).any(|(a, b)| *a != b)
        {
            return Err(PipelineError::DatasetInvalid {
                line: 0,
                message: format!(
                    "record {} has property names {:?}, expected {:?}",
                    record.id, keys, property_names
                ),
            });
        }
    }
    let mut properties = Array2::zeros((records.len(), property_names.len()));
    for (i, record) in records.iter().enumerate() {
        for (j, name) in property_names.iter().enumerate() {
            properties[[i, j]] = record.properties[name];
        }
    }
    Ok(PreparedDataset {
        records,
        graphs,
        failures,
        property_names,
        properties,
    })
}

/// Persisted featurization state: the scattering config, the alphabet it
/// ran with, the selector in effect, and dataset-wide standardization
/// statistics for the emitted features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankCheckpoint {
    pub scattering: ScatteringConfig,
    pub alphabet: Vec<String>,
    pub selector: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub feature_labels: Vec<String>,
}

fn column_stats(features: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = features.nrows().max(1) as f64;
    let mut mean = vec![0.0; features.ncols()];
    let mut std = vec![0.0; features.ncols()];
    for c in 0..features.ncols() {
        let m = features.column(c).sum() / n;
        let v = features.column(c).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean[c] = m;
        std[c] = v.sqrt();
    }
    (mean, std)
}

fn write_features_csv(
    path: &Path,
    ids: &[String],
    features: &Array2<f64>,
    labels: &[String],
) -> Result<(), PipelineError> {
    let mut out = String::new();
    out.push_str("id,");
    out.push_str(&labels.join(","));
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in features.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn read_features_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>), PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| corrupt(path, "empty file"))?;
    let width = header.split(',').count().saturating_sub(1);
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let id = cells
            .next()
            .ok_or_else(|| corrupt(path, format!("row {} is empty", i + 1)))?;
        ids.push(id.to_string());
        let mut count = 0;
        for cell in cells {
            let v: f64 = cell
                .parse()
                .map_err(|e| corrupt(path, format!("row {} column {count}: {e}", i + 1)))?;
            values.push(v);
            count += 1;
        }
        if count != width {
            return Err(corrupt(
                path,
                format!("row {} has {count} values, expected {width}", i + 1),
            ));
        }
    }
    let rows = ids.len();
    let features = Array2::from_shape_vec((rows, width), values)
        .map_err(|e| corrupt(path, e.to_string()))?;
    Ok((ids, features))
}

/// Featurization result summary.
#[derive(Debug, Clone)]
pub struct FeaturizeOutcome {
    pub rows: usize,
    pub feature_dim: usize,
    pub failures: Vec<RecordFailure>,
}

/// Parses the dataset, computes scattering features for every record, and
/// writes `features.csv`, `bank.json`, and the failure sidecar. Records
/// that fail to parse are tolerated up to 1% of the dataset (with a floor
/// of one record so tiny datasets survive a single bad line); beyond that
/// the run aborts after writing the sidecar.
pub fn run_featurize(cfg: &RunConfig, out: &Path) -> Result<FeaturizeOutcome, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let alphabet = AtomAlphabet::standard();
    let prepared = prepare_dataset(&cfg.dataset, &alphabet)?;
    let total = prepared.records.len() + prepared.failures.len();
    let sidecar = out.join(FEATURIZE_ERRORS_FILE);
    let mut sidecar_text = String::new();
    for failure in &prepared.failures {
        sidecar_text.push_str(&serde_json::to_string(failure).expect("failure serializes"));
        sidecar_text.push('\n');
    }
    write_atomic(&sidecar, sidecar_text.as_bytes())?;
    let tolerated = (total / 100).max(1);
    if prepared.failures.len() > tolerated {
        return Err(PipelineError::TooManyRecordFailures {
            failed: prepared.failures.len(),
            total,
            tolerated,
            sidecar,
        });
    }
    let selector =
        SelectorWeights::dyadic_init(cfg.scattering.num_scales, cfg.scattering.max_power)?;
    let features = featurize_dataset(
        &prepared.graphs,
        &alphabet,
        &cfg.scattering,
        Some(&selector),
    )?;
    let labels = feature_labels(&cfg.scattering, &alphabet);
    let ids: Vec<String> = prepared.records.iter().map(|r| r.id.clone()).collect();
    write_features_csv(&out.join(FEATURES_FILE), &ids, &features, &labels)?;
    let (feature_mean, feature_std) = column_stats(&features);
    let bank = BankCheckpoint {
        scattering: cfg.scattering.clone(),
        alphabet: alphabet.symbols().to_vec(),
        selector: selector
            .weights()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
        feature_mean,
        feature_std,
        feature_labels: labels,
    };
    let bank_path = out.join(BANK_FILE);
    let bank_json =
        serde_json::to_string_pretty(&bank).map_err(|e| corrupt(&bank_path, e.to_string()))?;
    write_atomic(&bank_path, format!("{bank_json}\n").as_bytes())?;
    Ok(FeaturizeOutcome {
        rows: features.nrows(),
        feature_dim: features.ncols(),
        failures: prepared.failures,
    })
}

fn read_bank(out: &Path) -> Result<BankCheckpoint, PipelineError> {
    let path = out.join(BANK_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| PipelineError::MissingPrerequisite {
        what: BANK_FILE.into(),
        hint: "run the featurize command first".into(),
    })?;
    serde_json::from_str(&text).map_err(|e| corrupt(&path, e.to_string()))
}

fn load_features(out: &Path) -> Result<(Vec<String>, Array2<f64>), PipelineError> {
    let path = out.join(FEATURES_FILE);
    if !path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            what: FEATURES_FILE.into(),
            hint: "run the featurize command first".into(),
        });
    }
    read_features_csv(&path)
}

/// Ablation switches applied on top of the config's latent section.
#[derive(Debug, Clone, Copy, Default)]
pub struct AeOptions {
    pub variational: bool,
    pub no_regression: bool,
    /// Overrides the scattering mode from the config when set.
    pub scattering_mode: Option<ScatteringMode>,
}

/// Training result summary.
#[derive(Debug, Clone)]
pub struct AeOutcome {
    pub model_label: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

/// Human-readable ablation row name: AE, AE+REGR, VAE, or VAE+REGR.
pub fn model_label(cfg: &LatentModelConfig) -> String {
    let base = if cfg.variational { "VAE" } else { "AE" };
    if cfg.regression_weight > 0.0 && !cfg.property_names.is_empty() {
        format!("{base}+REGR")
    } else {
        base.to_string()
    }
}

fn write_ae_history(path: &Path, history: &[EpochStats]) -> Result<(), PipelineError> {
    let mut out = String::from("epoch,train_loss,val_loss,recon_loss,property_loss,kl_loss\n");
    for row in history {
        let cells = [
            fmt_f64(row.train_loss),
            fmt_f64(row.val_loss),
            fmt_f64(row.recon_loss),
            fmt_f64(row.property_loss),
            fmt_f64(row.kl_loss),
        ];
        out.push_str(&format!("{},{}\n", row.epoch, cells.join(",")));
    }
    write_atomic(path, out.as_bytes())
}

fn align_properties(
    ids: &[String],
    prepared: &PreparedDataset,
) -> Result<Array2<f64>, PipelineError> {
    let index: BTreeMap<&str, usize> = prepared
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut out = Array2::zeros((ids.len(), prepared.property_names.len()));
    for (row, id) in ids.iter().enumerate() {
        let &src = index
            .get(id.as_str())
            .ok_or_else(|| PipelineError::DatasetInvalid {
                line: 0,
                message: format!(
                    "features.csv row {id} is not in the dataset; re-run featurize"
                ),
            })?;
        for c in 0..prepared.property_names.len() {
            out[[row, c]] = prepared.properties[[src, c]];
        }
    }
    Ok(out)
}

/// Trains the (V)AE on the featurized dataset and writes `ae.bin`,
/// `ae.json`, and `ae_history.csv`. In learned-scale mode the wavelet
/// selector trains jointly; the final selector is written to
/// `selector.csv`, and `features.csv` and `bank.json` are rewritten at
/// the trained selector so downstream stages see the features the model
/// was tuned for.
pub fn run_train_ae(
    cfg: &RunConfig,
    out: &Path,
    options: AeOptions,
) -> Result<AeOutcome, PipelineError> {
    cfg.validate()?;
    let (ids, features) = load_features(out)?;
    let mut bank = read_bank(out)?;
    let alphabet = AtomAlphabet::standard();
    let prepared = prepare_dataset(&cfg.dataset, &alphabet)?;
    let properties = align_properties(&ids, &prepared)?;

    let mut latent_cfg = cfg.latent.clone();
    latent_cfg.input_dim = features.ncols();
    latent_cfg.variational = latent_cfg.variational || options.variational;
    latent_cfg.property_names = prepared.property_names.clone();
    if options.no_regression || latent_cfg.property_names.is_empty() {
        latent_cfg.regression_weight = 0.0;
    }
    let mode = options.scattering_mode.unwrap_or(cfg.scattering.mode);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LatentModel::new(latent_cfg, &mut rng)?;
    let report: TrainReport = match mode {
        ScatteringMode::Dyadic => train(&mut model, &features, &properties, cfg.seed)?,
        ScatteringMode::Learned => {
            let graph_by_id: BTreeMap<&str, &MolecularGraph> = prepared
                .records
                .iter()
                .zip(&prepared.graphs)
                .map(|(r, g)| (r.id.as_str(), g))
                .collect();
            let stacks: Vec<DiffusionStacks> = ids
                .iter()
                .map(|id| {
                    graph_by_id
                        .get(id.as_str())
                        .map(|g| diffusion_stacks(g, &alphabet, cfg.scattering.max_power))
                        .ok_or_else(|| PipelineError::DatasetInvalid {
                            line: 0,
                            message: format!(
                                "features.csv row {id} is not in the dataset; re-run featurize"
                            ),
                        })
                })
                .collect::<Result<_, _>>()?;
            let mut logits =
                dyadic_selector_logits(cfg.scattering.num_scales, cfg.scattering.max_power);
            let report = train_with_selector(
                &mut model,
                &stacks,
                &cfg.scattering,
                &mut logits,
                &properties,
                cfg.seed,
            )?;
            let rows = selector_rows(&logits);
            let mut selector_csv = String::new();
            for r in rows.rows() {
                let cells: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
                selector_csv.push_str(&cells.join(","));
                selector_csv.push('\n');
            }
            write_atomic(&out.join(SELECTOR_FILE), selector_csv.as_bytes())?;
            let refreshed = features_at_selector(&stacks, &cfg.scattering, &rows);
            write_features_csv(
                &out.join(FEATURES_FILE),
                &ids,
                &refreshed,
                &bank.feature_labels,
            )?;
            let (mean, std) = column_stats(&refreshed);
            bank.selector = rows.rows().into_iter().map(|r| r.to_vec()).collect();
            bank.feature_mean = mean;
            bank.feature_std = std;
            let bank_path = out.join(BANK_FILE);
            let bank_json = serde_json::to_string_pretty(&bank)
                .map_err(|e| corrupt(&bank_path, e.to_string()))?;
            write_atomic(&bank_path, format!("{bank_json}\n").as_bytes())?;
            report
        }
    };

    write_atomic(&out.join(AE_PARAMS_FILE), &model.params_blob())?;
    let manifest = model.manifest(report.best_epoch, report.best_val_loss);
    let manifest_path = out.join(AE_MANIFEST_FILE);
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| corrupt(&manifest_path, e.to_string()))?;
    write_atomic(&manifest_path, format!("{manifest_json}\n").as_bytes())?;
    write_ae_history(&out.join(AE_HISTORY_FILE), &report.history)?;
    Ok(AeOutcome {
        model_label: model_label(&model.config),
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        epochs_run: report.history.len(),
    })
}

fn load_latent_model(out: &Path) -> Result<LatentModel, PipelineError> {
    let manifest_path = out.join(AE_MANIFEST_FILE);
    let params_path = out.join(AE_PARAMS_FILE);
    if !manifest_path.exists() || !params_path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            what: format!("{AE_MANIFEST_FILE} and {AE_PARAMS_FILE}"),
            hint: "run the train-ae command first".into(),
        });
    }
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: LatentManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| corrupt(&manifest_path, e.to_string()))?;
    let blob = std::fs::read(&params_path).map_err(|e| io_err(&params_path, e))?;
    Ok(LatentModel::from_parts(&manifest, &blob)?)
}

fn load_generator(out: &Path) -> Result<GeneratorModel, PipelineError> {
    let manifest_path = out.join(GAN_MANIFEST_FILE);
    let params_path = out.join(GAN_PARAMS_FILE);
    if !manifest_path.exists() || !params_path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            what: format!("{GAN_MANIFEST_FILE} and {GAN_PARAMS_FILE}"),
            hint: "run the train-gan command first".into(),
        });
    }
    let manifest_text =
        std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: GanManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| corrupt(&manifest_path, e.to_string()))?;
    let blob = std::fs::read(&params_path).map_err(|e| io_err(&params_path, e))?;
    Ok(GeneratorModel::from_parts(&manifest, &blob)?)
}

/// GAN training result summary.
#[derive(Debug, Clone)]
pub struct GanOutcome {
    pub steps: usize,
    pub n_max: usize,
    pub final_d_loss: f64,
    pub final_g_loss: f64,
}

fn write_gan_history(path: &Path, history: &[GanStepStats]) -> Result<(), PipelineError> {
    let mut out = String::from("step,d_loss,g_total,adjacency,adversarial,smoothness\n");
    for row in history {
        let cells = [
            fmt_f64(row.d_loss),
            fmt_f64(row.g_total),
            fmt_f64(row.adjacency),
            fmt_f64(row.adversarial),
            fmt_f64(row.smoothness),
        ];
        out.push_str(&format!("{},{}\n", row.step, cells.join(",")));
    }
    write_atomic(path, out.as_bytes())
}

/// Trains the latent-interpolation generator against the frozen
/// autoencoder and writes `gan.bin`, `gan.json`, and `gan_history.csv`.
pub fn run_train_gan(cfg: &RunConfig, out: &Path) -> Result<GanOutcome, PipelineError> {
    cfg.validate()?;
    let latent = load_latent_model(out)?;
    let (ids, features) = load_features(out)?;
    let alphabet = AtomAlphabet::standard();
    let prepared = prepare_dataset(&cfg.dataset, &alphabet)?;
    let graph_by_id: BTreeMap<&str, &MolecularGraph> = prepared
        .records
        .iter()
        .zip(&prepared.graphs)
        .map(|(r, g)| (r.id.as_str(), g))
        .collect();
    let graphs: Vec<MolecularGraph> = ids
        .iter()
        .map(|id| {
            graph_by_id
                .get(id.as_str())
                .map(|g| (*g).clone())
                .ok_or_else(|| PipelineError::DatasetInvalid {
                    line: 0,
                    message: format!(
                        "features.csv row {id} is not in the dataset; re-run featurize"
                    ),
                })
        })
        .collect::<Result<_, _>>()?;
    let max_n = graphs.iter().map(MolecularGraph::n).max().unwrap_or(0);
    let mut gan_cfg = cfg.generator.clone();
    if gan_cfg.n_max == 0 {
        gan_cfg.n_max = max_n;
    } else if gan_cfg.n_max < max_n {
        return Err(PipelineError::Config {
            field: "generator.n_max".into(),
            message: format!("{} is below the dataset maximum {max_n}", gan_cfg.n_max),
        });
    }
    if gan_cfg.latent_dim == 0 {
        gan_cfg.latent_dim = latent.config.latent_dim;
    }
    let (model, history) = train_gan(gan_cfg, &latent, &graphs, &features, cfg.seed)?;
    write_atomic(&out.join(GAN_PARAMS_FILE), &model.params_blob())?;
    let manifest = model.manifest(history.len());
    let manifest_path = out.join(GAN_MANIFEST_FILE);
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| corrupt(&manifest_path, e.to_string()))?;
    write_atomic(&manifest_path, format!("{manifest_json}\n").as_bytes())?;
    write_gan_history(&out.join(GAN_HISTORY_FILE), &history)?;
    let last = history.last();
    Ok(GanOutcome {
        steps: history.len(),
        n_max: model.config.n_max,
        final_d_loss: last.map_or(f64::NAN, |s| s.d_loss),
        final_g_loss: last.map_or(f64::NAN, |s| s.g_total),
    })
}

/// One generated sample as persisted in `samples.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleLine {
    pub sample_id: usize,
    pub provenance: SampleProvenance,
    pub n: usize,
    pub soft_adjacency: Vec<Vec<f64>>,
}

impl SampleLine {
    fn from_sample(sample: &GeneratedSample) -> Self {
        let n = sample.soft_adjacency.nrows();
        Self {
            sample_id: sample.sample_id,
            provenance: sample.provenance.clone(),
            n,
            soft_adjacency: sample
                .soft_adjacency
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
        }
    }

    fn soft_matrix(&self) -> Result<Array2<f64>, String> {
        let n = self.n;
        if self.soft_adjacency.len() != n || self.soft_adjacency.iter().any(|r| r.len() != n) {
            return Err(format!("sample {} adjacency is not {n}x{n}", self.sample_id));
        }
        let mut out = Array2::zeros((n, n));
        for (i, row) in self.soft_adjacency.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                out[[i, j]] = *v;
            }
        }
        Ok(out)
    }
}

/// Generation result summary.
#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub count: usize,
    pub mode: SampleMode,
    /// Verdict tallies over the fresh samples; None when count is 0.
    pub validity: Option<ValiditySummary>,
}

/// Samples soft adjacencies from the trained generator, writes
/// `samples.jsonl`, and tallies validity verdicts for the summary line.
pub fn run_generate(
    cfg: &RunConfig,
    out: &Path,
    count: usize,
    mode: SampleMode,
) -> Result<GenerateOutcome, PipelineError> {
    cfg.validate()?;
    let latent = load_latent_model(out)?;
    let generator = load_generator(out)?;
    let (_, features) = load_features(out)?;
    let samples = sample_molecules(&generator, &latent, &features, count, mode, cfg.seed)?;
    let mut text = String::new();
    for sample in &samples {
        let line = SampleLine::from_sample(sample);
        text.push_str(&serde_json::to_string(&line).expect("sample serializes"));
        text.push('\n');
    }
    write_atomic(&out.join(SAMPLES_FILE), text.as_bytes())?;
    let validity = if samples.is_empty() {
        None
    } else {
        let verdicts: Vec<ValidityVerdict> = samples
            .iter()
            .map(|s| check_sample(&s.soft_adjacency, &cfg.validity).1)
            .collect();
        Some(ValiditySummary::from_verdicts(&verdicts)?)
    };
    Ok(GenerateOutcome {
        count: samples.len(),
        mode,
        validity,
    })
}

/// One validated sample as persisted in `validated.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidatedLine {
    pub sample_id: usize,
    pub provenance: SampleProvenance,
    pub verdict: ValidityVerdict,
    /// Edges of the surviving component, relabeled 0..component_size.
    pub component_edges: Vec<(usize, usize)>,
}

/// Applies the validity rules to every persisted sample and writes
/// `validated.jsonl`.
pub fn run_validate(cfg: &RunConfig, out: &Path) -> Result<ValiditySummary, PipelineError> {
    run_validate_from(cfg, out, &out.join(SAMPLES_FILE))
}

/// [`run_validate`] against an explicit samples file instead of the one
/// in the output directory.
pub fn run_validate_from(
    cfg: &RunConfig,
    out: &Path,
    samples_path: &Path,
) -> Result<ValiditySummary, PipelineError> {
    cfg.validate()?;
    if !samples_path.exists() {
        return Err(PipelineError::MissingPrerequisite {
            what: samples_path.display().to_string(),
            hint: "run the generate command first".into(),
        });
    }
    let text = std::fs::read_to_string(samples_path).map_err(|e| io_err(samples_path, e))?;
    let mut verdicts = Vec::new();
    let mut out_text = String::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: SampleLine = serde_json::from_str(line)
            .map_err(|e| corrupt(samples_path, format!("line {}: {e}", idx + 1)))?;
        let soft = sample
            .soft_matrix()
            .map_err(|m| corrupt(samples_path, m))?;
        let (component, verdict) = check_sample(&soft, &cfg.validity);
        let validated = ValidatedLine {
            sample_id: sample.sample_id,
            provenance: sample.provenance,
            verdict: verdict.clone(),
            component_edges: component.edges(),
        };
        out_text.push_str(&serde_json::to_string(&validated).expect("verdict serializes"));
        out_text.push('\n');
        verdicts.push(verdict);
    }
    write_atomic(&out.join(VALIDATED_FILE), out_text.as_bytes())?;
    Ok(ValiditySummary::from_verdicts(&verdicts)?)
}

/// Evaluates the trained model on the held-out test split and writes
/// `report.json` and `report.txt`. Models trained without the property
/// branch get a post-hoc probe (a regressor fitted on the frozen latent
/// codes) so their prediction error is comparable. Verdicts from
/// `validated.jsonl` are folded in when that file exists.
pub fn run_metrics(cfg: &RunConfig, out: &Path) -> Result<MetricsReport, PipelineError> {
    cfg.validate()?;
    let mut latent = load_latent_model(out)?;
    let (ids, features) = load_features(out)?;
    let alphabet = AtomAlphabet::standard();
    let prepared = prepare_dataset(&cfg.dataset, &alphabet)?;
    let properties = align_properties(&ids, &prepared)?;
    let mut label = model_label(&latent.config);
    let probe = latent.config.regression_weight == 0.0 && !prepared.property_names.is_empty();
    if probe {
        latent.config.property_names = prepared.property_names.clone();
        fit_regressor(&mut latent, &features, &properties, cfg.seed)?;
        label = format!("{label}+probe");
    }
    let split = crate::latent::DataSplit::new(ids.len(), cfg.seed)?;
    let test_features = select_rows(&features, &split.test);
    let test_properties = select_rows(&properties, &split.test);
    let verdicts = read_verdicts(out)?;
    let report = build_report(
        &label,
        &latent,
        &test_features,
        &test_properties,
        &prepared.property_names,
        &cfg.smoothness,
        verdicts.as_deref(),
    )?;
    let json_path = out.join(REPORT_JSON_FILE);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| corrupt(&json_path, e.to_string()))?;
    write_atomic(&json_path, format!("{json}\n").as_bytes())?;
    write_atomic(&out.join(REPORT_TEXT_FILE), report.render_text().as_bytes())?;
    Ok(report)
}

fn select_rows(data: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), data.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        for c in 0..data.ncols() {
            out[[i, c]] = data[[r, c]];
        }
    }
    out
}

fn read_verdicts(out: &Path) -> Result<Option<Vec<ValidityVerdict>>, PipelineError> {
    let path = out.join(VALIDATED_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut verdicts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let validated: ValidatedLine = serde_json::from_str(line)
            .map_err(|e| corrupt(&path, format!("line {}: {e}", idx + 1)))?;
        verdicts.push(validated.verdict);
    }
    if verdicts.is_empty() {
        Ok(None)
    } else {
        Ok(Some(verdicts))
    }
}
