//! Command-line front end for the molecular generation pipeline.
//!
//! Every subcommand takes a run-configuration JSON file and an output
//! directory, and writes fixed-name artifacts there. Exit code 0 means
//! success, 2 means the config, dataset, or command order needs fixing,
//! and 1 means a runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use grassy::gan::SampleMode;
use grassy::pipeline::{
    run_featurize, run_generate, run_metrics, run_train_ae, run_train_gan, run_validate,
    run_validate_from, AeOptions, PipelineError, RunConfig,
};
use grassy::metrics::ValiditySummary;
use grassy::scattering::ScatteringMode;

#[derive(Parser)]
#[command(
    name = "grassy",
    version,
    about = "Scattering-feature molecular autoencoding and generation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the dataset and write scattering features
    Featurize(CommonArgs),
    /// Train the latent autoencoder on the featurized dataset
    TrainAe {
        #[command(flatten)]
        common: CommonArgs,
        /// Train the variational flavor regardless of the config
        #[arg(long)]
        variational: bool,
        /// Drop the property-regression term from the loss
        #[arg(long = "no-regr")]
        no_regression: bool,
        /// Overrides the wavelet scale mode from the config
        #[arg(long, value_enum)]
        scattering_mode: Option<ScaleModeArg>,
    },
    /// Train the generator against the frozen autoencoder
    TrainGan(CommonArgs),
    /// Sample soft adjacency matrices from the trained generator
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of samples to draw
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// How latent seeds are produced
        #[arg(long, value_enum, default_value_t = SampleModeArg::Perturb)]
        mode: SampleModeArg,
    },
    /// Apply the validity rules to generated samples
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        /// Samples file to judge instead of the one in the output directory
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Evaluate the trained model and write the report
    Metrics(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration JSON file
    #[arg(long)]
    config: PathBuf,
    /// Directory the pipeline artifacts live in
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleModeArg {
    Dyadic,
    Learned,
}

impl From<ScaleModeArg> for ScatteringMode {
    fn from(arg: ScaleModeArg) -> Self {
        match arg {
            ScaleModeArg::Dyadic => ScatteringMode::Dyadic,
            ScaleModeArg::Learned => ScatteringMode::Learned,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SampleModeArg {
    Perturb,
    Interpolate,
}

impl From<SampleModeArg> for SampleMode {
    fn from(arg: SampleModeArg) -> Self {
        match arg {
            SampleModeArg::Perturb => SampleMode::Perturb,
            SampleModeArg::Interpolate => SampleMode::Interpolate,
        }
    }
}

fn validity_line(summary: &ValiditySummary) -> String {
    let mut line = format!(
        "{}/{} valid ({:.1}%)",
        summary.valid,
        summary.total,
        summary.fraction * 100.0
    );
    if !summary.failures_by_rule.is_empty() {
        let rules: Vec<String> = summary
            .failures_by_rule
            .iter()
            .map(|(rule, count)| format!("{rule}={count}"))
            .collect();
        line.push_str(&format!("; failures: {}", rules.join(" ")));
    }
    line
}

fn dispatch(command: &Command) -> Result<String, PipelineError> {
    match command {
        Command::Featurize(common) => {
            let cfg = common.load()?;
            let outcome = run_featurize(&cfg, &common.out)?;
            let mut msg = format!(
                "featurized {} records ({} features each)",
                outcome.rows, outcome.feature_dim
            );
            if !outcome.failures.is_empty() {
                msg.push_str(&format!(
                    "; {} record(s) skipped, see featurize_errors.jsonl",
                    outcome.failures.len()
                ));
            }
            Ok(msg)
        }
        Command::TrainAe {
            common,
            variational,
            no_regression,
            scattering_mode,
        } => {
            let cfg = common.load()?;
            let options = AeOptions {
                variational: *variational,
                no_regression: *no_regression,
                scattering_mode: scattering_mode.map(Into::into),
            };
            let outcome = run_train_ae(&cfg, &common.out, options)?;
            Ok(format!(
                "trained {}: best epoch {} (val loss {:.6e}) after {} epochs",
                outcome.model_label,
                outcome.best_epoch,
                outcome.best_val_loss,
                outcome.epochs_run
            ))
        }
        Command::TrainGan(common) => {
            let cfg = common.load()?;
            let outcome = run_train_gan(&cfg, &common.out)?;
            Ok(format!(
                "trained generator for {} steps (n_max {}): d_loss {:.6e}, g_loss {:.6e}",
                outcome.steps, outcome.n_max, outcome.final_d_loss, outcome.final_g_loss
            ))
        }
        Command::Generate {
            common,
            count,
            mode,
        } => {
            let cfg = common.load()?;
            let outcome = run_generate(&cfg, &common.out, *count, (*mode).into())?;
            let mode_name = match mode {
                SampleModeArg::Perturb => "perturb",
                SampleModeArg::Interpolate => "interpolate",
            };
            let mut msg = format!("wrote {} samples ({mode_name})", outcome.count);
            if let Some(summary) = &outcome.validity {
                msg.push_str(&format!("; {}", validity_line(summary)));
            }
            Ok(msg)
        }
        Command::Validate { common, samples } => {
            let cfg = common.load()?;
            let summary = match samples {
                Some(path) => run_validate_from(&cfg, &common.out, path)?,
                None => run_validate(&cfg, &common.out)?,
            };
            Ok(format!("judged {} samples: {}", summary.total, validity_line(&summary)))
        }
        Command::Metrics(common) => {
            let cfg = common.load()?;
            let report = run_metrics(&cfg, &common.out)?;
            Ok(report.render_text())
        }
    }
}

/// Config, dataset, and command-order mistakes are the caller's to fix;
/// everything else is a runtime failure.
fn exit_code_for(error: &PipelineError) -> u8 {
    match error {
        PipelineError::Config { .. }
        | PipelineError::DatasetInvalid { .. }
        | PipelineError::MissingPrerequisite { .. }
        | PipelineError::ArtifactCorrupt { .. } => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GRASSY_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("GRASSY_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err("GRASSY_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("cannot size the thread pool: {e}"))
}

fn main() -> ExitCode {
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}
