mod cohort;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Spatial-temporal omics classification of fMRI volumes.
///
/// Exit codes: 0 success, 2 configuration, 3 I/O, 4 data validation,
/// 5 numerical failure. Errors print one line: `error[<category>]: <message>`.
#[derive(Parser, Debug)]
#[command(name = "sto", version)]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true, env = "STO_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// JSON config with `synth`, `prep` and `experiment` sections, merged
    /// over the built-in defaults. Flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PrepArgs {
    /// Skip the 0.01 Hz to Nyquist band-pass.
    #[arg(long)]
    pub no_bandpass: bool,
    /// ReHo neighbourhood: 7, 19 or 27 voxels.
    #[arg(long)]
    pub reho_neighborhood: Option<usize>,
    /// Correlation threshold shared by DC and LFCD.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Weighted rather than binarized degree centrality.
    #[arg(long)]
    pub weighted_dc: bool,
    /// Fisher z-transform connectome features.
    #[arg(long)]
    pub fisher_z: bool,
    /// Cubic grid the derivative stacks are resampled to.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Validate every N epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Evaluations without improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Network widths: `full` or `mini`.
    #[arg(long)]
    pub widths: Option<String>,
    /// Select checkpoints on the test fold instead of a carved-out
    /// validation set (recorded in the leakage audit).
    #[arg(long)]
    pub select_on_test: bool,
    /// Fraction of training subjects held out for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic two-class cohort directory.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subjects_per_class: Option<usize>,
        /// Cubic volume extent.
        #[arg(long)]
        extent: Option<usize>,
        #[arg(long)]
        timepoints: Option<usize>,
        #[arg(long)]
        effect_size: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
        /// Write `.nii.gz` subject files.
        #[arg(long)]
        gzip: bool,
    },
    /// Compute the four-channel derivative stack of one 4D image.
    Derive {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Write ROI mean time series (T rows, one column per ROI) as CSV.
    Parcellate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
    },
    /// Connectome feature vectors from ROI time-series CSVs, one row per file.
    Features {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Also fit the quartile feature mask on these subjects and save it.
        #[arg(long)]
        mask_out: Option<PathBuf>,
        #[arg(long)]
        fisher_z: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train one model on a cohort directory.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// sto, sto-diagnet, stv-only[:reho+dc+lfcd+vmhc], str, fc-mlp, diagnet, conv1d.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a cohort with a checkpoint and report the AUC.
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameters, forward FLOPs and memory of a model, as JSON.
    Stats {
        #[arg(long, default_value = "sto")]
        variant: String,
        /// Atlas size M; the connectome has M(M-1)/2 features.
        #[arg(long, default_value_t = 116)]
        n_rois: usize,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// ROI series length for the 1D-convolution baseline.
        #[arg(long, default_value_t = 100)]
        crop_len: usize,
        #[arg(long, default_value = "full")]
        widths: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross-validated comparison on a synthetic cohort and write
    /// the performance and ablation tables.
    Reproduce {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Small cohort and networks; minutes on one core.
        #[arg(long)]
        quick: bool,
        /// Seeds both the cohort and the experiment.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        effect_size: Option<f64>,
        #[arg(long)]
        subjects_per_class: Option<usize>,
        /// Comma-separated variant names (see `train --help`).
        #[arg(long)]
        variants: Option<String>,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[config]: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", cat.as_str());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
