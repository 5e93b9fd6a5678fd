use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "toxtree", version, about = "Cardiac ion-channel liability modeling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Run-wide settings. Each may also come from a `key=value` config file;
/// flags take precedence.
#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Config file with key=value lines (seed, threads, target, thresholds,
    /// resample, whitelist, out).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// herg or nav15.
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// Three descending PIC50 cut-offs, e.g. 6,5,4.5.
    #[arg(long, global = true)]
    pub thresholds: Option<String>,
    /// original, over or under.
    #[arg(long, global = true)]
    pub resample: Option<String>,
    #[arg(long, global = true)]
    pub whitelist: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridSize {
    /// The full published search spaces.
    Full,
    /// A few configurations per family, for smoke runs.
    Quick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Rf,
    Svm,
    Mlp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize potencies and resolve duplicate measurements.
    Curate {
        #[arg(long)]
        activities: PathBuf,
        /// compound or smiles.
        #[arg(long, default_value = "compound")]
        dedup_key: String,
        #[arg(long, default_value = "HEK293,CHO")]
        cell_preference: String,
        #[arg(long, default_value_t = 1.0)]
        max_span: f64,
    },
    /// Filter descriptors and write a feature whitelist.
    SelectFeatures {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        compounds: PathBuf,
        /// Drop features with more missing cells than this.
        #[arg(long)]
        max_missing: Option<usize>,
        /// Drop features whose modal value occurs more often than this.
        #[arg(long)]
        max_constant: Option<usize>,
        #[arg(long, default_value_t = 0.65)]
        corr_cutoff: f64,
        /// LASSO penalty; chosen on a holdout when omitted.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
    },
    /// Cross-validated grid search for one model family.
    Tune {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        compounds: PathBuf,
        #[arg(long, value_enum)]
        family: Option<Family>,
        /// Binarize at this PIC50; four-class labels when omitted.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_enum, default_value = "full")]
        grid: GridSize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
    },
    /// Tune, fit and bundle a complete cascade.
    Train {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        compounds: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, value_enum, default_value = "full")]
        grid: GridSize,
        /// Share of variance the PCA keeps (nav15 only).
        #[arg(long, default_value_t = 0.9)]
        pca_energy: f64,
        #[arg(long, default_value_t = 1e-9)]
        consensus_tolerance: f64,
        /// Timestamp recorded in the bundle metadata.
        #[arg(long)]
        created_at: Option<String>,
    },
    /// Score a bundle against known potencies.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        compounds: PathBuf,
    },
    /// Classify descriptor rows with a bundle.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
    },
}
