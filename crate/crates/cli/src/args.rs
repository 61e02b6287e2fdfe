use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use diffbeam::harness::ExperimentConfig;
use diffbeam::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "diffbeam", version, about = "Diffusion-model power allocation for multi-user downlinks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one architecture on one (rho, seed) point and save the model
    Train(TrainArgs),
    /// Evaluate a saved checkpoint against WMMSE on a regenerated test set
    Eval(EvalArgs),
    /// Run the full correlation sweep and write results.csv, traces.csv and the plot
    Sweep(SweepArgs),
    /// Compare WMMSE with exhaustive grid search on small instances
    Oracle(OracleArgs),
    /// Run the built-in invariant checks
    Selftest,
}

/// Overrides for `ExperimentConfig` fields. Unset flags keep the file or
/// default value.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// TOML experiment config; defaults are used without one
    #[arg(long, short)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub output_dir: Option<PathBuf>,

    /// Worker threads, 0 for all cores
    #[arg(long)]
    pub threads: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub architectures: Option<Vec<String>>,

    #[arg(long, value_delimiter = ',')]
    pub rhos: Option<Vec<f64>>,

    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,

    #[arg(long)]
    pub n_train: Option<usize>,

    #[arg(long)]
    pub n_test: Option<usize>,

    /// Candidate counts for diffusion policies
    #[arg(long, value_delimiter = ',')]
    pub n_candidates: Option<Vec<usize>>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub antennas: Option<usize>,

    #[arg(long)]
    pub users: Option<usize>,

    #[arg(long)]
    pub snr_db: Option<f64>,

    #[arg(long)]
    pub save_checkpoints: bool,

    #[arg(long)]
    pub no_plot: bool,
}

impl ConfigArgs {
    /// File (or defaults), then environment, then flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
                Error::Io { .. } => Error::InvalidConfig(e.to_string()),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        }
        .with_env_overrides()?;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone(); })*
            };
        }
        set!(
            output_dir => output_dir,
            threads => threads,
            architectures => architectures,
            rhos => rhos,
            seeds => seeds,
            n_train => n_train,
            n_test => n_test,
            n_candidates => n_candidates,
            epochs => train.epochs,
            batch_size => train.batch_size,
            antennas => scenario.n_antennas,
            users => scenario.n_users,
            snr_db => scenario.snr_db,
        );
        cfg.save_checkpoints |= self.save_checkpoints;
        cfg.plot &= !self.no_plot;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// DM-GNN, DM-FNN, GNN or FNN
    #[arg(long)]
    pub arch: String,

    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Checkpoint path; defaults to <output-dir>/checkpoints/<arch>_rho<rho>_seed<seed>.ckpt
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 50)]
    pub instances: usize,

    #[arg(long, default_value_t = 2)]
    pub antennas: usize,

    #[arg(long, default_value_t = 2)]
    pub users: usize,

    /// Grid levels per user; the grid step is P / levels
    #[arg(long, default_value_t = 200)]
    pub levels: usize,

    #[arg(long, default_value_t = 10.0)]
    pub snr_db: f64,

    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,

    #[arg(long, default_value_t = 2024)]
    pub seed: u64,

    /// Print one line per instance
    #[arg(long, short)]
    pub verbose: bool,
}
