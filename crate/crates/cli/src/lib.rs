//! Command-line front end: generate benchmark data, train, evaluate and
//! diagnose lifted Koopman models.
//!
//! Every command resolves its settings from defaults, an optional flat
//! configuration file (`--config`) and command-line flags, in increasing
//! order of precedence. Flags that have no dedicated option can be given as
//! `--set key=value`.

pub mod commands;
pub mod config;
pub mod error;
pub mod trace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "koopid", version, about = "Identify lifted Koopman models from input-output data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate benchmark data (CSV splits plus meta.json and system.json).
    Generate(GenerateArgs),
    /// Train a model; writes model.json, checkpoint.json, report.json and config.txt.
    Train(TrainArgs),
    /// Evaluate a model or an exact oracle; writes metrics.json and trace.csv.
    Eval(EvalArgs),
    /// Observability rank, spectral radius and parameter counts as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// poly | wh | linear
    #[arg(long)]
    pub system: Option<String>,
    /// Signal-to-noise ratio in dB, or `none`.
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub system_seed: Option<String>,
    #[arg(long)]
    pub n_train: Option<String>,
    #[arg(long)]
    pub n_val: Option<String>,
    #[arg(long)]
    pub n_test: Option<String>,
    /// State dimension of the linear system.
    #[arg(long)]
    pub order: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `generate` (or of the same layout).
    #[arg(long)]
    pub data: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Section length.
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Encoder lag.
    #[arg(long)]
    pub lag: Option<String>,
    /// Lifted state dimension.
    #[arg(long)]
    pub n_z: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// linear | bilinear | input_affine | general
    #[arg(long)]
    pub b_structure: Option<String>,
    /// none | linear | bilinear | input_affine | general
    #[arg(long)]
    pub k_structure: Option<String>,
    /// Weight of the squared parameter norm.
    #[arg(long)]
    pub l2: Option<String>,
    /// Fix C to [I 0].
    #[arg(long)]
    pub c_identity: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<String>,
    /// Evaluate the exact benchmark model instead: wh
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Split to trace: train | val | test | test_clean
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub model: Option<String>,
    /// poly | wh
    #[arg(long)]
    pub oracle: Option<String>,
    /// Data directory whose recorded system the wh oracle uses.
    #[arg(long)]
    pub data: Option<String>,
    /// Number of observability blocks (default: state dimension).
    #[arg(long)]
    pub n: Option<String>,
    /// Report file (default: stdout).
    #[arg(long)]
    pub out: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

fn collect(pairs: &[(&str, &Option<String>)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
}

fn resolve<S>(common: &Common, mut flags: Vec<(String, String)>) -> Result<S>
where
    S: Serialize + DeserializeOwned + Default,
{
    let file = match &common.config {
        Some(p) => config::read_file(p)?,
        None => vec![],
    };
    for s in &common.set {
        flags.push(config::parse_assignment(s)?);
    }
    config::resolve(&file, &flags)
}

impl GenerateArgs {
    pub fn settings(&self) -> Result<commands::GenerateSettings> {
        let flags = collect(&[
            ("system", &self.system),
            ("snr", &self.snr),
            ("seed", &self.seed),
            ("system_seed", &self.system_seed),
            ("n_train", &self.n_train),
            ("n_val", &self.n_val),
            ("n_test", &self.n_test),
            ("order", &self.order),
            ("out", &self.out),
        ]);
        resolve(&self.common, flags)
    }
}

impl TrainArgs {
    pub fn settings(&self) -> Result<commands::TrainSettings> {
        let mut flags = collect(&[
            ("data", &self.data),
            ("out", &self.out),
            ("horizon", &self.horizon),
            ("batch_size", &self.batch_size),
            ("lag", &self.lag),
            ("n_z", &self.n_z),
            ("lr", &self.lr),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("b_structure", &self.b_structure),
            ("k_structure", &self.k_structure),
            ("l2", &self.l2),
        ]);
        if self.c_identity {
            flags.push(("c_identity".into(), "true".into()));
        }
        resolve(&self.common, flags)
    }
}

impl EvalArgs {
    pub fn settings(&self) -> Result<commands::EvalSettings> {
        let flags = collect(&[
            ("model", &self.model),
            ("oracle", &self.oracle),
            ("data", &self.data),
            ("out", &self.out),
            ("split", &self.split),
        ]);
        resolve(&self.common, flags)
    }
}

impl DiagnoseArgs {
    pub fn settings(&self) -> Result<commands::DiagnoseSettings> {
        let flags = collect(&[
            ("model", &self.model),
            ("oracle", &self.oracle),
            ("data", &self.data),
            ("n", &self.n),
            ("out", &self.out),
        ]);
        resolve(&self.common, flags)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate(&a.settings()?),
        Command::Train(a) => commands::train(&a.settings()?),
        Command::Eval(a) => commands::eval(&a.settings()?),
        Command::Diagnose(a) => commands::diagnose(&a.settings()?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("koopid").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn train_defaults_are_the_reference_settings() {
        let Command::Train(a) = parse(&["train"]).command else { panic!() };
        let s = a.settings().unwrap();
        let t = &s.train;
        assert_eq!((t.n_z, t.lag, t.horizon, t.batch_size, t.lr), (12, 12, 51, 256, 1e-3));
    }

    #[test]
    fn flags_beat_set_order_and_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "n_z = 5\nlag = 7\nk_structure = none\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let Command::Train(a) = parse(&["train", "--config", cfg, "--n-z", "6", "--set", "horizon=9"]).command else {
            panic!()
        };
        let s = a.settings().unwrap();
        assert_eq!((s.train.n_z, s.train.lag, s.train.horizon), (6, 7, 9));
        assert_eq!(s.train.k_kind, koopid::model::StructureKind::None);
    }

    #[test]
    fn unknown_structure_is_a_config_error() {
        let Command::Train(a) = parse(&["train", "--k-structure", "cubic"]).command else { panic!() };
        assert_eq!(a.settings().unwrap_err().exit_code(), 2);
    }
}
