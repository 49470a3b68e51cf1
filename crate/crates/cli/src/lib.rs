//! Pipeline command-line tool: `gen-data`, `train`, `eval`, `pose`,
//! `version`. Every command is a pure function of (config, input files,
//! seed); all artifacts except `run.log` (which records wall-clock timing)
//! are byte-identical across reruns.

mod commands;
mod config;

pub use config::ConfigMap;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config values, exit code 1.
    Usage(String),
    /// Missing or malformed data files, exit code 2.
    Data(String),
    /// Numerical failure (divergence), exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<dgc_core::geometry::io::DatasetError> for CliError {
    fn from(e: dgc_core::geometry::io::DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<dgc_core::model::CheckpointError> for CliError {
    fn from(e: dgc_core::model::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<dgc_core::model::ModelError> for CliError {
    fn from(e: dgc_core::model::ModelError) -> Self {
        use dgc_core::model::ModelError;
        use dgc_core::tensor::TensorError;
        match &e {
            ModelError::Diverged { .. } => CliError::Numerical(e.to_string()),
            ModelError::Tensor(TensorError::NonFinite { .. }) => CliError::Numerical(e.to_string()),
            ModelError::Config(_) | ModelError::Input(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "dgc", about = "Dense geometric correspondence pipeline", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic correspondence (or pose) dataset.
    GenData(commands::gen_data::Args),
    /// Train the correspondence network.
    Train(commands::train::Args),
    /// Evaluate a checkpoint: AEPE, PCK, Jaccard.
    Eval(commands::eval::Args),
    /// Relative pose estimation over a pose dataset.
    Pose(commands::pose::Args),
    /// Print the tool version.
    Version,
}

/// Entry point shared by the binary and the test suites.
pub fn run<I, S>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Pose(args) => commands::pose::run(args),
        Command::Version => {
            println!("dgc {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}
