//! Experiment harness around `shadowflow`: config files in, CSV tables, a
//! manifest and optional SVG plots out.

pub mod config;
pub mod experiments;
pub mod plot;
pub mod table;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use config::ExperimentConfig;
use table::ResultTable;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] shadowflow::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("plot: {0}")]
    Plot(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything needed to re-run an experiment and read its CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub csv: String,
    pub columns: Vec<String>,
    pub rows: usize,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "manifest schema {} is not {SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultTable,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Run a resolved config and write `<experiment>.csv` and
/// `<experiment>.manifest.toml` into its output directory.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let table = experiments::run(cfg)?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = cfg.experiment.name();
    let csv_path = dir.join(format!("{name}.csv"));
    table.write_csv(&csv_path)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        csv: format!("{name}.csv"),
        columns: table.columns.clone(),
        rows: table.rows.len(),
        config: cfg.clone(),
    };
    let manifest_path = dir.join(format!("{name}.manifest.toml"));
    let text = toml::to_string(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(&manifest_path, text).map_err(|e| CliError::io(&manifest_path, e))?;
    Ok(RunOutput {
        table,
        csv_path,
        manifest_path,
    })
}

/// Cap worker threads from `SHADOWFLOW_THREADS` if set.
pub fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SHADOWFLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("SHADOWFLOW_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}
