//! Command-line entry point: synthetic data, learning-curve experiments,
//! plane-search verification and the annotation service.

pub mod bnb;
pub mod config;
pub mod run;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use geoal_core::io::{save_dataset, write_volume_u8};
use geoal_core::synth::{build_dataset, SynthSpec};
use serde::Deserialize;

use crate::config::{base_dir, read_config, RunConfig};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// File name of the voxel-level ground truth written by `synth`.
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<geoal_core::Error> for CliError {
    fn from(e: geoal_core::Error) -> Self {
        use geoal_core::Error as E;
        match e {
            E::UnknownStrategy(_) | E::UnsupportedStrategy { .. } | E::NotCombinable(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geoal", version, about = "Geometry-aware active learning for segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic volume and its supervoxel dataset.
    Synth {
        /// Synthetic volume spec (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run learning-curve experiments; writes curves.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Compare the plane search with the one-degree grid on random instances.
    BnbCheck {
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Instance seed.
        #[arg(long, default_value_t = 0)]
        seed_override: u64,
        /// CSV file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the annotation API until interrupted.
    Serve {
        /// Service config (JSON): `data_root`, `host`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    /// Datasets named in session requests resolve under this directory.
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
    #[serde(default = "default_host")]
    pub host: String,
}

fn default_data_root() -> PathBuf {
    PathBuf::from(".")
}

fn default_host() -> String {
    "127.0.0.1".into()
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            data_root: default_data_root(),
            host: default_host(),
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            seed_override,
        } => cmd_synth(&config, &out, seed_override),
        Command::Run {
            config,
            out,
            seed_override,
        } => cmd_run(&config, out.as_deref(), seed_override).map(|_| ()),
        Command::BnbCheck {
            count,
            seed_override,
            out,
        } => {
            let csv = bnb::check_csv(count, seed_override)?;
            match out {
                Some(path) => fs::write(&path, csv).map_err(|e| CliError::io(&path, e)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Serve { config, port } => {
            let config = match config {
                Some(path) => {
                    let mut c: ServeConfig = read_config(&path)?;
                    c.data_root = base_dir(&path).join(c.data_root);
                    c
                }
                None => ServeConfig::default(),
            };
            cmd_serve(&config, port)
        }
    }
}

/// Writes the dataset files plus the voxel ground truth into `out`.
pub fn cmd_synth(config: &Path, out: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let mut spec: SynthSpec = read_config(config)?;
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    let (dataset, truth) = build_dataset(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(out, &dataset)?;
    write_volume_u8(&out.join(TRUTH_FILE), &truth)?;
    Ok(())
}

/// Runs the configured experiment. Returns the curves CSV path.
pub fn cmd_run(config_path: &Path, out: Option<&Path>, seed_override: Option<u64>) -> Result<PathBuf, CliError> {
    let mut config: RunConfig = read_config(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let base = base_dir(config_path);
    let out = match (out, &config.out) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::Usage("no output directory: pass --out or set `out`".into())),
    };
    run::write_run(&config, &base, &out)
}

pub fn cmd_serve(config: &ServeConfig, port: u16) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{}:{port}", config.host)
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {}:{port}: {e}", config.host)))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        log::info!("serving on {addr}");
        let state = geoal_service::AppState::new(config.data_root.clone());
        geoal_service::serve(listener, state)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}
