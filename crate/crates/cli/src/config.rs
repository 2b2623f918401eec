//! File configuration and flag resolution. Precedence: flag, then
//! environment (backend URL only), then config file, then defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use lure_core::masker::{MaskPolicy, PositionLengthSource, DEFAULT_ETA, DEFAULT_GAMMA, DEFAULT_PLACEHOLDER};
use lure_core::revisor::{BackendConfig, BackendMode};
use lure_core::theory::TheoryConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const BACKEND_URL_ENV: &str = "LURE_BACKEND_URL";
pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_OUT: &str = "lure-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    #[serde(default)]
    pub inputs: FileInputs,
    #[serde(default)]
    pub mask: FileMask,
    #[serde(default)]
    pub factors: FileFactors,
    #[serde(default)]
    pub backend: FileBackend,
    pub theory: Option<toml::Table>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileInputs {
    pub captions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub gt_captions: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileMask {
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub placeholder: Option<String>,
    pub position_length_source: Option<PositionLengthSource>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileFactors {
    pub bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBackend {
    pub mode: Option<BackendMode>,
    pub base_url: Option<String>,
    pub max_in_flight: Option<usize>,
    pub retries: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub backoff_ms: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Input)?;
        toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Input)
    }
}

/// Values shared by every command after resolution.
#[derive(Debug, Clone, Serialize)]
pub struct Common {
    pub seed: Option<u64>,
    #[serde(skip)]
    pub workers: usize,
    #[serde(skip)]
    pub out: PathBuf,
    pub vocab: Option<PathBuf>,
}

impl Common {
    pub fn require_seed(&self) -> Result<u64, Failure> {
        self.seed.ok_or_else(|| {
            Failure::Input(anyhow::anyhow!(
                "this command needs a seed: pass --seed or set `seed` in the config file"
            ))
        })
    }
}

pub fn resolve_common(
    file: &FileConfig,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    vocab: Option<PathBuf>,
) -> Result<Common, Failure> {
    let workers = workers
        .or(file.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Failure::Input(anyhow::anyhow!("workers must be at least 1")));
    }
    Ok(Common {
        seed: seed.or(file.seed),
        workers,
        out: out
            .or_else(|| file.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        vocab: vocab.or_else(|| file.vocab.clone()),
    })
}

/// Picks the flag, then the file value; a missing required path is an input error.
pub fn required_path(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
    flag.or_else(|| file.clone()).ok_or_else(|| {
        Failure::Input(anyhow::anyhow!(
            "missing input `{name}`: pass --{} or set inputs.{name} in the config file",
            name.replace('_', "-")
        ))
    })
}

#[derive(Debug, Default, Clone, clap::Args)]
pub struct MaskFlags {
    /// Uncertainty threshold (mask when -log p >= gamma).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Position threshold as a fraction of description length.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub placeholder: Option<String>,
}

pub fn resolve_policy(
    flags: &MaskFlags,
    file: &FileMask,
    position_length_source: Option<PositionLengthSource>,
) -> Result<MaskPolicy, Failure> {
    let policy = MaskPolicy {
        gamma: flags.gamma.or(file.gamma).unwrap_or(DEFAULT_GAMMA),
        eta: flags.eta.or(file.eta).unwrap_or(DEFAULT_ETA),
        placeholder: flags
            .placeholder
            .clone()
            .or_else(|| file.placeholder.clone())
            .unwrap_or_else(|| DEFAULT_PLACEHOLDER.to_string()),
        position_length_source: position_length_source
            .or(file.position_length_source)
            .unwrap_or_default(),
    };
    policy.validate().map_err(|e| Failure::Input(e.into()))?;
    Ok(policy)
}

#[derive(Debug, Default, Clone, clap::Args)]
pub struct BackendFlags {
    #[arg(long, value_enum)]
    pub backend: Option<BackendModeArg>,
    #[arg(long)]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum BackendModeArg {
    Mock,
    Http,
}

pub fn resolve_backend(flags: &BackendFlags, file: &FileBackend) -> Result<BackendConfig, Failure> {
    let d = BackendConfig::default();
    let env_url = std::env::var(BACKEND_URL_ENV).ok().filter(|s| !s.is_empty());
    let cfg = BackendConfig {
        mode: flags
            .backend
            .map(|m| match m {
                BackendModeArg::Mock => BackendMode::Mock,
                BackendModeArg::Http => BackendMode::Http,
            })
            .or(file.mode)
            .unwrap_or(d.mode),
        base_url: flags
            .backend_url
            .clone()
            .or(env_url)
            .or_else(|| file.base_url.clone())
            .unwrap_or(d.base_url),
        max_in_flight: flags.max_in_flight.or(file.max_in_flight).unwrap_or(d.max_in_flight),
        retries: flags.retries.or(file.retries).unwrap_or(d.retries),
        timeout_secs: file.timeout_secs.unwrap_or(d.timeout_secs),
        backoff_ms: file.backoff_ms.unwrap_or(d.backoff_ms),
    };
    if cfg.max_in_flight == 0 {
        return Err(Failure::Input(anyhow::anyhow!(
            "backend.max_in_flight must be at least 1"
        )));
    }
    if !(cfg.timeout_secs.is_finite() && cfg.timeout_secs > 0.0) {
        return Err(Failure::Input(anyhow::anyhow!("backend.timeout_secs must be positive")));
    }
    Ok(cfg)
}

/// Builds the theory configuration from the `[theory]` table; the resolved
/// global seed replaces any seed given there.
pub fn resolve_theory(file: &FileConfig, seed: Option<u64>) -> Result<TheoryConfig, Failure> {
    let table = file.theory.clone().unwrap_or_default();
    let table_seed = table.get("seed").and_then(|v| v.as_integer());
    let mut cfg: TheoryConfig = toml::Value::Table(table)
        .try_into()
        .context("parsing [theory] table")
        .map_err(Failure::Input)?;
    cfg.seed = match (seed, table_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => {
            u64::try_from(s).map_err(|_| Failure::Input(anyhow::anyhow!("theory.seed must be non-negative")))?
        }
        (None, None) => {
            return Err(Failure::Input(anyhow::anyhow!(
                "theory needs a seed: pass --seed or set `seed` in the config file"
            )))
        }
    };
    Ok(cfg)
}
