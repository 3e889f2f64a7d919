use std::fs;
use std::path::Path;

use ocp_core::TrainConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Git-style content hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(content_hash(&bytes))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConfigEcho {
    pub v: usize,
    pub d: usize,
    pub d_prime: usize,
    pub mode: String,
    pub lr_e: f64,
    pub lr_p: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub steps: u64,
    pub seed: u64,
    pub access_threshold: u64,
}

impl From<&TrainConfig> for ConfigEcho {
    fn from(c: &TrainConfig) -> Self {
        ConfigEcho {
            v: c.v,
            d: c.d,
            d_prime: c.d_prime,
            mode: c.mode.to_string(),
            lr_e: c.lr_e,
            lr_p: c.lr_p,
            batch_size: c.batch_size,
            negatives: c.negatives,
            steps: c.steps,
            seed: c.seed,
            access_threshold: c.access_threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config: ConfigEcho,
    pub log_path: String,
    pub log_hash: String,
    pub data_order_hash: String,
    pub holdout_pairs: usize,
    pub effective_vocab: usize,
    pub started_at: String,
    pub finished_at: String,
    /// Mean loss of the last logging window; absent for a zero-step run.
    pub final_loss: Option<f64>,
    pub final_orthonormality_defect: f64,
    pub checkpoint: String,
    pub reports: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataManifest {
    pub vocab: usize,
    pub zipf_s: f64,
    pub pairs: usize,
    pub seed: u64,
    pub rank: usize,
    pub tau: f64,
    pub log_path: String,
    pub log_hash: String,
    pub created_at: String,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
