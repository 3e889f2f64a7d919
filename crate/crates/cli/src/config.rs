//! Flat `key = value` training configuration files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Keys not
//! present keep their default value; unknown keys are rejected.

use ocp_core::{ProjectionMode, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

pub const KEYS: [&str; 11] = [
    "v",
    "d",
    "d_prime",
    "mode",
    "lr_e",
    "lr_p",
    "batch_size",
    "negatives",
    "steps",
    "seed",
    "access_threshold",
];

pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    let mut seen = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key.to_string()) {
            return Err(err(format!("duplicate key {key:?}")));
        }
        set_key(&mut config, key, value).map_err(err)?;
        seen.push(key.to_string());
    }
    Ok(config)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

pub fn set_key(config: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "v" => config.v = parse(key, value)?,
        "d" => config.d = parse(key, value)?,
        "d_prime" => config.d_prime = parse(key, value)?,
        "mode" => config.mode = value.parse::<ProjectionMode>()?,
        "lr_e" => config.lr_e = parse(key, value)?,
        "lr_p" => config.lr_p = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "negatives" => config.negatives = parse(key, value)?,
        "steps" => config.steps = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "access_threshold" => config.access_threshold = parse(key, value)?,
        other => {
            return Err(format!(
                "unknown key {other:?} (expected one of {})",
                KEYS.join(", ")
            ))
        }
    }
    Ok(())
}

pub fn render_config(config: &TrainConfig) -> String {
    format!(
        "v = {}\nd = {}\nd_prime = {}\nmode = {}\nlr_e = {}\nlr_p = {}\nbatch_size = {}\n\
         negatives = {}\nsteps = {}\nseed = {}\naccess_threshold = {}\n",
        config.v,
        config.d,
        config.d_prime,
        config.mode,
        config.lr_e,
        config.lr_p,
        config.batch_size,
        config.negatives,
        config.steps,
        config.seed,
        config.access_threshold
    )
}
