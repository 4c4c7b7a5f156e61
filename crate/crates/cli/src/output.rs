use std::fs;
use std::path::Path;

use kbnet_core::TOOLKIT_VERSION;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const VERSION_FILE: &str = "VERSION";

/// Creates `dir` and records the resolved configuration and toolkit version in it.
pub fn prepare_out_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    write_text(&dir.join(VERSION_FILE), &format!("{TOOLKIT_VERSION}\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serialises");
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| kbnet_core::Error::format(path, e.to_string()).into())
}
