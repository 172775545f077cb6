//! Strict JSON layer configs.

use std::fs;
use std::path::Path;

use arhq_core::pipeline::LayerConfig;

use crate::error::{IoError, Result};

/// Parses, validates and resolves a config document. `origin` only labels
/// errors.
pub fn parse_config(text: &str, origin: &Path) -> Result<LayerConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: LayerConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let message = if at == "." {
            e.inner().to_string()
        } else {
            format!("{at}: {}", e.inner())
        };
        IoError::Config {
            path: origin.to_path_buf(),
            message,
        }
    })?;
    check(cfg, origin)
}

/// Validates an in-memory config and fills every default.
pub fn check(cfg: LayerConfig, origin: &Path) -> Result<LayerConfig> {
    cfg.validate().map_err(|e| IoError::Config {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(cfg.resolved())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LayerConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_config(&text, path)
}

/// Pretty JSON with every default written out.
pub fn to_json(cfg: &LayerConfig) -> String {
    let mut s = serde_json::to_string_pretty(&cfg.resolved()).expect("config serializes");
    s.push('\n');
    s
}

pub fn save_config(cfg: &LayerConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(cfg)).map_err(|e| IoError::io(path, e))
}
