//! `key = value` config files.  Values here override the command-line
//! flags, which in turn override built-in defaults, so a checked-in config
//! pins a run regardless of how the command was typed.

use std::path::Path;

use mst_core::{Error, Result};

/// Parses a config file into ordered pairs.  `#` starts a comment; blank
/// lines are skipped.
pub fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {}: expected key = value, got {raw:?}",
                i + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}
