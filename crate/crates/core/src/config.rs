//! Flat `key = value` configuration files.

use crate::error::{Error, Result};
use std::path::Path;

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty key"));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

pub fn load_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&std::fs::read_to_string(path)?, path)
}
