//! Flat key-value experiment configuration files: one `key = value` per
//! line, `#` comments. Key vocabulary and validation live with the CLI,
//! which overlays flags on top of file values.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parse `key = value` lines; later occurrences of a key win.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("config line {}: expected key = value, got {raw:?}", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::InvalidArgument(format!("config line {}: empty key", lineno + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let m = parse_config("# comment\nalpha = 4\n\nscheme = stacked\nalpha = 8\n").unwrap();
        assert_eq!(m.get("alpha").unwrap(), "8");
        assert_eq!(m.get("scheme").unwrap(), "stacked");
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_config("alpha").is_err());
        assert!(parse_config("= 3").is_err());
    }
}
