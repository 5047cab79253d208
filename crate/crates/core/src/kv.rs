//! Flat `key = value` text documents with dotted section prefixes.
//!
//! Used for run configs, corpus manifests and run manifests: trivially
//! diffable across sweep runs and stable under round-trip.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Parses `key = value` lines. `#` starts a comment, blank lines are
/// ignored. Duplicate keys are an error so sweep edits cannot silently
/// shadow each other.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::config(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

/// Canonical text form: sorted keys, one `key = value` per line.
pub fn format(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Typed accessors over a parsed document.
pub struct View<'a> {
    map: &'a BTreeMap<String, String>,
}

impl<'a> View<'a> {
    pub fn new(map: &'a BTreeMap<String, String>) -> Self {
        View { map }
    }

    pub fn raw(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(format!("field `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(Error::config(format!(
                "field `{key}`: expected true/false, got `{v}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        let text = "b.y = 2\n# comment\na.x = one two\n\n";
        let map = parse(text).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map["a.x"], "one two");
        let canon = format(&map);
        assert_eq!(parse(&canon).unwrap(), map);
        assert_eq!(format(&parse(&canon).unwrap()), canon);
    }

    #[test]
    fn duplicate_keys_rejected() {
        assert!(parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(parse("just words").is_err());
    }
}
