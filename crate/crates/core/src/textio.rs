//! Whitespace-separated numeric text formats shared by datasets, parameter
//! dumps and initialisation files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decimal rendering with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

pub fn fmt_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        s.push_str(&fmt_f64(*v));
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines split into whitespace tokens.
pub fn token_lines(text: &str) -> Vec<Vec<&str>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect())
        .collect()
}

pub fn parse_f64s(tokens: &[&str], origin: &str) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(origin, format!("not a number: {t:?}")))
        })
        .collect()
}

pub fn parse_usize(token: &str, origin: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::parse(origin, format!("not a nonnegative integer: {token:?}")))
}

/// Flat `key = value` report, one entry per line, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueReport {
    pub entries: Vec<(String, String)>,
}

impl KeyValueReport {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let (k, v) = l.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect();
        Self { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn float_rendering_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt_f64(0.1);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
    }

    #[test]
    fn key_value_round_trip() {
        let mut r = KeyValueReport::default();
        r.push("alpha", 1.5);
        r.push("verdict", "pass");
        let back = KeyValueReport::parse(&r.render());
        assert_eq!(back, r);
        assert_eq!(back.get("verdict"), Some("pass"));
    }
}
