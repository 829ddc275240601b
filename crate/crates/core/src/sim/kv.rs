//! Block-structured key/value text.
//!
//! ```text
//! # comment
//! [block]
//! key = value words
//! ```
//!
//! Blocks may repeat; keys within one block may not.

use std::str::FromStr;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub line: usize,
    entries: Vec<(String, String, usize)>,
}

impl Block {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            line: 0,
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string(), 0));
        self
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Config(format!("[{}] line {}: {msg}", self.name, line.max(self.line)))
    }

    pub fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    /// Rejects keys outside `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, l) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(self.err(*l, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.raw(key)
            .map(|(v, _)| v)
            .ok_or_else(|| self.err(0, format!("missing key `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let (v, l) = self
            .raw(key)
            .ok_or_else(|| self.err(0, format!("missing key `{key}`")))?;
        v.parse()
            .map_err(|_| self.err(l, format!("cannot parse `{key} = {v}`")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(_) => self.parse(key),
        }
    }

    pub fn reals(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let (v, l) = self
            .raw(key)
            .ok_or_else(|| self.err(0, format!("missing key `{key}`")))?;
        let vals: Vec<f64> = v
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err(l, format!("`{key}` must be {n} numbers")))?;
        if vals.len() != n || vals.iter().any(|x| !x.is_finite()) {
            return Err(self.err(l, format!("`{key}` must be {n} finite numbers")));
        }
        Ok(vals)
    }

    pub fn vec3(&self, key: &str) -> Result<Vector3<f64>> {
        let v = self.reals(key, 3)?;
        Ok(Vector3::new(v[0], v[1], v[2]))
    }

    pub fn pair(&self, key: &str) -> Result<(f64, f64)> {
        let v = self.reals(key, 2)?;
        Ok((v[0], v[1]))
    }

    pub(crate) fn invalid(&self, key: &str, why: &str) -> Error {
        let line = self.raw(key).map_or(0, |(_, l)| l);
        self.err(line, format!("`{key}` {why}"))
    }
}

pub fn parse_blocks(text: &str) -> Result<Vec<Block>> {
    let mut blocks: Vec<Block> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line}: unterminated block header")))?
                .trim();
            if name.is_empty() {
                return Err(Error::Config(format!("line {line}: empty block name")));
            }
            blocks.push(Block {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
        let block = blocks
            .last_mut()
            .ok_or_else(|| Error::Config(format!("line {line}: key outside any block")))?;
        let k = k.trim();
        if block.raw(k).is_some() {
            return Err(Error::Config(format!("line {line}: duplicate key `{k}`")));
        }
        block.entries.push((k.to_string(), v.trim().to_string(), line));
    }
    Ok(blocks)
}

/// Renders blocks back to text that [`parse_blocks`] reads identically.
pub fn write_blocks(blocks: &[Block]) -> String {
    let mut s = String::new();
    for b in blocks {
        s.push_str(&format!("[{}]\n", b.name));
        for (k, v, _) in &b.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_reports_lines() {
        let text = "# top\n[light]\nposition = 0 1 2 # trailing\n\n[plane]\naxis = y\n[plane]\naxis=x\n";
        let b = parse_blocks(text).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b[0].vec3("position").unwrap(), Vector3::new(0.0, 1.0, 2.0));
        assert_eq!(b[2].str("axis").unwrap(), "x");
        let again = parse_blocks(&write_blocks(&b)).unwrap();
        assert_eq!(again[0].vec3("position").unwrap(), b[0].vec3("position").unwrap());

        let err = parse_blocks("[a]\nx = 1\nx = 2\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(parse_blocks("x = 1\n").is_err());
        assert!(parse_blocks("[a\n").is_err());
        let b = parse_blocks("[a]\nv = 1 2\n").unwrap();
        assert!(b[0].vec3("v").unwrap_err().to_string().contains("line 2"));
    }
}
