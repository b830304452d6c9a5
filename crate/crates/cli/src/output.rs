//! CSV and JSON artifacts. Every file carries the resolved config and a
//! content hash of its data: SHA-256 over `blob <len>\0<data>`, the framing
//! git uses for object ids.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub fn content_hash(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", data.len()).as_bytes());
    h.update(data);
    format!("sha256:{:x}", h.finalize())
}

pub struct Csv {
    body: String,
}

impl Csv {
    pub fn new(header: &'static str) -> Self {
        Self { body: format!("{header}\n") }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }
}

/// Shortest round-trip decimal form; `inf`, `-inf` and `NaN` for the rest.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn out_path(config: &Config, name: &str) -> Result<PathBuf> {
    let dir = config.run.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("run.out: creating {}", dir.display()))?;
    Ok(dir.join(name))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

pub fn write_csv(config: &Config, command: &str, name: &str, csv: &Csv) -> Result<PathBuf> {
    let mut text = format!("# rsamp {command}\n");
    for line in config.to_toml().lines() {
        if line.is_empty() {
            text.push_str("#\n");
        } else {
            let _ = writeln!(text, "# {line}");
        }
    }
    let _ = writeln!(text, "# content_hash = \"{}\"", content_hash(csv.body.as_bytes()));
    text.push_str(&csv.body);
    let path = out_path(config, name)?;
    write(&path, &text)?;
    Ok(path)
}

/// Object results get `command`, `config` and `content_hash` members next
/// to their own; arrays are wrapped as `rows`.
pub fn write_json(config: &Config, command: &str, name: &str, result: &impl Serialize) -> Result<PathBuf> {
    let value = serde_json::to_value(result)?;
    let hash = content_hash(serde_json::to_string(&value)?.as_bytes());
    let mut doc = match value {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("rows".into(), other);
            m
        }
    };
    doc.insert("command".into(), Value::String(command.into()));
    doc.insert("config".into(), serde_json::to_value(config)?);
    doc.insert("content_hash".into(), Value::String(hash));
    let mut text = serde_json::to_string_pretty(&Value::Object(doc))?;
    text.push('\n');
    let path = out_path(config, name)?;
    write(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_uses_blob_framing() {
        // sha256 of "blob 0\0", the empty object id in git's sha256 format
        assert_eq!(
            content_hash(b""),
            "sha256:473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 12345.678] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
