//! Report plumbing: config hashes, CSV writers with pinned column order and
//! 17-significant-digit floats, and the run manifest.
//!
//! Everything written here is byte-deterministic for a fixed (config, seed)
//! except the manifest, which records wall time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textfmt::fmt_g17;

/// SHA-256 over the canonical JSON serialization of a config.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV value formatting: floats at 17 significant digits, everything else
/// via Display.
pub enum Cell {
    Int(i64),
    UInt(u64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::UInt(v) => v.to_string(),
            Cell::Float(v) => fmt_g17(*v),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

pub struct Csv {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Csv {
    pub fn new(header: Vec<&'static str>) -> Self {
        Csv { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "csv row width mismatch");
        self.rows.push(row);
    }

    pub fn to_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Collects every artifact written during a run and finishes with the
/// manifest that points at all of them.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<OutputDir> {
        std::fs::create_dir_all(root)
            .map_err(|e| Error::Io { path: root.display().to_string(), source: e })?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        crate::textfmt::write_string(&path, text)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<PathBuf> {
        self.write_text(name, &csv.to_string())
    }

    /// Write the manifest last; it lists every other artifact.
    pub fn finish(mut self, manifest: RunManifest) -> Result<PathBuf> {
        let mut manifest = manifest;
        manifest.outputs = self.written.clone();
        self.write_json("manifest.json", &manifest)
    }
}

/// Run metadata. `wall_time_ms` varies between runs by nature; every other
/// artifact is byte-identical for a fixed (config, seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub seed_overridden: bool,
    pub version: String,
    pub wall_time_ms: u128,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config_hash: String, root_seed: u64, seed_overridden: bool) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config_hash,
            root_seed,
            seed_overridden,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_ms: 0,
            outputs: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = crate::config::ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&a));
        b.run.root_seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn csv_renders_pinned_precision() {
        let mut csv = Csv::new(vec!["n", "rate"]);
        csv.push(vec![Cell::UInt(8), Cell::Float(1.0 / 3.0)]);
        let text = csv.to_string();
        assert_eq!(text, "n,rate\n8,3.3333333333333331e-1\n");
    }
}
