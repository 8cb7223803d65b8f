use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tmres::SimulationConfig;

/// Fixed float format: 17 significant digits.
pub fn f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(f).unwrap_or_default()
}

pub fn config_hash(cfg: &SimulationConfig) -> String {
    let digest = Sha256::digest(cfg.to_json().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV file with a `# config_hash=` comment line followed by a header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path, hash: &str) -> Result<()> {
        let mut buf = format!("# config_hash={hash}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
    pub status: &'static str,
    pub failures: usize,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config_path: &Path, hash: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_path: config_path.display().to_string(),
            config_hash: hash,
            parameters: BTreeMap::new(),
            outputs: Vec::new(),
            status: "complete",
            failures: 0,
            timings: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(key.to_string(), serde_json::to_value(value).expect("parameters serialize"));
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn time<T>(&mut self, stage: &str, run: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = run();
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_fixed() {
        assert_eq!(f(0.1), "1.0000000000000001e-1");
        assert_eq!(f(-2.0), "-2.0000000000000000e0");
        assert_eq!(opt(None), "");
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SimulationConfig::standard(2, 0.3, 0.004).unwrap();
        let b = SimulationConfig::standard(2, 0.3, 0.0041).unwrap();
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn table_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), "x, y".into()]);
        t.write(&path, "abc").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "# config_hash=abc\na,b\n1,\"x, y\"\n");
    }
}
