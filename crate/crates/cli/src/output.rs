use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::CliError;

/// Floats print with 17 significant digits so values round-trip exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-separated table with a header row and LF line endings.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let names: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Self { text: format!("{}\n", names.join(",")), columns: names.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn floats(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| num(v)).collect();
        self.row(&cells);
    }
}

/// One command's output directory, `<base>/<command>-<hash prefix>`.
/// Removed again unless the run is finished.
pub struct RunDir {
    path: PathBuf,
    keep: bool,
}

impl RunDir {
    pub fn create(base: &Path, command: &str, hash: &str, force: bool) -> Result<Self, CliError> {
        let path = base.join(format!("{command}-{}", &hash[..12]));
        if path.exists() {
            if !force {
                return Err(CliError::Config(format!("{} already exists; pass --force to overwrite", path.display())));
            }
            fs::remove_dir_all(&path)?;
        }
        fs::create_dir_all(&path)?;
        Ok(Self { path, keep: false })
    }

    #[cfg(test)]
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, name: &str, csv: &Csv) -> Result<(), CliError> {
        fs::write(self.path.join(name), csv.text.as_bytes())?;
        Ok(())
    }

    /// Writes the manifest through a temporary file and a rename, then keeps
    /// the directory.
    pub fn finish(mut self, manifest: &Manifest) -> Result<PathBuf, CliError> {
        let tmp = self.path.join("manifest.json.tmp");
        let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, self.path.join("manifest.json"))?;
        self.keep = true;
        Ok(self.path.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.path);
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: &'static str,
    pub wall_clock_seconds: f64,
    pub convergence: Value,
    pub invariants: Vec<InvariantFlag>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantFlag {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantFlag {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Fixed-width pass/fail table for the terminal.
pub fn table(flags: &[InvariantFlag]) -> String {
    let width = flags.iter().map(|f| f.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for f in flags {
        let _ = writeln!(out, "{:<width$}  {}  {}", f.name, if f.passed { "PASS" } else { "FAIL" }, f.detail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-34.94028940438989).parse::<f64>().unwrap(), -34.94028940438989);
        assert_eq!(num(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn csv_has_header_and_lf_rows() {
        let mut c = Csv::new(&["t", "r"]);
        c.floats(&[0.0, 0.5]);
        assert_eq!(c.text, "t,r\n0.0000000000000000e0,5.0000000000000000e-1\n");
    }

    #[test]
    fn unfinished_run_dirs_are_removed() {
        let base = tempfile::tempdir().unwrap();
        let path = {
            let d = RunDir::create(base.path(), "x", &"a".repeat(64), false).unwrap();
            d.write("a.csv", &Csv::new(&["t"])).unwrap();
            d.path().to_path_buf()
        };
        assert!(!path.exists());
        let d = RunDir::create(base.path(), "x", &"a".repeat(64), false).unwrap();
        let m = Manifest {
            command: "x".into(),
            config_hash: "a".repeat(64),
            seed: 1,
            tool_version: "0",
            wall_clock_seconds: 0.0,
            convergence: Value::Null,
            invariants: vec![],
            config: RunConfig::default(),
        };
        let kept = d.finish(&m).unwrap();
        assert!(kept.join("manifest.json").exists());
        assert!(RunDir::create(base.path(), "x", &"a".repeat(64), false).is_err());
        assert!(RunDir::create(base.path(), "x", &"a".repeat(64), true).is_ok());
    }
}
