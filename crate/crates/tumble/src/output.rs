//! CSV and JSON artifacts under a single output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Error, Result};

/// Directory receiving every file a command writes.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(OutputDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_csv<I>(&self, name: &str, header: &[String], rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let io = |e: csv::Error| {
            let kind = std::io::Error::other(e.to_string());
            Error::io(&path, kind)
        };
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Shortest round-tripping decimal with `.` as separator, in exponent form
/// for very small and very large magnitudes.
pub fn cell(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e16) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Empty cell for a missing value.
pub fn cell_opt(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path().join("nested")).unwrap();
        let p = out
            .write_csv("t.csv", &header(&["a", "b"]), vec![vec![cell(0.1), cell_opt(None)]])
            .unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "a,b\n0.1,\n");
        assert_eq!(cell(4.5e-16), "4.5e-16");
        let p = out.write_json("t.json", &serde_json::json!({"x_y": 1})).unwrap();
        assert!(fs::read_to_string(p).unwrap().ends_with("}\n"));
    }
}
