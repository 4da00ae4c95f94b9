//! Output staging: every command assembles its files in memory and commits
//! them at the end, each through a temporary file plus rename.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn add_json<T: serde::Serialize>(&mut self, name: impl Into<String>, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.add(name, text);
    }

    /// Writes every staged file into `dir`. Temporaries are written first;
    /// renames happen only once all of them exist.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::with_capacity(self.files.len());
        let cleanup = |staged: &[(PathBuf, PathBuf)]| {
            for (tmp, _) in staged {
                let _ = std::fs::remove_file(tmp);
            }
        };
        for (name, bytes) in &self.files {
            let target = dir.join(name);
            let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
            if let Err(e) = std::fs::write(&tmp, bytes) {
                cleanup(&staged);
                let _ = std::fs::remove_file(&tmp);
                return Err(CliError::io(&tmp, e));
            }
            staged.push((tmp, target));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (i, (tmp, target)) in staged.iter().enumerate() {
            if let Err(e) = std::fs::rename(tmp, target) {
                cleanup(&staged[i..]);
                return Err(CliError::io(target, e));
            }
            written.push(target.clone());
        }
        Ok(written)
    }
}

/// Fixed six-decimal rendering used by every report CSV. Infinite
/// thresholds print as `inf` / `-inf`.
pub fn f6(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn full(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:?}")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = String::new();
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let f = f.as_ref();
            if f.contains([',', '"', '\n']) {
                let _ = write!(self.text, "\"{}\"", f.replace('"', "\"\""));
            } else {
                self.text.push_str(f);
            }
        }
        self.text.push('\n');
    }

    pub fn finish(self) -> String {
        self.text
    }
}
