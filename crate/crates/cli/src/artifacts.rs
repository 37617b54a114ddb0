use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    files: &'a [FileEntry],
}

/// Output directory that records every file it writes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, data).with_context(|| format!("writing {}", path.display()))?;
        let entry =
            FileEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(data)), bytes: data.len() };
        match self.files.iter_mut().find(|f| f.path == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        log::debug!("wrote {}", path.display());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let data = w.into_inner().context("flushing CSV buffer")?;
        self.write_bytes(name, &data)
    }

    /// Dense matrix as CSV with columns `c0, c1, ...`.
    pub fn write_matrix(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = m.row_iter().map(|r| r.iter().map(|&x| num(x)).collect());
        self.write_csv(name, &header, rows)
    }

    pub fn finish(self, command: &str, seed: u64) -> Result<Vec<FileEntry>> {
        let m = Manifest { command, seed, files: &self.files };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.files)
    }
}

/// `key = value` report lines.
#[derive(Default)]
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.lines.is_empty() {
            self.lines.push(String::new());
        }
        self.lines.push(format!("[{name}]"));
        self
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn real(&mut self, key: &str, value: f64) -> &mut Self {
        self.kv(key, num(value))
    }

    pub fn text(&self) -> String {
        self.lines.join("\n") + "\n"
    }
}
