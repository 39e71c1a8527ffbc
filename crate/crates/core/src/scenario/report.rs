//! Output files, digests and the run manifest.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::Scenario;

/// One data file produced by a run, held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

impl OutputFile {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        OutputFile {
            name: name.into(),
            contents: contents.into(),
        }
    }

    pub fn digest(&self) -> FileDigest {
        FileDigest {
            name: self.name.clone(),
            sha256: hex::encode(Sha256::digest(self.contents.as_bytes())),
            bytes: self.contents.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub tool: &'static str,
    pub version: &'static str,
    /// Seconds since the Unix epoch at the start of the run.
    pub started_unix: u64,
    pub duration_s: f64,
    /// Every file written next to the manifest, in emission order.
    pub files: Vec<FileDigest>,
}

impl RunManifest {
    pub fn digest_of(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.sha256.as_str())
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

/// Writes `files` into `dir` (created if needed) and returns their digests.
pub fn write_files(dir: &Path, files: &[OutputFile]) -> io::Result<Vec<FileDigest>> {
    fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|f| {
            fs::write(dir.join(&f.name), f.contents.as_bytes())?;
            Ok(f.digest())
        })
        .collect()
}

/// CSV-safe name for a parameter value, e.g. `distribution_1.5.csv`.
pub fn distribution_name(a: f64, suffix: &str) -> String {
    format!("distribution_{a}{suffix}.csv")
}
