use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub settings: BTreeMap<String, String>,
    pub output_dir: String,
    pub started: String,
    pub finished: String,
    pub versions: BTreeMap<String, String>,
    pub files: Vec<FileRecord>,
}

/// Collects every output in memory and writes them together, followed by `manifest.json`.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    started: String,
    inputs: Vec<InputRecord>,
    settings: BTreeMap<String, String>,
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            inputs: Vec::new(),
            settings: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, contents: &[u8]) {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(contents),
        });
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.to_string(), value.to_string());
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn commit(self) -> std::io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let mut records = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            fs::write(self.dir.join(name), bytes)?;
            records.push(FileRecord {
                name: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len(),
            });
        }
        let mut versions = BTreeMap::new();
        versions.insert("covsteer".to_string(), covsteer::VERSION.to_string());
        versions.insert("covsteer-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            command: self.command,
            inputs: self.inputs,
            settings: self.settings,
            output_dir: self.dir.display().to_string(),
            started: self.started,
            finished: chrono::Utc::now().to_rfc3339(),
            versions,
            files: records,
        };
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}
