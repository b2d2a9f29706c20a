use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run: what was asked, with which resolved settings,
/// what it read and what it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub build_rev: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs as they are read and writes outputs into one directory.
pub struct Run {
    manifest: RunManifest,
    out_dir: Option<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn new(command: &str, out_dir: Option<&Path>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                build_rev: env!("GOALCAST_BUILD_REV").to_string(),
                config: serde_json::Value::Null,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_time_s: 0.0,
            },
            out_dir: out_dir.map(Path::to_path_buf),
            started: Instant::now(),
        }
    }

    pub fn set_config(&mut self, config: serde_json::Value) {
        self.manifest.config = config;
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_string(), value);
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::read(path, e))?;
        self.record_input(path, &bytes);
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not UTF-8", path.display())))
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    fn dir(&self) -> Result<&Path> {
        self.out_dir.as_deref().ok_or_else(|| CliError::invalid("this command needs --out"))
    }

    /// Creates the output directory. Called only once all inputs are known
    /// good, so a failed run leaves nothing behind.
    pub fn open_out(&self) -> Result<PathBuf> {
        let dir = self.dir()?.to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| CliError::write(&dir, e))?;
        Ok(dir)
    }

    /// Writes `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.open_out()?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::write(&path, e))?;
        self.record_output(&path, bytes);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.outputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    /// Records a file some library call already wrote.
    pub fn record_written(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| CliError::write(path, e))?;
        self.record_output(path, &bytes);
        Ok(())
    }

    pub fn has_out(&self) -> bool {
        self.out_dir.is_some()
    }

    /// Writes `manifest.json` last.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        if let Some(dir) = self.out_dir.clone() {
            fs::create_dir_all(&dir).map_err(|e| CliError::write(&dir, e))?;
            let path = dir.join(MANIFEST_FILE);
            let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
            fs::write(&path, json + "\n").map_err(|e| CliError::write(&path, e))?;
        }
        Ok(self.manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let mut run = Run::new("test", Some(&out));
        run.seed("sim", 7);
        run.write("a.txt", b"abc").unwrap();
        let m = run.finish().unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"abc"));
        let text = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["seeds"]["sim"], 7);
        assert_eq!(v["command"], "test");
    }

    #[test]
    fn no_out_dir_writes_nothing() {
        let mut run = Run::new("wer", None);
        assert!(run.write("x", b"").is_err());
        assert!(run.finish().is_ok());
    }
}
