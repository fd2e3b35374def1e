//! Run manifests: what was run, on which bytes, with which settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub sequential: bool,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: impl Serialize, seed: Option<u64>, sequential: bool) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            sequential,
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn inputs<'a>(&mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> std::io::Result<()> {
        paths.into_iter().try_for_each(|p| self.input(p))
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write_in(&self, dir: &Path) -> std::io::Result<PathBuf> {
        self.write_to(&dir.join("manifest.json"))
    }

    /// Writes `<file>.manifest.json` beside a single-file output.
    pub fn write_beside(&self, file: &Path) -> std::io::Result<PathBuf> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        self.write_to(&file.with_file_name(name))
    }

    fn write_to(&self, path: &Path) -> std::io::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(path.to_path_buf())
    }
}
