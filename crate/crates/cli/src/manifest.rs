//! Run manifests: what was run, with which configuration, and the SHA-256 of
//! every file it read or wrote. Paths are relative to the output directory so
//! a rerun elsewhere can be compared file by file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;
use crate::config::ExperimentConfig;

pub const TOOL: &str = "dfmerge";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Resolved configuration, with command-line overrides applied.
    pub config: ExperimentConfig,
    /// Training configuration digest; only set by `train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reports: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn rel_key(path: &Path) -> String {
    path.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

impl RunManifest {
    pub fn new(command: &Command, config: &ExperimentConfig) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.clone(),
            config: config.clone(),
            fingerprint: None,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            trajectory: None,
            reports: BTreeMap::new(),
        }
    }

    pub fn record_inputs(&mut self, out: &Path, files: &[PathBuf]) -> std::io::Result<()> {
        for f in files {
            self.inputs.insert(rel_key(f), sha256_file(&out.join(f))?);
        }
        Ok(())
    }

    pub fn record_artifacts(&mut self, out: &Path, files: &[PathBuf]) -> std::io::Result<()> {
        for f in files {
            self.artifacts.insert(rel_key(f), sha256_file(&out.join(f))?);
        }
        Ok(())
    }

    /// Records an input given by the user, keyed by the path as given.
    pub fn record_external_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// `manifests/<command>[-<variant>].json`, so runs of one command with
    /// different methods keep separate manifests.
    pub fn path_in(&self, out: &Path) -> PathBuf {
        let c = &self.config;
        let variant = match &self.command {
            Command::Merge => c.merge.method.clone(),
            Command::Optimize => serde_json::to_value(c.bo.objective).ok().and_then(|v| v.as_str().map(str::to_string)),
            Command::Sweep => c.sweep.as_ref().and_then(|s| serde_json::to_value(s.axis).ok()?.as_str().map(str::to_string)),
            Command::Eval { checkpoint, split, .. } => {
                Some(format!("{}-{split}", checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy())))
            }
            Command::Train | Command::Landscape | Command::Ablate => None,
        };
        let name = match variant {
            Some(v) => format!("{}-{v}", self.command.name()),
            None => self.command.name().to_string(),
        };
        out.join("manifests").join(format!("{name}.json"))
    }

    pub fn report(&mut self, name: &str, value: impl Serialize) {
        self.reports.insert(name.to_string(), serde_json::to_value(value).expect("reports serialize"));
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| crate::error::ConfigError(format!("{}: {e}", path.display())).into())
    }

    /// Artifacts whose checksum under `out` differs from the recorded one.
    pub fn verify(&self, out: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(rel, sum)| sha256_file(&out.join(rel)).map(|s| &s != *sum).unwrap_or(true))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}
