//! Run manifests: enough to reproduce a stage exactly.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn output_key(rel: &str) -> String {
    format!("<output>/{rel}")
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    /// Input file digests keyed by path as configured.
    pub inputs: BTreeMap<String, String>,
    /// Output digests keyed by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub formats: BTreeMap<&'static str, u32>,
    pub config: PipelineConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        let mut shown = config.clone();
        shown.paths.output_dir = Default::default();
        shown.paths.model_file = None;
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: config.content_hash(),
            seed: config.seed,
            stage_seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            formats: BTreeMap::from([
                ("kb_schema", emrkg_core::kb::KB_SCHEMA_VERSION),
                ("graph_schema", emrkg_core::graph::GRAPH_SCHEMA_VERSION),
                ("tagger_model", emrkg_core::tagger::MODEL_FORMAT_VERSION),
            ]),
            config: shown,
        }
    }

    /// Inputs inside the output directory are keyed as `<output>/<relative path>`.
    pub fn add_input(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let key = match path.strip_prefix(out_dir) {
            Ok(rel) => output_key(&rel.display().to_string()),
            Err(_) => path.display().to_string(),
        };
        self.inputs.insert(key, file_digest(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let key = path.strip_prefix(out_dir).unwrap_or(path).display().to_string();
        self.outputs.insert(key, file_digest(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}
