//! Pipeline configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use emrkg_core::corpus::{EntitySchema, DEFAULT_MAX_LEN};
use emrkg_core::derm::DermConfig;
use emrkg_core::fusion::FusionConfig;
use emrkg_core::tagger::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub kb_file: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `model.json` inside the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub types: Vec<String>,
    pub max_len: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self { types: EntitySchema::default().types().to_vec(), max_len: DEFAULT_MAX_LEN }
    }
}

/// Which entities populate patient nodes in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntitySource {
    /// Entities recognized by the trained tagger.
    #[default]
    Predicted,
    /// Entities from the `.ann` annotations.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub entity_source: EntitySource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub schema: SchemaConfig,
    #[serde(default)]
    pub derm: DermConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub graph: GraphConfig,
}

/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub corpus_dir: Option<PathBuf>,
    pub kb_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub epochs: Option<usize>,
    pub no_derm: bool,
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut config.paths;
        for field in [&mut p.corpus_dir, &mut p.kb_file, &mut p.output_dir] {
            *field = rebase(base, field);
        }
        if let Some(m) = &mut p.model_file {
            *m = rebase(base, m);
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.corpus_dir {
            self.paths.corpus_dir = p.clone();
        }
        if let Some(p) = &o.kb_file {
            self.paths.kb_file = p.clone();
        }
        if let Some(p) = &o.output_dir {
            self.paths.output_dir = p.clone();
        }
        if let Some(p) = &o.model_file {
            self.paths.model_file = Some(p.clone());
        }
        if let Some(t) = o.threshold {
            self.fusion.threshold = t;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if o.no_derm {
            self.train.derm_enabled = false;
        }
    }

    pub fn entity_schema(&self) -> Result<EntitySchema, ConfigError> {
        EntitySchema::new(self.schema.types.iter().cloned()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model_file.clone().unwrap_or_else(|| self.paths.output_dir.join("model.json"))
    }

    /// Checks value ranges and that the input paths exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.entity_schema()?;
        if self.schema.max_len < 2 {
            return Err(ConfigError::Invalid(format!(
                "schema.max_len must be at least 2, got {}",
                self.schema.max_len
            )));
        }
        self.derm.validate().map_err(|e| ConfigError::Invalid(format!("derm: {e}")))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        self.fusion.validate().map_err(|e| ConfigError::Invalid(format!("fusion: {e}")))?;
        if !self.paths.corpus_dir.is_dir() {
            return Err(ConfigError::MissingPath { what: "corpus directory", path: self.paths.corpus_dir.clone() });
        }
        if !self.paths.kb_file.is_file() {
            return Err(ConfigError::MissingPath { what: "knowledge base file", path: self.paths.kb_file.clone() });
        }
        Ok(())
    }

    /// SHA-256 over the settings that determine output content. Output
    /// locations are left out so that the same run written to two places
    /// hashes the same.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        c.paths.model_file = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
[paths]
corpus_dir = "emr"
kb_file = "kb.jsonl"
output_dir = "out"
"#;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn defaults_and_relative_paths() {
        let (dir, path) = write(MINIMAL);
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.paths.corpus_dir, dir.path().join("emr"));
        assert_eq!(c.model_path(), dir.path().join("out").join("model.json"));
        assert_eq!(c.fusion.threshold, 0.8);
        assert_eq!(c.schema.types.len(), 7);
    }

    #[test]
    fn seed_is_required() {
        let (_dir, path) = write(&MINIMAL.replace("seed = 3", ""));
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Parse { .. })));
        let (_dir, path) = write(&format!("{MINIMAL}\n[train]\nepochs = 2\n[tagger]\nx = 1\n"));
        assert!(matches!(PipelineConfig::load(&path), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn flags_win() {
        let (_dir, path) = write(MINIMAL);
        let mut c = PipelineConfig::load(&path).unwrap();
        c.apply(&Overrides { seed: Some(9), threshold: Some(0.5), no_derm: true, ..Default::default() });
        assert_eq!(c.seed, 9);
        assert_eq!(c.fusion.threshold, 0.5);
        assert!(!c.train.derm_enabled);
    }

    #[test]
    fn hash_ignores_output_location() {
        let (_dir, path) = write(MINIMAL);
        let a = PipelineConfig::load(&path).unwrap();
        let mut b = a.clone();
        b.paths.output_dir = "elsewhere".into();
        assert_eq!(a.content_hash(), b.content_hash());
        b.seed += 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn validation_reports_missing_inputs() {
        let (_dir, path) = write(MINIMAL);
        let c = PipelineConfig::load(&path).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::MissingPath { .. })));
    }
}
