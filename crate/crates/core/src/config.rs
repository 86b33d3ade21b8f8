//! Run configuration document.
//!
//! ```json
//! {
//!   "input": {"generator": "specs/ms500.spec"},
//!   "seed": 7,
//!   "thresholds": {"alpha_percent": 25.0, "beta_percent": 1.0},
//!   "rules": "rules/ms.rules",
//!   "output_dir": "out/ms500"
//! }
//! ```
//!
//! `schema` and `rules` take either a path or the document inline. Relative
//! paths resolve against the directory of the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deidentify::RuleSet;
use crate::dimension::{FeasibilityConstraints, QidScope, SelectionPolicy};
use crate::identify::Thresholds;
use crate::mockgen::GeneratorSpec;
use crate::table::{Role, Schema, DEFAULT_DROP_THRESHOLD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Csv(PathBuf),
    Generator(Source<GeneratorSpec>),
}

/// A document given inline or by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: DeserializeOwned + Clone> Source<T> {
    pub fn resolve(&self, what: &str) -> Result<T, ConfigError> {
        match self {
            Source::Inline(t) => Ok(t.clone()),
            Source::Path(p) => read_json(p, what),
        }
    }

    fn absolutise(&mut self, base: &Path) {
        if let Source::Path(p) = self {
            *p = join(base, p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitFormat {
    Csv,
    StructuredReport,
    TextReport,
}

fn default_emit() -> Vec<EmitFormat> {
    vec![EmitFormat::Csv, EmitFormat::StructuredReport, EmitFormat::TextReport]
}

fn default_drop() -> f64 {
    DEFAULT_DROP_THRESHOLD
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSource,
    /// Required for CSV input; generator specs carry their own schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Source<Schema>>,
    /// Overrides the generator spec's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_drop")]
    pub drop_threshold: f64,
    #[serde(default)]
    pub overrides: BTreeMap<String, Role>,
    pub rules: Source<RuleSet>,
    #[serde(default)]
    pub constraints: FeasibilityConstraints,
    #[serde(default)]
    pub policy: SelectionPolicy,
    #[serde(default)]
    pub qid_scope: QidScope,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<EmitFormat>,
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        what: format!("{what} {}", path.display()),
        source,
    })
}

impl RunConfig {
    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = read_json(path, "config")?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.absolutise(base);
        Ok(config)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            what: "config".into(),
            source,
        })?;
        config.absolutise(base);
        Ok(config)
    }

    fn absolutise(&mut self, base: &Path) {
        match &mut self.input {
            InputSource::Csv(p) => *p = join(base, p),
            InputSource::Generator(s) => s.absolutise(base),
        }
        if let Some(s) = &mut self.schema {
            s.absolutise(base);
        }
        self.rules.absolutise(base);
        self.output_dir = join(base, &self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.thresholds.validate().is_err() {
            return invalid(format!(
                "thresholds need 0 <= beta <= alpha <= 100 (alpha {}, beta {})",
                self.thresholds.alpha_percent, self.thresholds.beta_percent
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_threshold) {
            return invalid(format!("drop_threshold {} outside [0, 1]", self.drop_threshold));
        }
        if let Err(e) = self.constraints.validate() {
            return invalid(e.to_string());
        }
        let must_exist = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{what} file {} does not exist",
                    p.display()
                )))
            }
        };
        match &self.input {
            InputSource::Csv(p) => {
                must_exist(p, "input")?;
                match &self.schema {
                    None => return invalid("CSV input requires a schema".into()),
                    Some(Source::Path(p)) => must_exist(p, "schema")?,
                    Some(Source::Inline(_)) => {}
                }
            }
            InputSource::Generator(Source::Path(p)) => must_exist(p, "generator spec")?,
            InputSource::Generator(Source::Inline(_)) => {}
        }
        if let Source::Path(p) = &self.rules {
            must_exist(p, "rules")?;
        }
        if self.emit.is_empty() {
            return invalid("emit must list at least one format".into());
        }
        Ok(())
    }

    pub fn emits(&self, format: EmitFormat) -> bool {
        self.emit.contains(&format)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }
}
