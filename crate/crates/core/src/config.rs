//! Run configuration: one TOML document whose every leaf can be overridden
//! from the command line with `dotted.path=value`.
//!
//! An empty document yields the reference hyperparameters: ε = 0.1, α = 0.5,
//! N_s = 10, N_e = 5, r = 1.1, τ = 0.01, T_tr = 120, η = 2e-3, B = 64.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::synthetic::GeneratorConfig;
use crate::ensemble::ValleyConfig;
use crate::error::{Error, Result};
use crate::losses::PairScale;

/// Training variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Alignment + smoothing, valley ensemble.
    Unialign,
    /// Plain cross-entropy, best-validation-accuracy checkpoint.
    Standard,
    /// Plain cross-entropy, valley ensemble.
    WoDaf,
    /// Alignment + smoothing, best-validation-accuracy checkpoint.
    WoSme,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Unialign, Mode::Standard, Mode::WoDaf, Mode::WoSme];

    /// Whether this mode trains with the alignment and smoothing terms.
    pub fn aligned(self) -> bool {
        matches!(self, Mode::Unialign | Mode::WoSme)
    }

    pub fn ensembles(self) -> bool {
        matches!(self, Mode::Unialign | Mode::WoDaf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Unialign => "unialign",
            Mode::Standard => "standard",
            Mode::WoDaf => "wo-daf",
            Mode::WoSme => "wo-sme",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_width: usize,
    pub repr_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_width: 128,
            repr_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// Label smoothing ε.
    pub epsilon: f64,
    /// Alignment weight α.
    pub alpha: f64,
    pub pair_scale: PairScale,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            epsilon: 0.1,
            alpha: 0.5,
            pair_scale: PairScale::PairMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub batch_per_domain: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            learning_rate: 2.0e-3,
            batch_per_domain: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset used when no path is given on the command line.
    pub dataset: Option<PathBuf>,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Class used for the divergence diagnostic; the most frequent
    /// test-domain class when unset.
    pub jsd_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Mode of single training runs.
    pub mode: Mode,
    /// Modes compared by cross-domain experiments.
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub model: ModelSection,
    pub loss: LossSection,
    pub valley: ValleyConfig,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Unialign,
            modes: Mode::ALL.to_vec(),
            seeds: vec![0],
            model: ModelSection::default(),
            loss: LossSection::default(),
            valley: ValleyConfig::default(),
            optimizer: OptimizerSection::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.valley.validate()?;
        if !(0.0..1.0).contains(&self.loss.epsilon) {
            return Err(Error::Config(format!("loss.epsilon must lie in [0, 1), got {}", self.loss.epsilon)));
        }
        if !(self.loss.alpha >= 0.0 && self.loss.alpha.is_finite()) {
            return Err(Error::Config(format!("loss.alpha must be >= 0, got {}", self.loss.alpha)));
        }
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate must be > 0, got {}",
                self.optimizer.learning_rate
            )));
        }
        if self.optimizer.batch_per_domain == 0 {
            return Err(Error::Config("optimizer.batch_per_domain must be >= 1".into()));
        }
        if self.model.hidden_width == 0 || self.model.repr_dim == 0 {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("modes must name at least one mode".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        let g = &self.data.generator;
        if !(0.0..=1.0).contains(&g.magnitude) {
            return Err(Error::Config(format!(
                "data.generator.magnitude must lie in [0, 1], got {}",
                g.magnitude
            )));
        }
        Ok(())
    }

    /// Parses a TOML document, applies `dotted.key=value` overrides and
    /// validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file at `path` (an absent path means an empty document).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `a.b.c` to `value`, parsed as a TOML value when possible and as a
/// bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let (last, path) = parts.split_last().expect("non-empty");
    let mut table = doc;
    for p in path {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
