//! Run configuration: file format, defaults, validation, provenance hash.
//!
//! A single TOML file drives every command. `[super_concepts]` and
//! `[binary_concepts]` declare the ground-truth vocabulary (super concept ->
//! list of concepts, each concept a list of synonym words). `[generation]`,
//! `[noise]`, `[induction]`, and `[run]` tune the pipeline and all have
//! defaults, so a minimal config is just the vocabulary tables.
//!
//! The provenance hash covers the effective pipeline settings (vocabulary,
//! generation, noise, induction, seed, scene count) after CLI overrides are
//! applied. Anything that changes generated or induced artifacts changes the
//! hash; evaluation-only knobs (question count) do not.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type ConceptList = Vec<Vec<String>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub super_concepts: IndexMap<String, ConceptList>,
    #[serde(default)]
    pub binary_concepts: IndexMap<String, ConceptList>,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub induction: InductionConfig,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    /// Scene size is drawn uniformly from `min_objects..=max_objects`.
    pub min_objects: usize,
    pub max_objects: usize,
    /// Minimum Euclidean distance between object positions in the unit square.
    pub min_separation: f64,
    /// Half-width of the per-axis band inside which a relation is ambiguous.
    pub ambiguity_epsilon: f64,
    /// Words mentioned per scene.
    pub unary_mentions: usize,
    pub binary_mentions: usize,
    /// Probability that a mention is drawn from words relevant to the scene.
    pub relevance_bias: f64,
    /// Corpus-level floor: every word is mentioned at least this many times,
    /// enforced by appending targeted top-up scenes.
    pub min_mentions: usize,
    /// Rejection-sampling budget when placing one object.
    pub max_place_retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            min_objects: 3,
            max_objects: 10,
            min_separation: 0.05,
            ambiguity_epsilon: 0.02,
            unary_mentions: 6,
            binary_mentions: 2,
            relevance_bias: 0.9,
            min_mentions: 50,
            max_place_retries: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub mu_positive: f64,
    pub mu_negative: f64,
    pub mu_ambiguous: f64,
    /// Logit noise scale. Zero gives exact peak values.
    pub sigma: f64,
    pub feature_dim: usize,
    pub feature_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            mu_positive: 3.0,
            mu_negative: -3.0,
            mu_ambiguous: 0.0,
            sigma: 1.0,
            feature_dim: 32,
            feature_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InductionConfig {
    /// Sharpness of the sigmoid classifier around the decision boundary.
    pub tau: f64,
    /// Words with fewer collected logits than this are excluded.
    pub min_fit_samples: usize,
    pub em_tolerance: f64,
    pub em_max_iterations: usize,
    pub variance_floor: f64,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            tau: 0.5,
            min_fit_samples: 30,
            em_tolerance: 1e-7,
            em_max_iterations: 500,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub scenes: usize,
    pub questions: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            scenes: 500,
            questions: 5000,
        }
    }
}

/// Effective configuration after file parsing and CLI overrides.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub super_concepts: IndexMap<String, ConceptList>,
    pub binary_concepts: IndexMap<String, ConceptList>,
    pub generation: GenerationConfig,
    pub noise: NoiseConfig,
    pub induction: InductionConfig,
    pub seed: u64,
    pub scenes: usize,
    pub questions: usize,
}

/// The built-in default configuration (also shipped as `configs/clevr.toml`).
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../configs/clevr.toml");

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        let cfg = RunConfig {
            super_concepts: file.super_concepts,
            binary_concepts: file.binary_concepts,
            generation: file.generation,
            noise: file.noise,
            induction: file.induction,
            seed: file.run.seed,
            scenes: file.run.scenes,
            questions: file.run.questions,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn builtin_default() -> RunConfig {
        Self::from_toml(DEFAULT_CONFIG_TOML).expect("built-in config is valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.generation;
        if self.super_concepts.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one unary super concept is required".into(),
            ));
        }
        if g.min_objects < 1 || g.min_objects > g.max_objects {
            return Err(ConfigError::Invalid(format!(
                "object bounds {}..={} are not a valid range",
                g.min_objects, g.max_objects
            )));
        }
        if !(0.0..=1.0).contains(&g.relevance_bias) {
            return Err(ConfigError::Invalid(format!(
                "relevance_bias {} outside [0, 1]",
                g.relevance_bias
            )));
        }
        if g.min_separation < 0.0 || g.ambiguity_epsilon < 0.0 {
            return Err(ConfigError::Invalid(
                "min_separation and ambiguity_epsilon must be non-negative".into(),
            ));
        }
        if g.unary_mentions == 0 {
            return Err(ConfigError::Invalid(
                "unary_mentions must be at least 1".into(),
            ));
        }
        let n = &self.noise;
        if !(n.mu_negative < n.mu_ambiguous && n.mu_ambiguous < n.mu_positive) {
            return Err(ConfigError::Invalid(format!(
                "peak ordering violated: need mu_negative < mu_ambiguous < mu_positive, got {} / {} / {}",
                n.mu_negative, n.mu_ambiguous, n.mu_positive
            )));
        }
        if !n.sigma.is_finite() || n.sigma < 0.0 {
            return Err(ConfigError::Invalid(format!(
                "sigma must be finite and non-negative, got {}",
                n.sigma
            )));
        }
        if !n.feature_sigma.is_finite() || n.feature_sigma < 0.0 || n.feature_dim == 0 {
            return Err(ConfigError::Invalid(
                "feature_dim must be positive and feature_sigma finite and non-negative".into(),
            ));
        }
        let i = &self.induction;
        if i.tau <= 0.0 || !i.tau.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "tau must be positive, got {}",
                i.tau
            )));
        }
        if i.em_tolerance <= 0.0 || i.variance_floor <= 0.0 || i.em_max_iterations == 0 {
            return Err(ConfigError::Invalid(
                "EM tolerance, variance floor, and iteration budget must be positive".into(),
            ));
        }
        if self.scenes == 0 {
            return Err(ConfigError::Invalid("scene count must be positive".into()));
        }
        Ok(())
    }

    /// Hash over everything that affects generated or induced artifacts.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct PipelinePart<'a> {
            super_concepts: &'a IndexMap<String, ConceptList>,
            binary_concepts: &'a IndexMap<String, ConceptList>,
            generation: &'a GenerationConfig,
            noise: &'a NoiseConfig,
            induction: &'a InductionConfig,
            seed: u64,
            scenes: usize,
        }
        let part = PipelinePart {
            super_concepts: &self.super_concepts,
            binary_concepts: &self.binary_concepts,
            generation: &self.generation,
            noise: &self.noise,
            induction: &self.induction,
            seed: self.seed,
            scenes: self.scenes,
        };
        let canonical = serde_json::to_vec(&part).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_default_parses_and_validates() {
        let cfg = RunConfig::builtin_default();
        assert_eq!(cfg.super_concepts.len(), 4);
        assert_eq!(cfg.binary_concepts.len(), 2);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.scenes, 500);
    }

    #[test]
    fn hash_changes_iff_pipeline_config_changes() {
        let a = RunConfig::builtin_default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 43;
        assert_ne!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.noise.sigma = 0.5;
        assert_ne!(a.config_hash(), c.config_hash());
        // Evaluation-only knobs leave induction artifacts untouched.
        let mut d = a.clone();
        d.questions = 17;
        assert_eq!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = RunConfig::builtin_default();
        cfg.generation.relevance_bias = 1.5;
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let mut cfg = RunConfig::builtin_default();
        cfg.noise.mu_positive = -5.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::builtin_default();
        cfg.induction.tau = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let text = "[super_concepts]\ncolor = [[\"red\"], [\"blue\"]]\n[generation]\nbogus = 3\n";
        assert!(matches!(
            RunConfig::from_toml(text),
            Err(ConfigError::Parse(_))
        ));
    }
}
