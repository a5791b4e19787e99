use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{AggregationScheme, Level};
use crate::error::{Error, Result};
use crate::eval::RidgeConfig;
use crate::hulm::{BlockMode, HulmConfig};
use crate::repr::{
    compatible, layer_policy_default, LayerChoice, ModelKind, Pooler, ReprSpec, UserVectorScheme,
};
use crate::toylm::{Family, ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Filters {
    pub min_waves: usize,
    pub min_docs: usize,
    pub min_words: usize,
}

impl Default for Filters {
    fn default() -> Self {
        Filters {
            min_waves: 1,
            min_docs: 1,
            min_words: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    Autoregressive,
    MaskedEncoder,
    #[serde(rename = "HuLM")]
    Hulm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub tag: String,
    pub family: ModelFamily,
    /// Block packing; HuLM only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<BlockMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_blocks: Option<usize>,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    #[serde(default = "defaults::n_heads")]
    pub n_heads: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    #[serde(default = "defaults::max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "defaults::train_steps")]
    pub train_steps: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
}

mod defaults {
    pub fn d_model() -> usize {
        32
    }
    pub fn n_layers() -> usize {
        2
    }
    pub fn n_heads() -> usize {
        2
    }
    pub fn d_ff() -> usize {
        64
    }
    pub fn max_seq_len() -> usize {
        65
    }
    pub fn train_steps() -> usize {
        200
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn k() -> usize {
        10
    }
    pub fn max_vocab() -> usize {
        2000
    }
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self.family {
            ModelFamily::Autoregressive => ModelKind::Autoregressive,
            ModelFamily::MaskedEncoder => ModelKind::MaskedEncoder,
            ModelFamily::Hulm => ModelKind::Hulm(self.mode.unwrap_or(BlockMode::OneDocPerBlock)),
        }
    }

    pub fn model_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            vocab_size,
            family: match self.family {
                ModelFamily::MaskedEncoder => Family::MaskedEncoder,
                _ => Family::Autoregressive,
            },
            seed,
        }
    }

    pub fn hulm_config(&self) -> Option<HulmConfig> {
        let ModelKind::Hulm(mode) = self.kind() else {
            return None;
        };
        let base = HulmConfig::desk(mode);
        Some(HulmConfig {
            mode,
            block_size: self.block_size.unwrap_or(base.block_size),
            max_blocks: self.max_blocks.unwrap_or(base.max_blocks),
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.train_steps,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "model tag `{}` must be non-empty without slashes",
                self.tag
            )));
        }
        if self.family != ModelFamily::Hulm
            && (self.mode.is_some() || self.block_size.is_some() || self.max_blocks.is_some())
        {
            return Err(Error::Config(format!(
                "model `{}`: block settings apply to HuLM only",
                self.tag
            )));
        }
        // vocab size is unknown here; any placeholder passes the shape checks
        self.model_config(8, 0).validate()?;
        if let Some(h) = self.hulm_config() {
            if h.block_size < 2 || h.max_blocks == 0 {
                return Err(Error::Config(format!(
                    "model `{}`: block_size ≥ 2 and max_blocks ≥ 1 required",
                    self.tag
                )));
            }
            if h.block_size + 1 > self.max_seq_len {
                return Err(Error::Config(format!(
                    "model `{}`: block_size {} needs max_seq_len ≥ {} for the user-state slot",
                    self.tag,
                    h.block_size,
                    h.block_size + 1
                )));
            }
        }
        // checked here rather than at train time so nothing runs on a bad config
        if self.train_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "model `{}`: train_steps and batch_size must be ≥ 1",
                self.tag
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "model `{}`: invalid learning rate",
                self.tag
            )));
        }
        Ok(())
    }
}

/// A representation request; `layer` falls back to the default policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReprRequest {
    pub model_tag: String,
    pub pooler: Pooler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerChoice>,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReprSpecs {
    /// The string `"auto"`: every valid model × pooler × level.
    Auto(String),
    List(Vec<ReprRequest>),
}

impl Default for ReprSpecs {
    fn default() -> Self {
        ReprSpecs::Auto("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "defaults::k")]
    pub k: usize,
    /// Defaults to a substream of the root seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: defaults::k(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub aggregation_scheme: AggregationScheme,
    #[serde(default)]
    pub user_vectors: UserVectorScheme,
    #[serde(default)]
    pub filters: Filters,
    #[serde(default = "defaults::max_vocab")]
    pub max_vocab: usize,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub repr_specs: ReprSpecs,
    pub levels: Vec<Level>,
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub cv: CvConfig,
}

impl ExperimentConfig {
    /// Reads TOML (`.toml`) or JSON (anything else). Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::parse(&raw, path.extension().is_some_and(|e| e == "toml"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.corpus_path.is_relative() {
            cfg.corpus_path = base.join(&cfg.corpus_path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn parse(raw: &str, toml: bool) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = if toml {
            toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?
        } else {
            serde_json::from_str(raw).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self, tag: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.tag == tag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        let mut tags = BTreeSet::new();
        for m in &self.models {
            m.validate()?;
            if !tags.insert(&m.tag) {
                return Err(Error::Config(format!("duplicate model tag `{}`", m.tag)));
            }
        }
        if self.levels.is_empty() || self.outcomes.is_empty() {
            return Err(Error::Config(
                "levels and outcomes must be non-empty".into(),
            ));
        }
        if self.max_vocab <= crate::toylm::tokenizer::SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "max_vocab {} is too small",
                self.max_vocab
            )));
        }
        if self.cv.k < 2 {
            return Err(Error::Config("cv.k must be at least 2".into()));
        }
        self.ridge.validate()?;
        if let ReprSpecs::Auto(s) = &self.repr_specs {
            if s != "auto" {
                return Err(Error::Config(format!(
                    "repr_specs must be \"auto\" or a list, got `{s}`"
                )));
            }
        }
        self.resolved_specs().map(|_| ())
    }

    /// Concrete specs in a stable order; rejects incompatible requests.
    pub fn resolved_specs(&self) -> Result<Vec<ReprSpec>> {
        let mut out = Vec::new();
        match &self.repr_specs {
            ReprSpecs::Auto(_) => {
                for m in &self.models {
                    for &level in &self.levels {
                        for pooler in Pooler::ALL {
                            if compatible(pooler, m.kind(), level) {
                                out.push(ReprSpec {
                                    model_tag: m.tag.clone(),
                                    pooler,
                                    layer: layer_policy_default(pooler, m.kind()),
                                    level,
                                });
                            }
                        }
                    }
                }
            }
            ReprSpecs::List(list) => {
                for r in list {
                    let m = self.model(&r.model_tag).ok_or_else(|| {
                        Error::InvalidSpec(format!("unknown model `{}`", r.model_tag))
                    })?;
                    let spec = ReprSpec {
                        model_tag: r.model_tag.clone(),
                        pooler: r.pooler,
                        layer: r
                            .layer
                            .unwrap_or_else(|| layer_policy_default(r.pooler, m.kind())),
                        level: r.level,
                    };
                    spec.check(m.kind())?;
                    if spec.layer == LayerChoice::SecondToLast && m.n_layers < 2 {
                        return Err(Error::InvalidSpec(format!(
                            "{} needs at least 2 layers in `{}`",
                            spec.label(),
                            m.tag
                        )));
                    }
                    if !out.contains(&spec) {
                        out.push(spec);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn cv_seed(&self) -> u64 {
        self.cv
            .seed
            .unwrap_or_else(|| crate::seed::substream(self.seed, "folds"))
    }

    /// SHA-256 of the canonical JSON of every field except `output_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        corpus_path = "corpus.jsonl"
        output_dir = "out"
        levels = ["user"]
        outcomes = ["valence"]

        [[models]]
        tag = "ar"
        family = "Autoregressive"
    "#;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(s, true)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.cv.k, 10);
        assert_eq!(c.ridge, RidgeConfig::default());
        assert_eq!(c.repr_specs, ReprSpecs::default());
        let specs = c.resolved_specs().unwrap();
        let poolers: Vec<Pooler> = specs.iter().map(|s| s.pooler).collect();
        assert_eq!(poolers, [Pooler::At, Pooler::Lt]);
    }

    #[test]
    fn seed_is_mandatory() {
        let no_seed = MINIMAL.replace("seed = 7", "");
        assert!(matches!(parse(&no_seed), Err(Error::Config(_))));
    }

    #[test]
    fn cls_on_decoder_is_rejected() {
        let s = MINIMAL.replace(
            "[[models]]",
            "repr_specs = [{ model_tag = \"ar\", pooler = \"CLS\", level = \"user\" }]\n[[models]]",
        );
        assert!(matches!(parse(&s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn auto_specs_enumerate_the_matrix() {
        let s = r#"{
            "seed": 1, "corpus_path": "c", "output_dir": "o",
            "levels": ["document", "wave", "user"], "outcomes": ["valence"],
            "models": [
                {"tag": "hu", "family": "HuLM", "mode": "OneDocPerBlock"},
                {"tag": "ar", "family": "Autoregressive"}
            ]
        }"#;
        let c = ExperimentConfig::parse(s, false).unwrap();
        let specs = c.resolved_specs().unwrap();
        let count = |tag: &str| specs.iter().filter(|s| s.model_tag == tag).count();
        assert_eq!(count("hu"), 4 * 3);
        assert_eq!(count("ar"), 2 * 3);
        assert!(specs
            .iter()
            .any(|s| s.pooler == Pooler::U && s.level == Level::Document));

        let concat = s.replace("OneDocPerBlock", "ConcatBlocks");
        let c = ExperimentConfig::parse(&concat, false).unwrap();
        let specs = c.resolved_specs().unwrap();
        assert!(!specs
            .iter()
            .any(|s| s.pooler == Pooler::U && s.level == Level::Document));
        assert!(specs
            .iter()
            .any(|s| s.pooler == Pooler::U && s.level == Level::Wave));
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_semantics() {
        let a = parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        let explicit = parse(&MINIMAL.replace("levels", "max_vocab = 2000\nlevels")).unwrap();
        assert_eq!(a.hash(), explicit.hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.models[0].learning_rate = 0.2;
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn rejects_bad_model_settings() {
        for (from, to) in [
            (
                "family = \"Autoregressive\"",
                "family = \"Autoregressive\"\nmode = \"ConcatBlocks\"",
            ),
            (
                "family = \"Autoregressive\"",
                "family = \"HuLM\"\nblock_size = 64\nmax_seq_len = 64",
            ),
            (
                "family = \"Autoregressive\"",
                "family = \"Autoregressive\"\nd_model = 30\nn_heads = 4",
            ),
            ("tag = \"ar\"", "tag = \"a/r\""),
            ("outcomes = [\"valence\"]", "outcomes = []"),
            (
                "family = \"Autoregressive\"",
                "family = \"Autoregressive\"\ntrain_steps = 0",
            ),
            (
                "family = \"Autoregressive\"",
                "family = \"Autoregressive\"\ncolour = 3",
            ),
        ] {
            let s = MINIMAL.replace(from, to);
            assert!(matches!(parse(&s), Err(Error::Config(_))), "{to}");
        }
    }
}
