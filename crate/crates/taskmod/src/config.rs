//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taskmod_core::{
    ArchSpec, AttributeSpec, InputKind, InsertionSpec, LedgerMode, Margins, ModulationKind, TrainConfig, Variant,
};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub modulation: ModulationConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub compare: CompareSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKindName {
    Vector,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correlation {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub attributes: usize,
    pub samples: usize,
    #[serde(default = "default_input")]
    pub input: InputKindName,
    /// Vector length for vector inputs.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Side length for square image inputs.
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub correlations: Vec<Correlation>,
}

fn default_input() -> InputKindName {
    InputKindName::Image
}
fn default_dim() -> usize {
    16
}
fn default_side() -> usize {
    32
}
fn default_sigma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// conv1 width for image inputs.
    pub conv1: usize,
    /// Output channels of each conv/pool/resnet block, or hidden widths for
    /// vector inputs.
    pub blocks: Vec<usize>,
    pub embedding: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv1: 8,
            blocks: vec![16, 16],
            embedding: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModulationKindName {
    Vector,
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    pub from_block: String,
    pub kind: ModulationKindName,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            from_block: "fc".to_string(),
            kind: ModulationKindName::Vector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LedgerName {
    Full,
    Lean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub variant: String,
    /// Tasks to train on; defaults to every attribute.
    pub tasks: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub normalize_embeddings: bool,
    pub ucr_enabled: bool,
    pub ledger: LedgerName,
    pub eval_triplets: usize,
    pub eval_seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the initial
    /// and final ones.
    pub checkpoint_every: usize,
    /// Triples (i, j, k): task pair (i, j) is more related than (i, k).
    pub relevance: Vec<[usize; 3]>,
    /// Checkpoint whose shared parameters initialise only-mask runs.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let m = Margins::default();
        Self {
            variant: "modulated".to_string(),
            tasks: None,
            batch_size: 40,
            epochs: 30,
            learning_rate: 0.01,
            epsilon: 1e-8,
            alpha: m.alpha,
            beta: m.beta,
            lambda: m.lambda,
            normalize_embeddings: false,
            ucr_enabled: true,
            ledger: LedgerName::Lean,
            eval_triplets: 500,
            eval_seed: 1,
            checkpoint_every: 0,
            relevance: Vec::new(),
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub variants: Vec<String>,
    /// Extra modulated runs, one per insertion block.
    pub from_blocks: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            variants: vec!["modulated".to_string(), "fully-shared".to_string()],
            from_blocks: Vec::new(),
        }
    }
}

/// Parses a `--set` value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key.path=value` overrides to a parsed document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> AppResult<()> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| AppError::Config(format!("override {o:?} is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(AppError::Config(format!("override {o:?} has an empty key segment")));
        }
        let mut table = &mut *doc;
        for p in &parts[..parts.len() - 1] {
            let entry = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| AppError::Config(format!("override {o:?}: {p} is not a table")))?;
        }
        table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> AppResult<Self> {
        let de = |e: toml::de::Error| AppError::Config(e.to_string());
        let cfg: Self = if overrides.is_empty() {
            toml::from_str(text).map_err(de)?
        } else {
            let mut doc: toml::Table = text.parse().map_err(de)?;
            apply_overrides(&mut doc, overrides)?;
            toml::Value::Table(doc).try_into().map_err(de)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative output and checkpoint paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg = Self::parse(&text, overrides).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(p) = cfg.train.init_checkpoint.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn attribute_spec(&self) -> AttributeSpec {
        let d = &self.data;
        let kind = match d.input {
            InputKindName::Vector => InputKind::Vector { dim: d.dim },
            InputKindName::Image => InputKind::Image {
                height: d.side,
                width: d.side,
            },
        };
        let mut spec = AttributeSpec::independent(d.attributes, d.samples, kind, d.seed);
        spec.noise_sigma = d.noise_sigma;
        for c in &self.data.correlations {
            spec = spec.with_correlation(c.i, c.j, c.rho);
        }
        spec
    }

    pub fn arch(&self) -> ArchSpec {
        let m = &self.model;
        match self.data.input {
            InputKindName::Vector => ArchSpec::mlp(self.data.dim, &m.blocks, m.embedding),
            InputKindName::Image => {
                ArchSpec::conv_stack([self.data.side, self.data.side, 1], m.conv1, &m.blocks, m.embedding)
            }
        }
    }

    pub fn insertion(&self, from_block: &str) -> InsertionSpec {
        let kind = match self.modulation.kind {
            ModulationKindName::Vector => ModulationKind::ScalingVector,
            ModulationKindName::Matrix => ModulationKind::ProjectionMatrix,
        };
        InsertionSpec::new(from_block, kind)
    }

    pub fn tasks(&self) -> usize {
        self.train.tasks.unwrap_or(self.data.attributes)
    }

    /// Training configuration for `variant` with the first configured seed.
    pub fn train_config(&self, variant: Variant) -> TrainConfig {
        let t = &self.train;
        let mut c = TrainConfig::new(self.arch(), self.tasks());
        c.insertion = self.insertion(&self.modulation.from_block);
        c.margins = Margins {
            alpha: t.alpha,
            beta: t.beta,
            lambda: t.lambda,
        };
        c.normalize_embeddings = t.normalize_embeddings;
        c.batch_size = t.batch_size;
        c.epochs = t.epochs;
        c.seed = self.seeds[0];
        c.learning_rate = t.learning_rate;
        c.epsilon = t.epsilon;
        c.ucr_enabled = t.ucr_enabled;
        c.ledger_mode = match t.ledger {
            LedgerName::Full => LedgerMode::Full,
            LedgerName::Lean => LedgerMode::Lean,
        };
        c.variant = variant;
        c.eval_triplets_per_task = t.eval_triplets;
        c.eval_seed = t.eval_seed;
        c.relevance = t.relevance.clone();
        c
    }

    pub fn train_variant(&self) -> AppResult<Variant> {
        self.train
            .variant
            .parse()
            .map_err(|e: taskmod_core::Error| AppError::Config(e.to_string()))
    }

    /// Labelled training configurations for `compare`.
    pub fn compare_configs(&self) -> AppResult<Vec<(String, TrainConfig)>> {
        let mut out = Vec::new();
        for name in &self.compare.variants {
            let v: Variant = name
                .parse()
                .map_err(|e: taskmod_core::Error| AppError::Config(e.to_string()))?;
            out.push((v.to_string(), self.train_config(v)));
        }
        for block in &self.compare.from_blocks {
            let mut c = self.train_config(Variant::Modulated);
            c.insertion = self.insertion(block);
            out.push((format!("modulated(from {block})"), c));
        }
        Ok(out)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> AppResult<()> {
        if self.seeds.is_empty() {
            return Err(AppError::Config("seeds must not be empty".to_string()));
        }
        for c in &self.data.correlations {
            if c.i >= self.data.attributes || c.j >= self.data.attributes || c.i == c.j {
                return Err(AppError::Config(format!(
                    "correlation entry ({}, {}) must name two distinct attributes below {}",
                    c.i, c.j, self.data.attributes
                )));
            }
        }
        if self.tasks() > self.data.attributes {
            return Err(AppError::Config(format!(
                "train.tasks = {} exceeds data.attributes = {}",
                self.tasks(),
                self.data.attributes
            )));
        }
        self.attribute_spec().validate()?;
        let variant = self.train_variant()?;
        self.train_config(variant).validate()?;
        for (_, c) in self.compare_configs()? {
            c.validate()?;
            taskmod_core::build_variant(&c.arch, &c.insertion, c.variant, c.tasks, 0)?;
        }
        taskmod_core::build_variant(
            &self.arch(),
            &self.insertion(&self.modulation.from_block),
            variant,
            self.tasks(),
            0,
        )?;
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.output_dir.join("dataset.bin")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output_dir = "out"
seeds = [1, 2]

[data]
attributes = 2
samples = 200
side = 12

[model]
conv1 = 4
blocks = [8, 8]
embedding = 8
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(BASE, &[]).unwrap();
        assert_eq!(c.train.batch_size, 40);
        assert_eq!(c.tasks(), 2);
        assert_eq!(c.train_config(Variant::Modulated).learning_rate, 0.01);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\n[train]\nbatchsize = 4\n");
        let err = ExperimentConfig::parse(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_take_precedence() {
        let text = format!("{BASE}\n[train]\nepochs = 5\n");
        let c = ExperimentConfig::parse(&text, &["train.epochs=7".into(), "train.variant=ib-4".into()]).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train_variant().unwrap(), Variant::IndependentBranch(4));
        assert!(ExperimentConfig::parse(BASE, &["train".into()]).is_err());
    }

    #[test]
    fn non_psd_correlation_names_correlation() {
        let text = format!(
            "{}\n{}",
            BASE.replace("attributes = 2", "attributes = 3"),
            "[[data.correlations]]\ni = 0\nj = 1\nrho = 0.9\n[[data.correlations]]\ni = 0\nj = 2\nrho = 0.9\n[[data.correlations]]\ni = 1\nj = 2\nrho = -0.9\n"
        );
        let err = ExperimentConfig::parse(&text, &[]).unwrap_err();
        assert!(err.to_string().contains("correlation"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn indivisible_batch_is_config_error() {
        let err = ExperimentConfig::parse(BASE, &["train.batch_size=41".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::parse(BASE, &[]).unwrap();
        let b = ExperimentConfig::parse(BASE, &["train.epochs=3".into()]).unwrap();
        assert_eq!(a.hash(), ExperimentConfig::parse(BASE, &[]).unwrap().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
