//! Pipeline configuration: one TOML file with dotted sections, overlaid by
//! command-line flags.
//!
//! Every key can be set from the command line as `--section.key value` (or
//! `--section.key=value`). Values are read as TOML when they parse as such
//! (`--train.epochs 5`, `--mining.langlink_enabled false`) and as strings
//! otherwise. Flags always win over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};
use xlqa_core::corpus::{DEFAULT_DISAMBIGUATION_MARKERS, DEFAULT_MAX_TOKENS, DEFAULT_MIN_TOKENS};
use xlqa_core::evalkit::{CategoryConfig, DEFAULT_RECALL_K};
use xlqa_core::generator::{GeneratorKind, DEFAULT_MAX_ANSWER_TOKENS, DEFAULT_PROMPT_PASSAGES};
use xlqa_core::miner::{IterationConfig, TrainConfig};
use xlqa_core::remote::{DEFAULT_BATCH_SIZE, DEFAULT_MAX_IN_FLIGHT};
use xlqa_core::toy::{E2eConfig, ToyConfig};
use xlqa_core::EncoderKind;

/// Passages retrieved per question at answer time.
pub const DEFAULT_RETRIEVE_K: usize = 15;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed for every seeded component; unset means per-component defaults.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub encoder: EncoderSection,
    pub generator: GeneratorSection,
    pub retrieve: RetrieveSection,
    pub mining: MiningSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub toy: ToySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub passages: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// Trained encoder parameters (toy-trainable).
    pub model: Option<PathBuf>,
    pub links: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub training_set: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub retrievals: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Gold answers handed to the toy generator as its oracle.
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub max_tokens: usize,
    pub min_tokens: usize,
    pub disambiguation_markers: Vec<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            min_tokens: DEFAULT_MIN_TOKENS,
            disambiguation_markers: DEFAULT_DISAMBIGUATION_MARKERS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub kind: EncoderKind,
    pub dim: usize,
    pub vocab_size: usize,
    pub endpoint: Option<String>,
    pub batch_size: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            kind: EncoderKind::ToyHash,
            dim: xlqa_core::encoder::DEFAULT_DIM,
            vocab_size: 4096,
            endpoint: None,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub endpoint: Option<String>,
    pub prompt_passages: usize,
    pub max_answer_tokens: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    /// Titles the toy generator refuses to extract from.
    pub unextractable_titles: Vec<String>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::ToyExtractive,
            endpoint: None,
            prompt_passages: DEFAULT_PROMPT_PASSAGES,
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
            batch_size: DEFAULT_BATCH_SIZE,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            unextractable_titles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    pub k: usize,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_RETRIEVE_K,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub retrieve_k: usize,
    pub max_iterations: usize,
    pub langlink_enabled: bool,
    pub langlink_language_cap: usize,
    pub synthetic_subsample_rate: f64,
    pub max_negatives: usize,
    pub synthetic_languages: Vec<String>,
}

impl Default for MiningSection {
    fn default() -> Self {
        let d = IterationConfig::default();
        Self {
            retrieve_k: d.retrieve_k,
            max_iterations: d.max_iterations,
            langlink_enabled: d.langlink_enabled,
            langlink_language_cap: d.langlink_language_cap,
            synthetic_subsample_rate: d.synthetic_subsample_rate,
            max_negatives: d.max_negatives,
            synthetic_languages: d.synthetic_languages,
        }
    }
}

impl MiningSection {
    pub fn to_core(&self, seed: u64) -> IterationConfig {
        IterationConfig {
            retrieve_k: self.retrieve_k,
            max_iterations: self.max_iterations,
            langlink_enabled: self.langlink_enabled,
            langlink_language_cap: self.langlink_language_cap,
            synthetic_subsample_rate: self.synthetic_subsample_rate,
            max_negatives: self.max_negatives,
            seed,
            synthetic_languages: self.synthetic_languages.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Train only the passage tower.
    pub freeze_question_tower: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            freeze_question_tower: false,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub k: usize,
    pub gold_languages: Vec<String>,
    pub mdpr_languages: Vec<String>,
    pub mgen_languages: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let c = CategoryConfig::default();
        Self {
            k: DEFAULT_RECALL_K,
            gold_languages: c.gold.into_iter().collect(),
            mdpr_languages: c.mdpr.into_iter().collect(),
            mgen_languages: c.mgen.into_iter().collect(),
        }
    }
}

impl EvalSection {
    pub fn categories(&self) -> CategoryConfig {
        let lower = |v: &[String]| v.iter().map(|s| s.to_lowercase()).collect();
        CategoryConfig {
            gold: lower(&self.gold_languages),
            mdpr: lower(&self.mdpr_languages),
            mgen: lower(&self.mgen_languages),
        }
    }
}

/// Synthetic-world benchmark settings. Training hyperparameters live here
/// rather than in `[train]` because the toy world wants a much hotter
/// learning rate than a real corpus.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySection {
    pub entities: usize,
    pub direct_fraction: f64,
    pub spurious_fraction: f64,
    pub article_tokens: usize,
    pub filler_vocab: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        let d = E2eConfig::default();
        Self {
            entities: d.world.entities,
            direct_fraction: d.world.direct_fraction,
            spurious_fraction: d.world.spurious_fraction,
            article_tokens: d.world.article_tokens,
            filler_vocab: d.world.filler_vocab,
            dim: d.dim,
            vocab_size: d.vocab_size,
            k: d.k,
            epochs: d.train.epochs,
            learning_rate: d.train.learning_rate,
            batch_size: d.train.batch_size,
        }
    }
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn e2e(&self) -> E2eConfig {
        let d = E2eConfig::default();
        let t = &self.toy;
        let mut cfg = E2eConfig {
            world: ToyConfig {
                entities: t.entities,
                direct_fraction: t.direct_fraction,
                spurious_fraction: t.spurious_fraction,
                article_tokens: t.article_tokens,
                filler_vocab: t.filler_vocab,
                seed: d.world.seed,
            },
            dim: t.dim,
            vocab_size: t.vocab_size,
            init_seed: d.init_seed,
            k: t.k,
            mining: self.mining.to_core(d.mining.seed),
            train: TrainConfig {
                epochs: t.epochs,
                learning_rate: t.learning_rate,
                batch_size: t.batch_size,
                seed: d.train.seed,
            },
        };
        if let Some(s) = self.seed {
            cfg.world.seed = s;
            cfg.init_seed = s.wrapping_add(1);
            cfg.mining.seed = s;
            cfg.train.seed = s;
        }
        cfg
    }
}

/// A `--dotted.key value` pair taken off the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: String,
}

/// Splits dotted overrides out of `args`, returning the remaining arguments
/// for the regular parser.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>), String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| format!("flag --{name} needs a value"))?,
        };
        overrides.push(Override {
            key: name.to_string(),
            value,
        });
    }
    Ok((rest, overrides))
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Sets `key` (dotted) in `table`, creating sections as needed.
pub fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("malformed key {key:?}"));
    }
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{key:?}: {p:?} is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Relative entries of a file's `[paths]` section are taken relative to the
/// file, so a config can travel with its data.
fn anchor_paths(table: &mut Table, base: &Path) {
    let Some(Value::Table(paths)) = table.get_mut("paths") else {
        return;
    };
    for (_, v) in paths.iter_mut() {
        if let Value::String(s) = v {
            if Path::new(s.as_str()).is_relative() {
                let anchored = base.join(s.as_str()).to_string_lossy().into_owned();
                *v = Value::String(anchored);
            }
        }
    }
}

/// Builds the effective configuration: file, then `flags` (already in
/// dotted form), then dotted overrides.
pub fn load(
    file: Option<&Path>,
    flags: &[(String, Value)],
    overrides: &[Override],
) -> Result<PipelineConfig, ConfigError> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
            let mut t = toml::from_str::<Table>(&text)
                .map_err(|e| ConfigError::Invalid(format!("{}: {}", path.display(), e.message())))?;
            anchor_paths(&mut t, path.parent().unwrap_or(Path::new("")));
            t
        }
        None => Table::new(),
    };
    for (k, v) in flags {
        set_dotted(&mut table, k, v.clone()).map_err(ConfigError::Invalid)?;
    }
    for o in overrides {
        set_dotted(&mut table, &o.key, parse_value(&o.value)).map_err(ConfigError::Invalid)?;
    }
    PipelineConfig::deserialize(Value::Table(table))
        .map_err(|e| ConfigError::Invalid(e.message().to_string()))
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// The config file could not be read.
    #[error("config: {0}")]
    Read(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn dotted_flags_are_pulled_out() {
        let (rest, ov) =
            extract_overrides(args("xlqa --train.epochs 3 embed --k 2 --mining.seedless=x")).unwrap();
        assert_eq!(rest, args("xlqa embed --k 2"));
        assert_eq!(ov[0].key, "train.epochs");
        assert_eq!(ov[0].value, "3");
        assert_eq!(ov[1].value, "x");
        assert!(extract_overrides(args("--a.b")).is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[train]\nepochs = 7\nlearning_rate = 0.5\n").unwrap();
        let cfg = load(
            Some(&path),
            &[("seed".into(), Value::Integer(9))],
            &[Override {
                key: "train.epochs".into(),
                value: "2".into(),
            }],
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.learning_rate, 0.5);
        assert_eq!(cfg.retrieve.k, DEFAULT_RETRIEVE_K);
    }

    #[test]
    fn strings_and_unknown_keys() {
        let ov = |k: &str, v: &str| Override {
            key: k.into(),
            value: v.into(),
        };
        let cfg = load(None, &[], &[ov("encoder.kind", "toy-trainable"), ov("paths.index", "a/b.idx")]).unwrap();
        assert_eq!(cfg.encoder.kind, EncoderKind::ToyTrainable);
        assert_eq!(cfg.paths.index.as_deref(), Some(Path::new("a/b.idx")));
        assert!(load(None, &[], &[ov("train.epoch", "1")]).is_err());
        assert!(load(None, &[], &[ov("encoder.kind", "bert")]).is_err());
    }
}
