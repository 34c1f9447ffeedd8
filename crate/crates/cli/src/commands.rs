//! Subcommand bodies. Each reads its inputs, runs one stage and writes its
//! outputs atomically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use xlqa_core::corpus::{self, IngestConfig};
use xlqa_core::evalkit::{self, AnswerRecord, PredictionRecord, RetrievalRecord};
use xlqa_core::generator::{GeneratorKind, PromptPassage};
use xlqa_core::miner::{self, SyntheticExample};
use xlqa_core::remote::{RemoteEncoder, RemoteGenerator, SidecarClient};
use xlqa_core::toy::{self, ToyWorld};
use xlqa_core::{
    DenseIndex, DualEncoder, EncoderHandle, EncoderKind, Error, ErrorClass, Generator,
    GeneratorHandle, HashEncoder, LanguageLinkTable, PassageStore, QAInstance, Question,
    ToyExtractiveGenerator, ToyTrainableEncoder,
};

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Transport(_) => 3,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Transport(_) => "transport",
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e.class() {
            ErrorClass::Transport => CliError::Transport(e.to_string()),
            ErrorClass::Data => CliError::Data(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read(_) => CliError::Data(e.to_string()),
            ConfigError::Invalid(_) => CliError::Usage(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no path given for paths.{key}")))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e).into())
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    corpus::read_json_lines(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut dyn Write) -> xlqa_core::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::from(Error::io(path, e));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn load_store(cfg: &PipelineConfig) -> Result<PassageStore> {
    let path = require(&cfg.paths.passages, "passages")?;
    Ok(PassageStore::new(read_lines(path)?)?)
}

fn load_links(cfg: &PipelineConfig) -> Result<Option<LanguageLinkTable>> {
    cfg.paths
        .links
        .as_deref()
        .map(|p| {
            LanguageLinkTable::read_tsv(open(p)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .transpose()
}

fn endpoint(value: &Option<String>, key: &str) -> Result<SidecarClient> {
    let url = value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("remote kind needs {key} (or --endpoint)")))?;
    Ok(SidecarClient::new(url))
}

fn check_dim(cfg: &PipelineConfig, actual: usize) -> Result<()> {
    if actual != cfg.encoder.dim {
        return Err(Error::DimMismatch {
            expected: cfg.encoder.dim,
            actual,
        }
        .into());
    }
    Ok(())
}

fn fresh_trainable(cfg: &PipelineConfig) -> Result<ToyTrainableEncoder> {
    Ok(ToyTrainableEncoder::random(
        cfg.encoder.vocab_size,
        cfg.encoder.dim,
        cfg.seed(),
    )?)
}

/// The configured encoder. A toy-trainable encoder is read from
/// `paths.model` when set and freshly initialised otherwise.
pub fn build_encoder(cfg: &PipelineConfig) -> Result<EncoderHandle> {
    let e = &cfg.encoder;
    let handle = match e.kind {
        EncoderKind::ToyHash => EncoderHandle::ToyHash(HashEncoder::new(e.dim, cfg.seed())?),
        EncoderKind::ToyTrainable => EncoderHandle::ToyTrainable(match &cfg.paths.model {
            Some(p) => ToyTrainableEncoder::load(p)?,
            None => fresh_trainable(cfg)?,
        }),
        EncoderKind::Remote => EncoderHandle::Remote(
            RemoteEncoder::connect(endpoint(&e.endpoint, "encoder.endpoint")?)?
                .with_batch_size(e.batch_size),
        ),
    };
    check_dim(cfg, handle.dim())?;
    Ok(handle)
}

fn toy_generator(cfg: &PipelineConfig) -> ToyExtractiveGenerator {
    ToyExtractiveGenerator {
        max_answer_tokens: cfg.generator.max_answer_tokens,
        unextractable_titles: cfg.generator.unextractable_titles.iter().cloned().collect(),
        ..ToyExtractiveGenerator::default()
    }
}

fn remote_generator(cfg: &PipelineConfig) -> Result<RemoteGenerator> {
    let g = &cfg.generator;
    let mut r = RemoteGenerator::new(endpoint(&g.endpoint, "generator.endpoint")?);
    r.max_tokens = g.max_answer_tokens;
    r.batch_size = g.batch_size;
    r.max_in_flight = g.max_in_flight;
    Ok(r)
}

/// Per-question oracle answers from an answers file: every accepted answer
/// in every language.
fn read_oracle(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    Ok(read_lines::<AnswerRecord>(path)?
        .into_iter()
        .map(|r| (r.question_id, r.answers.all().cloned().collect()))
        .collect())
}

fn build_generator(cfg: &PipelineConfig) -> Result<GeneratorHandle> {
    Ok(match cfg.generator.kind {
        GeneratorKind::ToyExtractive => {
            let mut g = toy_generator(cfg);
            if let Some(p) = &cfg.paths.oracle {
                g.question_oracles = read_oracle(p)?;
            }
            GeneratorHandle::ToyExtractive(g)
        }
        GeneratorKind::Remote => GeneratorHandle::Remote(remote_generator(cfg)?),
    })
}

pub fn ingest(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let input = require(&cfg.paths.corpus, "corpus")?;
    let target = require(&cfg.paths.passages, "passages")?;
    let config = IngestConfig {
        max_tokens: cfg.ingest.max_tokens,
        min_tokens: cfg.ingest.min_tokens,
        disambiguation_markers: cfg.ingest.disambiguation_markers.clone(),
    };
    if config.max_tokens == 0 {
        return Err(CliError::Usage("ingest.max_tokens must be positive".into()));
    }
    let result = corpus::ingest(open(input)?, &config)
        .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
    for e in &result.errors {
        eprintln!("warning[data]: {}: {e}", input.display());
    }
    write_atomic(target, |w| corpus::write_passages(w, &result.passages))?;
    writeln!(out, "{}", serde_json::to_string(&result.stats).expect("stats serialize"))
        .map_err(Error::from)?;
    Ok(())
}

pub fn embed(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let target = require(&cfg.paths.index, "index")?;
    let store = load_store(cfg)?;
    let encoder = build_encoder(cfg)?;
    let index = miner::embed_store(&encoder, &store)?;
    write_atomic(target, |w| index.write_to(w))?;
    writeln!(out, "embedded {} passages, dim {}", index.len(), index.dim()).map_err(Error::from)?;
    Ok(())
}

fn retrieve_all(
    cfg: &PipelineConfig,
    questions: &[Question],
    encoder: &dyn DualEncoder,
) -> Result<Vec<RetrievalRecord>> {
    if cfg.retrieve.k == 0 {
        return Err(CliError::Usage("retrieve.k must be at least 1".into()));
    }
    let index = DenseIndex::load(require(&cfg.paths.index, "index")?)?;
    if index.dim() != encoder.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            actual: encoder.dim(),
        }
        .into());
    }
    let queries = encoder.encode_questions(questions)?;
    let hits = index.search_batch(&queries, cfg.retrieve.k)?;
    Ok(questions
        .iter()
        .zip(hits)
        .map(|(q, h)| RetrievalRecord {
            question_id: q.question_id.clone(),
            lang: q.lang.clone(),
            results: h.into_iter().map(|r| (r.passage_id, r.score)).collect(),
        })
        .collect())
}

pub fn retrieve(cfg: &PipelineConfig) -> Result<()> {
    let questions: Vec<Question> = read_lines(require(&cfg.paths.questions, "questions")?)?;
    let target = require(&cfg.paths.retrievals, "retrievals")?;
    let encoder = build_encoder(cfg)?;
    let records = retrieve_all(cfg, &questions, &encoder)?;
    write_json_lines(target, &records)
}

pub fn answer(cfg: &PipelineConfig) -> Result<()> {
    let questions: Vec<Question> = read_lines(require(&cfg.paths.questions, "questions")?)?;
    let target = require(&cfg.paths.predictions, "predictions")?;
    let store = load_store(cfg)?;
    let encoder = build_encoder(cfg)?;
    let generator = build_generator(cfg)?;
    let retrieved = retrieve_all(cfg, &questions, &encoder)?;

    let items = questions
        .iter()
        .zip(&retrieved)
        .map(|(q, r)| {
            let passages = r
                .results
                .iter()
                .take(cfg.generator.prompt_passages)
                .map(|(id, _)| {
                    store
                        .get(id)
                        .ok_or_else(|| Error::invalid(format!("index passage {id:?} missing from passage file")))
                })
                .collect::<xlqa_core::Result<Vec<_>>>()?;
            Ok((q.clone(), PromptPassage::ranked(passages)))
        })
        .collect::<Result<Vec<_>>>()?;
    let results = match &generator {
        GeneratorHandle::Remote(g) => g.generate_many(&items)?,
        GeneratorHandle::ToyExtractive(g) => items
            .iter()
            .map(|(q, ps)| g.generate(q, ps))
            .collect::<xlqa_core::Result<_>>()?,
    };
    let predictions: Vec<PredictionRecord> = questions
        .iter()
        .zip(results)
        .map(|(q, r)| PredictionRecord {
            question_id: q.question_id.clone(),
            lang: q.lang.clone(),
            prediction: r.answer,
        })
        .collect();
    write_json_lines(target, &predictions)?;
    if let Some(p) = &cfg.paths.retrievals {
        write_json_lines(p, &retrieved)?;
    }
    Ok(())
}

pub fn mine(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let instances: Vec<QAInstance> = read_lines(require(&cfg.paths.instances, "instances")?)?;
    let target = require(&cfg.paths.training_set, "training_set")?;
    if cfg.encoder.kind != EncoderKind::ToyTrainable {
        return Err(CliError::Usage(format!(
            "mine trains the retriever and needs encoder.kind = toy-trainable, not {}",
            cfg.encoder.kind
        )));
    }
    let store = load_store(cfg)?;
    let links = load_links(cfg)?;
    let generator = match cfg.generator.kind {
        GeneratorKind::ToyExtractive => GeneratorHandle::ToyExtractive(ToyExtractiveGenerator {
            question_oracles: miner::oracle_answers(&instances, links.as_ref()),
            ..toy_generator(cfg)
        }),
        GeneratorKind::Remote => GeneratorHandle::Remote(remote_generator(cfg)?),
    };
    let mining = cfg.mining.to_core(cfg.seed());
    let train = cfg.train.to_core(cfg.seed());
    let mut encoder = fresh_trainable(cfg)?;
    encoder.freeze_question_tower = cfg.train.freeze_question_tower;
    let initial = miner::initial_examples(&instances, &store)?;
    let state = miner::run_loop(
        &mut encoder,
        initial,
        &instances,
        &store,
        &generator,
        links.as_ref(),
        &mining,
        &train,
        &mut |round, _, _| {
            eprintln!("round {round}: retriever trained");
            Ok(())
        },
    )?;

    write_atomic(target, |w| state.write_training_set(w))?;
    if let Some(p) = &cfg.paths.ledger {
        write_atomic(p, |w| Ok(writeln!(w, "{}", state.to_json())?))?;
    }
    if let Some(p) = &cfg.paths.model {
        write_atomic(p, |w| encoder.write_to(w))?;
    }
    if let Some(p) = &cfg.paths.synthetic {
        let table = links
            .as_ref()
            .ok_or_else(|| CliError::Usage("paths.synthetic needs paths.links".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
        let examples: Vec<SyntheticExample> = instances
            .iter()
            .flat_map(|i| {
                miner::synthesize_generator_examples(i, &mining.synthetic_languages, table, &mining, &mut rng)
            })
            .collect();
        write_atomic(p, |w| miner::write_synthetic(w, &examples))?;
    }
    for l in &state.ledger {
        writeln!(out, "{}", serde_json::to_string(l).expect("ledger serializes")).map_err(Error::from)?;
    }
    Ok(())
}

pub fn eval(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let answers: Vec<AnswerRecord> = read_lines(require(&cfg.paths.answers, "answers")?)?;
    let predictions: Vec<PredictionRecord> = match &cfg.paths.predictions {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    let retrievals: Vec<RetrievalRecord> = match &cfg.paths.retrievals {
        Some(p) => read_lines(p)?,
        None => Vec::new(),
    };
    if predictions.is_empty() && retrievals.is_empty() {
        return Err(CliError::Usage(
            "eval needs paths.predictions or paths.retrievals".into(),
        ));
    }
    if cfg.eval.k == 0 {
        return Err(CliError::Usage("eval.k must be at least 1".into()));
    }
    let store = if retrievals.is_empty() {
        None
    } else {
        Some(load_store(cfg)?)
    };
    let scores = evalkit::score_files(&predictions, &answers, &retrievals, store.as_ref(), cfg.eval.k)?;
    let report = evalkit::aggregate(&scores, cfg.eval.k, Some(&cfg.eval.categories()));
    if let Some(p) = &cfg.paths.report {
        write_atomic(p, |w| Ok(writeln!(w, "{}", report.to_json())?))?;
    }
    report.write_tsv(out)?;
    Ok(())
}

pub fn e2e_toy(cfg: &PipelineConfig, out: &mut dyn Write) -> Result<()> {
    let e2e = cfg.e2e();
    let report = toy::run_e2e(&e2e)?;
    let pct = |x: f64| format!("{:.1}", 100.0 * x);
    let mut lines = vec![
        format!(
            "passages {}  linked-only {}%  k {}",
            report.passages,
            pct(report.linked_only_fraction),
            e2e.k
        ),
        format!(
            "round 0  examples 0  r_target {}  r_multi {}",
            pct(report.initial.r_target),
            pct(report.initial.r_multi)
        ),
    ];
    for r in &report.rounds {
        lines.push(format!(
            "round {}  examples {}  r_target {}  r_multi {}",
            r.round,
            r.training_examples,
            pct(r.recall.r_target),
            pct(r.recall.r_multi)
        ));
    }
    for l in lines {
        writeln!(out, "{l}").map_err(Error::from)?;
    }
    eprintln!("e2e-toy finished in {:.1}s", report.seconds);
    if let Some(p) = &cfg.paths.report {
        // Wall-clock time would break byte-identical reruns.
        let mut value = serde_json::to_value(&report).expect("report serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("seconds");
        }
        let text = serde_json::to_string_pretty(&value).expect("report serializes");
        write_atomic(p, |w| Ok(writeln!(w, "{text}")?))?;
    }
    Ok(())
}

/// Pipeline config written next to an exported toy world.
fn toy_pipeline_toml(cfg: &PipelineConfig, world: &ToyWorld) -> String {
    let e2e = cfg.e2e();
    let titles: Vec<String> = world
        .unextractable_titles
        .iter()
        .map(|t| format!("{t:?}"))
        .collect();
    format!(
        r#"seed = {seed}

[paths]
corpus = "corpus.jsonl"
passages = "passages.jsonl"
links = "links.tsv"
instances = "instances.jsonl"
questions = "questions.jsonl"
answers = "answers.jsonl"
oracle = "answers.jsonl"
model = "encoder.bin"
index = "passages.idx"
training_set = "training_set.jsonl"
ledger = "mining_state.json"
retrievals = "retrievals.jsonl"
predictions = "predictions.jsonl"
report = "report.json"

[ingest]
min_tokens = {min_tokens}
disambiguation_markers = []

[encoder]
kind = "toy-trainable"
dim = {dim}
vocab_size = {vocab}

[generator]
unextractable_titles = [{titles}]

[retrieve]
k = {k}

[mining]
max_iterations = {iterations}

[train]
epochs = {epochs}
learning_rate = {lr:?}
batch_size = {batch}

[eval]
k = {k}
"#,
        seed = e2e.train.seed,
        min_tokens = corpus::DEFAULT_MIN_TOKENS.min(e2e.world.article_tokens),
        dim = e2e.dim,
        vocab = e2e.vocab_size,
        titles = titles.join(", "),
        k = e2e.k,
        iterations = e2e.mining.max_iterations,
        epochs = e2e.train.epochs,
        lr = e2e.train.learning_rate,
        batch = e2e.train.batch_size,
    )
}

/// Writes a synthetic world as pipeline inputs plus a config that runs
/// every stage over them.
pub fn toy_world(cfg: &PipelineConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let world = ToyWorld::generate(&cfg.e2e().world)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json_lines(&dir.join("corpus.jsonl"), &world.articles)?;
    write_atomic(&dir.join("links.tsv"), |w| world.links.write_tsv(w))?;
    write_json_lines(&dir.join("instances.jsonl"), &world.train)?;
    let questions: Vec<&Question> = world.eval.iter().map(|i| &i.question).collect();
    write_json_lines(&dir.join("questions.jsonl"), &questions)?;
    let answers: Vec<AnswerRecord> = world
        .eval
        .iter()
        .map(|i| AnswerRecord {
            question_id: i.question.question_id.clone(),
            target_lang: i.question.lang.clone(),
            answers: i.answers.clone(),
        })
        .collect();
    write_json_lines(&dir.join("answers.jsonl"), &answers)?;
    let toml = toy_pipeline_toml(cfg, &world);
    write_atomic(&dir.join("pipeline.toml"), |w| Ok(w.write_all(toml.as_bytes())?))?;
    writeln!(
        out,
        "wrote {} articles, {} training and {} evaluation questions to {}",
        world.articles.len(),
        world.train.len(),
        world.eval.len(),
        dir.display()
    )
    .map_err(Error::from)?;
    Ok(())
}
