//! Iterative training-data mining for the retriever.
//!
//! Each round retrieves candidates for every training question with the
//! current encoder, adds passages from articles linked to the gold article
//! in other languages (English questions only), labels every candidate by
//! asking the generator to answer from that passage alone, and appends the
//! resulting (positives, negatives) to the training set. The driver in
//! [`run_loop`] alternates encoder training and mining, skipping mining
//! after the last training round.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::hash::Hasher;
use std::io::{BufRead, Write};

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::dense_index::DenseIndex;
use crate::encoder::{DualEncoder, EmbeddingVector, ToyTrainableEncoder, TrainingExample};
use crate::error::{Error, Result};
use crate::generator::{label_passage, Generator, Label, Question};
use crate::text::title_key;

pub const ENGLISH: &str = "en";

/// Target languages for synthetic cross-language generator data.
pub const SYNTHETIC_LANGUAGES: [&str; 15] = [
    "ar", "fi", "ja", "ko", "ru", "es", "sv", "he", "th", "da", "fr", "it", "nl", "pl", "pt",
];

/// Epochs of generator training after which synthetic examples are meant to
/// be mixed in. Recorded in the synthetic file header; not used locally.
pub const SYNTHETIC_CONSUME_AFTER_EPOCHS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAInstance {
    pub question: Question,
    pub answers: Vec<String>,
    pub gold_passage_ids: Vec<String>,
}

/// On-disk shape of a [`QAInstance`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct InstanceRecord {
    question_id: String,
    lang: String,
    question: String,
    answers: Vec<String>,
    #[serde(default)]
    gold_passage_ids: Vec<String>,
}

impl QAInstance {
    pub fn new(question: Question, answers: Vec<String>, gold_passage_ids: Vec<String>) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::invalid(format!(
                "instance {:?} has no answers",
                question.question_id
            )));
        }
        Ok(Self {
            question,
            answers,
            gold_passage_ids,
        })
    }

    pub fn is_english(&self) -> bool {
        self.question.lang == ENGLISH
    }
}

impl Serialize for QAInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        InstanceRecord {
            question_id: self.question.question_id.clone(),
            lang: self.question.lang.clone(),
            question: self.question.text.clone(),
            answers: self.answers.clone(),
            gold_passage_ids: self.gold_passage_ids.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for QAInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = InstanceRecord::deserialize(d)?;
        QAInstance::new(
            Question::new(r.question_id, r.lang, r.question),
            r.answers,
            r.gold_passage_ids,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Article-level links between languages, one record per entity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageLinkTable {
    entities: BTreeMap<String, BTreeMap<String, String>>,
    by_title: BTreeMap<(String, String), String>,
}

impl LanguageLinkTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entity. Titles must be non-empty and each language may
    /// appear once.
    pub fn insert<L, T>(&mut self, entity_id: &str, titles: impl IntoIterator<Item = (L, T)>) -> Result<()>
    where
        L: Into<String>,
        T: Into<String>,
    {
        if self.entities.contains_key(entity_id) {
            return Err(Error::invalid(format!("duplicate entity {entity_id:?}")));
        }
        let mut record = BTreeMap::new();
        for (lang, title) in titles {
            let (lang, title) = (lang.into(), title.into());
            if lang.is_empty() || title.trim().is_empty() {
                return Err(Error::invalid(format!(
                    "entity {entity_id:?}: empty language or title"
                )));
            }
            if record.insert(lang.clone(), title).is_some() {
                return Err(Error::invalid(format!(
                    "entity {entity_id:?}: two titles for {lang:?}"
                )));
            }
        }
        for (lang, title) in &record {
            self.by_title
                .entry((lang.clone(), title_key(title)))
                .or_insert_with(|| entity_id.to_string());
        }
        self.entities.insert(entity_id.to_string(), record);
        Ok(())
    }

    /// Reads `entity_id TAB lang:title TAB lang:title ...` lines. Blank
    /// lines are skipped.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Record {
                line: i + 1,
                message,
            };
            let mut fields = line.split('\t');
            let entity = fields.next().unwrap_or("").trim();
            if entity.is_empty() {
                return Err(err("empty entity id".into()));
            }
            let mut titles = Vec::new();
            for f in fields {
                let (lang, title) = f
                    .split_once(':')
                    .ok_or_else(|| err(format!("field {f:?} is not lang:title")))?;
                titles.push((lang.trim().to_string(), title.to_string()));
            }
            table
                .insert(entity, titles)
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (entity, titles) in &self.entities {
            write!(w, "{entity}")?;
            for (lang, title) in titles {
                write!(w, "\t{lang}:{title}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn titles(&self, entity_id: &str) -> Option<&BTreeMap<String, String>> {
        self.entities.get(entity_id)
    }

    /// Entity whose `lang` article has this title (NFKC + trim match).
    pub fn entity_of(&self, lang: &str, title: &str) -> Option<&str> {
        self.by_title
            .get(&(lang.to_string(), title_key(title)))
            .map(String::as_str)
    }
}

/// English answer to its title in `target_lang`, via the entity whose
/// English title equals the answer.
pub fn translate_answer_via_links(
    answer_en: &str,
    target_lang: &str,
    table: &LanguageLinkTable,
) -> Option<String> {
    let entity = table.entity_of(ENGLISH, answer_en)?;
    table.titles(entity)?.get(target_lang).cloned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub retrieve_k: usize,
    pub max_iterations: usize,
    pub langlink_enabled: bool,
    pub langlink_language_cap: usize,
    pub synthetic_subsample_rate: f64,
    /// Negatives stored per mined example.
    pub max_negatives: usize,
    pub seed: u64,
    pub synthetic_languages: Vec<String>,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            retrieve_k: 10,
            max_iterations: 2,
            langlink_enabled: true,
            langlink_language_cap: 10,
            synthetic_subsample_rate: 0.5,
            max_negatives: 8,
            seed: 0,
            synthetic_languages: SYNTHETIC_LANGUAGES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retrieve_k == 0 {
            return Err(Error::invalid("retrieve_k must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.synthetic_subsample_rate) {
            return Err(Error::invalid("synthetic_subsample_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Seed for per-question sampling, independent of processing order.
fn question_seed(seed: u64, question_id: &str) -> u64 {
    let mut h = FnvHasher::with_key(seed);
    h.write(question_id.as_bytes());
    h.finish()
}

/// Counts for one mining round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationLedger {
    pub iteration: usize,
    pub instances: usize,
    pub candidates: usize,
    pub retrieved_candidates: usize,
    pub link_expansions: usize,
    /// English instances whose gold article has no link record.
    pub link_misses: usize,
    pub positives: usize,
    pub negatives: usize,
    pub negatives_kept: usize,
    pub label_failures: usize,
    pub examples_added: usize,
    pub zero_positive_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningState {
    pub iteration: usize,
    pub training_set: Vec<TrainingExample>,
    pub ledger: Vec<IterationLedger>,
}

/// Training-set line: passages are referenced by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub question_id: String,
    pub lang: String,
    pub question: String,
    pub answers: Vec<String>,
    pub positive_passage_ids: Vec<String>,
    pub negative_passage_ids: Vec<String>,
    pub iteration: usize,
}

impl TrainingRecord {
    pub fn from_example(e: &TrainingExample) -> Self {
        Self {
            question_id: e.question.question_id.clone(),
            lang: e.question.lang.clone(),
            question: e.question.text.clone(),
            answers: e.answers.clone(),
            positive_passage_ids: e.positives.iter().map(|p| p.passage_id.clone()).collect(),
            negative_passage_ids: e.negatives.iter().map(|p| p.passage_id.clone()).collect(),
            iteration: e.iteration,
        }
    }

    pub fn resolve(&self, store: &PassageStore) -> Result<TrainingExample> {
        let fetch = |ids: &[String]| {
            ids.iter()
                .map(|id| {
                    store.get(id).cloned().ok_or_else(|| {
                        Error::invalid(format!(
                            "question {:?} references unknown passage {id:?}",
                            self.question_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        TrainingExample::new(
            Question::new(&self.question_id, &self.lang, &self.question),
            self.answers.clone(),
            fetch(&self.positive_passage_ids)?,
            fetch(&self.negative_passage_ids)?,
            self.iteration,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    training_set: Vec<TrainingRecord>,
    ledger: Vec<IterationLedger>,
}

impl MiningState {
    /// State before any mining: the initial gold data at iteration 0.
    pub fn initial(training_set: Vec<TrainingExample>) -> Self {
        Self {
            iteration: 0,
            training_set,
            ledger: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = StateFile {
            iteration: self.iteration,
            training_set: self.training_set.iter().map(TrainingRecord::from_example).collect(),
            ledger: self.ledger.clone(),
        };
        serde_json::to_string_pretty(&file).expect("state serializes")
    }

    pub fn from_json(s: &str, store: &PassageStore) -> Result<Self> {
        let file: StateFile =
            serde_json::from_str(s).map_err(|e| Error::invalid(format!("state file: {e}")))?;
        Ok(Self {
            iteration: file.iteration,
            training_set: file
                .training_set
                .iter()
                .map(|r| r.resolve(store))
                .collect::<Result<_>>()?,
            ledger: file.ledger,
        })
    }

    /// Writes the training set as JSON lines.
    pub fn write_training_set<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.training_set {
            let line = serde_json::to_string(&TrainingRecord::from_example(e))
                .expect("record serializes");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Reads a training set written by [`MiningState::write_training_set`].
pub fn read_training_set<R: BufRead>(reader: R, store: &PassageStore) -> Result<Vec<TrainingExample>> {
    crate::corpus::read_json_lines::<TrainingRecord, _>(reader)?
        .iter()
        .map(|r| r.resolve(store))
        .collect()
}

/// Initial training data: one example per instance, gold passages as
/// positives.
pub fn initial_examples(instances: &[QAInstance], store: &PassageStore) -> Result<Vec<TrainingExample>> {
    instances
        .iter()
        .filter(|i| !i.gold_passage_ids.is_empty())
        .map(|i| {
            let golds = i
                .gold_passage_ids
                .iter()
                .map(|id| {
                    store
                        .get(id)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("unknown gold passage {id:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            TrainingExample::new(i.question.clone(), i.answers.clone(), golds, Vec::new(), 0)
        })
        .collect()
}

/// Everything a mining round reads.
#[derive(Clone, Copy)]
pub struct MiningContext<'a> {
    pub store: &'a PassageStore,
    pub index: &'a DenseIndex,
    pub encoder: &'a dyn DualEncoder,
    pub generator: &'a dyn Generator,
    pub links: Option<&'a LanguageLinkTable>,
}

fn retrieved_candidates(
    instance: &QAInstance,
    hits: &[crate::dense_index::RetrievalResult],
    store: &PassageStore,
) -> Result<Vec<Passage>> {
    let gold: HashSet<&str> = instance.gold_passage_ids.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for h in hits {
        if gold.contains(h.passage_id.as_str()) || !seen.insert(h.passage_id.as_str()) {
            continue;
        }
        let p = store.get(&h.passage_id).ok_or_else(|| {
            Error::invalid(format!("index passage {:?} missing from store", h.passage_id))
        })?;
        out.push(p.clone());
    }
    Ok(out)
}

/// Top-`k` passages for the instance's question, without gold passages.
pub fn mine_from_retrieval(
    instance: &QAInstance,
    store: &PassageStore,
    index: &DenseIndex,
    encoder: &dyn DualEncoder,
    k: usize,
) -> Result<Vec<Passage>> {
    if encoder.dim() != index.dim() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            actual: encoder.dim(),
        });
    }
    let q = encoder.encode_question(&instance.question)?;
    retrieved_candidates(instance, &index.search(&q, k)?, store)
}

/// Result of following language links from an instance's gold articles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkExpansion {
    pub passages: Vec<Passage>,
    /// Some gold article had no entity record.
    pub miss: bool,
}

/// Passages of the gold articles' counterparts in other languages.
///
/// Languages with an article in the store are collected per entity; when
/// there are more than `cap`, `cap` of them are drawn with a generator
/// seeded from `seed` and the question id.
pub fn expand_via_language_links(
    instance: &QAInstance,
    table: &LanguageLinkTable,
    store: &PassageStore,
    cap: usize,
    seed: u64,
) -> LinkExpansion {
    let mut out = LinkExpansion::default();
    let mut entities = BTreeSet::new();
    for id in &instance.gold_passage_ids {
        let Some(gold) = store.get(id) else { continue };
        match table.entity_of(&gold.lang, &gold.title) {
            Some(e) => {
                entities.insert((e.to_string(), gold.lang.clone()));
            }
            None => out.miss = true,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(question_seed(seed, &instance.question.question_id));
    let mut seen = HashSet::new();
    for (entity, source_lang) in entities {
        let titles = table.titles(&entity).expect("indexed entity exists");
        let mut linked: Vec<(&String, &String)> = titles
            .iter()
            .filter(|(lang, title)| **lang != source_lang && store.has_article(lang, title))
            .collect();
        if linked.len() > cap {
            let mut chosen: Vec<_> = linked.choose_multiple(&mut rng, cap).copied().collect();
            chosen.sort();
            linked = chosen;
        }
        for (lang, title) in linked {
            for p in store.article_passages(lang, title) {
                if seen.insert(p.passage_id.clone()) {
                    out.passages.push(p.clone());
                }
            }
        }
    }
    out
}

/// Gold answers used to label a candidate written in `lang`: the
/// instance's answers plus, for English questions, their link
/// translations into `lang`.
pub fn gold_answers_for(instance: &QAInstance, lang: &str, links: Option<&LanguageLinkTable>) -> Vec<String> {
    let mut golds = instance.answers.clone();
    if let (true, Some(table)) = (instance.is_english(), links) {
        for a in &instance.answers {
            if let Some(t) = translate_answer_via_links(a, lang, table) {
                if !golds.contains(&t) {
                    golds.push(t);
                }
            }
        }
    }
    golds
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labeled {
    pub positives: Vec<Passage>,
    pub negatives: Vec<Passage>,
    /// Candidates skipped because generation failed.
    pub failures: usize,
}

pub fn label_candidates(
    candidates: &[Passage],
    instance: &QAInstance,
    generator: &dyn Generator,
    links: Option<&LanguageLinkTable>,
) -> Labeled {
    let mut out = Labeled::default();
    for c in candidates {
        let golds = gold_answers_for(instance, &c.lang, links);
        match label_passage(generator, &instance.question, c, &golds) {
            Ok((Label::Positive, _)) => out.positives.push(c.clone()),
            Ok((Label::Negative, _)) => out.negatives.push(c.clone()),
            Err(_) => out.failures += 1,
        }
    }
    out
}

/// Answers a toy generator should be able to extract for each instance:
/// the gold answers and every linked title of an answer entity.
pub fn oracle_answers(instances: &[QAInstance], links: Option<&LanguageLinkTable>) -> BTreeMap<String, Vec<String>> {
    instances
        .iter()
        .map(|i| {
            let mut answers = i.answers.clone();
            if let (true, Some(table)) = (i.is_english(), links) {
                for a in &i.answers {
                    let titles = table.entity_of(ENGLISH, a).and_then(|e| table.titles(e));
                    for t in titles.into_iter().flat_map(|m| m.values()) {
                        if !answers.contains(t) {
                            answers.push(t.clone());
                        }
                    }
                }
            }
            (i.question.question_id.clone(), answers)
        })
        .collect()
}

struct Outcome {
    retrieved: usize,
    expanded: usize,
    link_miss: bool,
    labeled: Labeled,
}

fn mine_instance(
    instance: &QAInstance,
    hits: &[crate::dense_index::RetrievalResult],
    ctx: &MiningContext<'_>,
    config: &IterationConfig,
) -> Result<Outcome> {
    let mut candidates = retrieved_candidates(instance, hits, ctx.store)?;
    let retrieved = candidates.len();
    let mut link_miss = false;
    let mut expanded = 0;
    if let (true, true, Some(table)) = (config.langlink_enabled, instance.is_english(), ctx.links) {
        let exp = expand_via_language_links(
            instance,
            table,
            ctx.store,
            config.langlink_language_cap,
            config.seed,
        );
        link_miss = exp.miss;
        let have: HashSet<String> = candidates.iter().map(|p| p.passage_id.clone()).collect();
        for p in exp.passages {
            if !have.contains(&p.passage_id) && !instance.gold_passage_ids.contains(&p.passage_id) {
                candidates.push(p);
                expanded += 1;
            }
        }
    }
    let labeled = label_candidates(&candidates, instance, ctx.generator, ctx.links);
    Ok(Outcome {
        retrieved,
        expanded,
        link_miss,
        labeled,
    })
}

/// One mining round. Returns the next state; `state` is untouched, so a
/// failed round commits nothing.
pub fn run_iteration(
    state: &MiningState,
    instances: &[QAInstance],
    ctx: &MiningContext<'_>,
    config: &IterationConfig,
) -> Result<MiningState> {
    config.validate()?;
    if state.iteration >= config.max_iterations {
        return Err(Error::invalid(format!(
            "iteration {} is not below the limit {}",
            state.iteration, config.max_iterations
        )));
    }
    if ctx.encoder.dim() != ctx.index.dim() {
        return Err(Error::DimMismatch {
            expected: ctx.index.dim(),
            actual: ctx.encoder.dim(),
        });
    }
    let questions: Vec<Question> = instances.iter().map(|i| i.question.clone()).collect();
    let queries: Vec<EmbeddingVector> = ctx.encoder.encode_questions(&questions)?;
    let hits = ctx.index.search_batch(&queries, config.retrieve_k)?;

    let outcomes: Vec<Outcome> = instances
        .par_iter()
        .zip(hits.par_iter())
        .map(|(inst, h)| mine_instance(inst, h, ctx, config))
        .collect::<Result<_>>()?;

    let next_iteration = state.iteration + 1;
    let mut next = state.clone();
    next.iteration = next_iteration;
    let mut ledger = IterationLedger {
        iteration: next_iteration,
        instances: instances.len(),
        ..IterationLedger::default()
    };
    for (inst, o) in instances.iter().zip(outcomes) {
        ledger.retrieved_candidates += o.retrieved;
        ledger.link_expansions += o.expanded;
        ledger.candidates += o.retrieved + o.expanded;
        ledger.link_misses += usize::from(o.link_miss);
        ledger.positives += o.labeled.positives.len();
        ledger.negatives += o.labeled.negatives.len();
        ledger.label_failures += o.labeled.failures;
        if o.labeled.positives.is_empty() {
            ledger.zero_positive_questions.push(inst.question.question_id.clone());
            continue;
        }
        let mut negatives = o.labeled.negatives;
        negatives.truncate(config.max_negatives);
        ledger.negatives_kept += negatives.len();
        ledger.examples_added += 1;
        next.training_set.push(TrainingExample::new(
            inst.question.clone(),
            inst.answers.clone(),
            o.labeled.positives,
            negatives,
            next_iteration,
        )?);
    }
    next.ledger.push(ledger);
    Ok(next)
}

/// Synthetic generator example: an English question tagged with a target
/// language and the answer translated into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub question_id: String,
    pub question: String,
    pub lang: String,
    pub answer: String,
}

/// Up to `langlink_language_cap` translatable languages from `langs`,
/// each kept with probability `synthetic_subsample_rate`.
pub fn synthesize_generator_examples<R: Rng>(
    instance: &QAInstance,
    langs: &[String],
    table: &LanguageLinkTable,
    config: &IterationConfig,
    rng: &mut R,
) -> Vec<SyntheticExample> {
    if !instance.is_english() {
        return Vec::new();
    }
    let answer = &instance.answers[0];
    let translatable: Vec<(&String, String)> = langs
        .iter()
        .filter(|l| l.as_str() != ENGLISH)
        .filter_map(|l| translate_answer_via_links(answer, l, table).map(|t| (l, t)))
        .collect();
    let chosen: Vec<&(&String, String)> = if translatable.len() > config.langlink_language_cap {
        let mut c: Vec<_> = translatable
            .choose_multiple(rng, config.langlink_language_cap)
            .collect();
        c.sort_by_key(|(l, _)| langs.iter().position(|x| x == *l));
        c
    } else {
        translatable.iter().collect()
    };
    chosen
        .into_iter()
        .filter(|_| rng.gen_bool(config.synthetic_subsample_rate))
        .map(|(lang, answer)| SyntheticExample {
            question_id: instance.question.question_id.clone(),
            question: instance.question.text.clone(),
            lang: lang.to_string(),
            answer: answer.clone(),
        })
        .collect()
}

/// Writes synthetic examples as JSON lines after a one-line header
/// describing how they are meant to be consumed.
pub fn write_synthetic<W: Write>(mut w: W, examples: &[SyntheticExample]) -> Result<()> {
    let header = serde_json::json!({
        "format": "xlqa-synthetic-generator-data",
        "consume_after_generator_epochs": SYNTHETIC_CONSUME_AFTER_EPOCHS,
        "count": examples.len(),
    });
    writeln!(w, "{header}")?;
    for e in examples {
        writeln!(w, "{}", serde_json::to_string(e).expect("example serializes"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Minibatch training over the whole training set. Batches are drawn from a
/// seeded shuffle each epoch and every example uses its positives in turn
/// across epochs. Returns the mean batch loss of each epoch.
pub fn update_encoder_from_state(
    encoder: &mut ToyTrainableEncoder,
    training_set: &[TrainingExample],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if training_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..training_set.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingExample> = chunk
                .iter()
                .map(|&i| {
                    let mut e = training_set[i].clone();
                    let n = e.positives.len();
                    e.positives.rotate_left(epoch % n);
                    e
                })
                .collect();
            total += encoder.train_step(&batch, config.learning_rate)?;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

/// Encodes every passage in the store into a fresh index.
pub fn embed_store(encoder: &dyn DualEncoder, store: &PassageStore) -> Result<DenseIndex> {
    let vectors = encoder.encode_passages(store.passages())?;
    DenseIndex::build(
        store.passages().iter().map(|p| p.passage_id.as_str()).zip(vectors),
        encoder.dim(),
    )
}

/// Alternates training and mining for `config.max_iterations` rounds of
/// training; mining is skipped after the last one. `after_training` sees
/// the round number (from 1), the encoder and a fresh index after every
/// training round.
#[allow(clippy::too_many_arguments)]
pub fn run_loop(
    encoder: &mut ToyTrainableEncoder,
    initial: Vec<TrainingExample>,
    instances: &[QAInstance],
    store: &PassageStore,
    generator: &dyn Generator,
    links: Option<&LanguageLinkTable>,
    config: &IterationConfig,
    train: &TrainConfig,
    after_training: &mut dyn FnMut(usize, &ToyTrainableEncoder, &DenseIndex) -> Result<()>,
) -> Result<MiningState> {
    config.validate()?;
    let mut state = MiningState::initial(initial);
    for t in 0..config.max_iterations {
        let round = TrainConfig {
            seed: train.seed.wrapping_add(t as u64),
            ..train.clone()
        };
        update_encoder_from_state(encoder, &state.training_set, &round)?;
        let index = embed_store(&*encoder, store)?;
        after_training(t + 1, encoder, &index)?;
        if t + 1 < config.max_iterations {
            let ctx = MiningContext {
                store,
                index: &index,
                encoder: &*encoder,
                generator,
                links,
            };
            state = run_iteration(&state, instances, &ctx, config)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashEncoder;
    use crate::generator::ToyExtractiveGenerator;

    fn passage(id: &str, lang: &str, title: &str, text: &str) -> Passage {
        Passage {
            passage_id: id.into(),
            article_id: format!("{lang}:{title}"),
            lang: lang.into(),
            title: title.into(),
            text: text.into(),
            token_count: text.split_whitespace().count(),
        }
    }

    fn table() -> LanguageLinkTable {
        LanguageLinkTable::read_tsv(
            "Q42\ten:Douglas Adams\tja:ダグラス・アダムズ\tfi:Douglas Adams\n\
             Q1\ten:Ron Paul\tja:ロン・ポール\tfi:Ron Paul FI\tko:론 폴\n"
                .as_bytes(),
        )
        .unwrap()
    }

    fn store() -> PassageStore {
        PassageStore::new(vec![
            passage("en-0", "en", "Ron Paul", "Ron Paul graduated from Gettysburg in 1957."),
            passage("ja-0", "ja", "ロン・ポール", "ロン・ポールは1957年に卒業した。"),
            passage("ja-1", "ja", "ロン・ポール", "政治家。"),
            passage("fi-0", "fi", "Ron Paul FI", "Ron Paul valmistui 1957."),
            passage("ko-0", "ko", "론 폴", "론 폴 1957"),
            passage("en-1", "en", "Other", "Nothing here."),
        ])
        .unwrap()
    }

    fn instance() -> QAInstance {
        QAInstance::new(
            Question::new("q1", "en", "When did Ron Paul graduate?"),
            vec!["1957".into()],
            vec!["en-0".into()],
        )
        .unwrap()
    }

    #[test]
    fn translation_examples() {
        let t = table();
        assert_eq!(
            translate_answer_via_links("Douglas Adams", "ja", &t).as_deref(),
            Some("ダグラス・アダムズ")
        );
        assert_eq!(translate_answer_via_links("Douglas Adams", "ko", &t), None);
        assert_eq!(translate_answer_via_links("three days", "ja", &t), None);
        assert_eq!(
            translate_answer_via_links(" Douglas Adams ", "ja", &t).as_deref(),
            Some("ダグラス・アダムズ")
        );
    }

    #[test]
    fn link_table_rejects_bad_records() {
        assert!(LanguageLinkTable::read_tsv("Q1\ten:A\ten:B\n".as_bytes()).is_err());
        assert!(LanguageLinkTable::read_tsv("Q1\ten:\n".as_bytes()).is_err());
        let err = LanguageLinkTable::read_tsv("Q1\ten:A\n\nQ2\tbroken\n".as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 3"));
        let mut buf = Vec::new();
        table().write_tsv(&mut buf).unwrap();
        assert_eq!(LanguageLinkTable::read_tsv(buf.as_slice()).unwrap(), table());
    }

    #[test]
    fn expansion_below_and_above_cap() {
        let (t, s, inst) = (table(), store(), instance());
        let all = expand_via_language_links(&inst, &t, &s, 10, 7);
        let ids: Vec<_> = all.passages.iter().map(|p| p.passage_id.as_str()).collect();
        assert_eq!(ids, ["fi-0", "ja-0", "ja-1", "ko-0"]);
        assert!(!all.miss);

        let one = expand_via_language_links(&inst, &t, &s, 1, 7);
        let langs: BTreeSet<_> = one.passages.iter().map(|p| p.lang.clone()).collect();
        assert_eq!(langs.len(), 1);
        assert_eq!(one, expand_via_language_links(&inst, &t, &s, 1, 7));

        let mut orphan = inst.clone();
        orphan.gold_passage_ids = vec!["en-1".into()];
        let none = expand_via_language_links(&orphan, &t, &s, 10, 7);
        assert!(none.passages.is_empty() && none.miss);
    }

    #[test]
    fn labeling_uses_translated_answers() {
        let (t, s, inst) = (table(), store(), instance());
        let gen = ToyExtractiveGenerator {
            question_oracles: oracle_answers(std::slice::from_ref(&inst), Some(&t)),
            ..ToyExtractiveGenerator::default()
        };
        let cands: Vec<Passage> = ["ja-0", "ja-1", "fi-0", "en-1"]
            .iter()
            .map(|id| s.get(id).unwrap().clone())
            .collect();
        let l = label_candidates(&cands, &inst, &gen, Some(&t));
        let pos: Vec<_> = l.positives.iter().map(|p| p.passage_id.as_str()).collect();
        assert_eq!(pos, ["ja-0", "fi-0"]);
        assert_eq!(l.negatives.len(), 2);
        assert_eq!(label_candidates(&[], &inst, &gen, Some(&t)), Labeled::default());
    }

    #[test]
    fn retrieval_mining_excludes_gold() {
        let s = store();
        let enc = HashEncoder::new(16, 1).unwrap();
        let index = embed_store(&enc, &s).unwrap();
        let inst = instance();
        let got = mine_from_retrieval(&inst, &s, &index, &enc, 3).unwrap();
        assert!(got.len() <= 3 && got.iter().all(|p| p.passage_id != "en-0"));
        let mut all_gold = inst.clone();
        all_gold.gold_passage_ids = s.passages().iter().map(|p| p.passage_id.clone()).collect();
        assert!(mine_from_retrieval(&all_gold, &s, &index, &enc, 6).unwrap().is_empty());
    }

    #[test]
    fn iteration_appends_and_is_deterministic() {
        let (t, s, inst) = (table(), store(), instance());
        let enc = HashEncoder::new(16, 1).unwrap();
        let index = embed_store(&enc, &s).unwrap();
        let gen = ToyExtractiveGenerator {
            question_oracles: oracle_answers(std::slice::from_ref(&inst), Some(&t)),
            ..ToyExtractiveGenerator::default()
        };
        let ctx = MiningContext {
            store: &s,
            index: &index,
            encoder: &enc,
            generator: &gen,
            links: Some(&t),
        };
        let config = IterationConfig::default();
        let start = MiningState::initial(initial_examples(std::slice::from_ref(&inst), &s).unwrap());
        let a = run_iteration(&start, std::slice::from_ref(&inst), &ctx, &config).unwrap();
        let b = run_iteration(&start, std::slice::from_ref(&inst), &ctx, &config).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.iteration, 1);
        assert_eq!(a.training_set.len(), 2);
        assert_eq!(a.training_set[0], start.training_set[0]);
        assert_eq!(a.ledger[0].examples_added, 1);
        assert_eq!(MiningState::from_json(&a.to_json(), &s).unwrap(), a);

        let never = ToyExtractiveGenerator::with_oracle(["no such answer"]);
        let ctx = MiningContext {
            generator: &never,
            ..ctx
        };
        let c = run_iteration(&start, std::slice::from_ref(&inst), &ctx, &config).unwrap();
        assert_eq!(c.training_set, start.training_set);
        assert_eq!(c.ledger[0].positives, 0);
        assert_eq!(c.ledger[0].zero_positive_questions, ["q1"]);

        let done = MiningState {
            iteration: 2,
            ..start
        };
        assert!(run_iteration(&done, &[inst], &ctx, &config).is_err());
    }

    #[test]
    fn synthesis_rates() {
        let t = table();
        let inst = QAInstance::new(
            Question::new("q", "en", "who wrote it?"),
            vec!["Douglas Adams".into()],
            vec![],
        )
        .unwrap();
        let langs = IterationConfig::default().synthetic_languages;
        let full = IterationConfig {
            synthetic_subsample_rate: 1.0,
            ..IterationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let got = synthesize_generator_examples(&inst, &langs, &t, &full, &mut rng);
        let tags: Vec<_> = got.iter().map(|e| e.lang.as_str()).collect();
        assert_eq!(tags, ["fi", "ja"]);
        assert_eq!(got[1].answer, "ダグラス・アダムズ");
        let none = IterationConfig {
            synthetic_subsample_rate: 0.0,
            ..IterationConfig::default()
        };
        assert!(synthesize_generator_examples(&inst, &langs, &t, &none, &mut rng).is_empty());
    }

    #[test]
    fn training_zero_epochs_is_identity() {
        let s = store();
        let ex = initial_examples(&[instance()], &s).unwrap();
        let mut enc = ToyTrainableEncoder::random(64, 4, 1).unwrap();
        let before = enc.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(update_encoder_from_state(&mut enc, &ex, &cfg).unwrap().is_empty());
        assert_eq!(enc.tower(crate::encoder::Tower::Passage), before.tower(crate::encoder::Tower::Passage));
        assert!(update_encoder_from_state(&mut enc, &[], &cfg).is_err());
    }
}
