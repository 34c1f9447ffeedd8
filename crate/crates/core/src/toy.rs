//! Seeded synthetic multilingual worlds.
//!
//! A world has one entity per index `e` and three pseudo-languages:
//!
//! - `en`: an article for every entity. A `direct_fraction` of them state the
//!   answer; the rest describe the entity without it.
//! - `xb`: a linked article for every entity that always states the
//!   answer, written with `xb` vocabulary only.
//! - `xa`: a linked article with no answer, a pure distractor.
//!
//! Answers are entities too, so the link table translates `ena{e}z` to
//! `xba{e}z`. Optional spurious `en` articles contain the answer string
//! without describing the entity; their titles are marked unextractable for
//! the toy generator. Training questions name the entity by keywords 0..3,
//! evaluation questions by keywords 1..4, so evaluation measures
//! generalisation rather than recall of the exact training strings.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_passages, segment_article, Article, PassageStore, DEFAULT_MAX_TOKENS, DEFAULT_MIN_TOKENS};
use crate::dense_index::DenseIndex;
use crate::encoder::{DualEncoder, ToyTrainableEncoder};
use crate::error::Result;
use crate::evalkit::{recall_at_k, AnswerSet};
use crate::generator::{Question, ToyExtractiveGenerator};
use crate::miner::{
    embed_store, initial_examples, oracle_answers, run_loop, IterationConfig, IterationLedger,
    LanguageLinkTable, QAInstance, TrainConfig,
};

pub const SOURCE_LANG: &str = "en";
pub const LINKED_LANG: &str = "xb";
pub const DISTRACTOR_LANG: &str = "xa";
const KEYWORDS: usize = 4;
const QUESTION_WORDS: [&str; 4] = ["which", "what", "who", "where"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub entities: usize,
    /// Share of `en` articles that contain the answer (rounded to a count).
    pub direct_fraction: f64,
    /// Share of entities that also get a spurious `en` article (rounded).
    pub spurious_fraction: f64,
    pub article_tokens: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            entities: 300,
            direct_fraction: 0.6,
            spurious_fraction: 0.0,
            article_tokens: 30,
            filler_vocab: 200,
            seed: 17,
        }
    }
}

/// Question with the answers accepted at evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub question: Question,
    pub answers: AnswerSet,
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyConfig,
    pub articles: Vec<Article>,
    pub store: PassageStore,
    pub links: LanguageLinkTable,
    pub train: Vec<QAInstance>,
    pub eval: Vec<EvalItem>,
    pub unextractable_titles: BTreeSet<String>,
    /// Entities whose `en` article lacks the answer.
    pub linked_only: BTreeSet<usize>,
}

fn keyword(lang: &str, e: usize, j: usize) -> String {
    format!("{lang}k{e}x{j}")
}

/// Answer token; the trailing `z` keeps `ena1z` from matching inside `ena10z`.
pub fn answer(lang: &str, e: usize) -> String {
    format!("{lang}a{e}z")
}

pub fn title(lang: &str, e: usize) -> String {
    format!("{lang}t{e}")
}

fn article_text(rng: &mut ChaCha8Rng, cfg: &ToyConfig, lang: &str, content: Vec<String>) -> String {
    let mut tokens = content;
    while tokens.len() < cfg.article_tokens {
        tokens.push(format!("{lang}f{}", rng.gen_range(0..cfg.filler_vocab.max(1))));
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

impl ToyWorld {
    pub fn generate(cfg: &ToyConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut articles = Vec::new();
        let mut links = LanguageLinkTable::new();
        let mut unextractable_titles = BTreeSet::new();
        let mut train = Vec::new();
        let mut eval = Vec::new();

        let n = cfg.entities;
        let mut pick = |fraction: f64| -> BTreeSet<usize> {
            let count = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
            sample(&mut rng, n, count).into_iter().collect()
        };
        let linked_only = pick(1.0 - cfg.direct_fraction);
        let spurious = pick(cfg.spurious_fraction);

        for e in 0..n {
            let direct = !linked_only.contains(&e);
            for lang in [SOURCE_LANG, DISTRACTOR_LANG, LINKED_LANG] {
                let mut content: Vec<String> = (0..KEYWORDS).map(|j| keyword(lang, e, j)).collect();
                if lang == LINKED_LANG || (lang == SOURCE_LANG && direct) {
                    content.push(answer(lang, e));
                }
                let text = article_text(&mut rng, cfg, lang, content);
                articles.push(Article::new(format!("{lang}-{e}"), lang, title(lang, e), text));
            }
            if spurious.contains(&e) {
                let t = format!("{SOURCE_LANG}s{e}");
                let content = vec![keyword(SOURCE_LANG, e, 0), keyword(SOURCE_LANG, e, 1), answer(SOURCE_LANG, e)];
                let text = article_text(&mut rng, cfg, SOURCE_LANG, content);
                articles.push(Article::new(format!("{SOURCE_LANG}s-{e}"), SOURCE_LANG, &t, text));
                unextractable_titles.insert(t);
            }
            links.insert(
                &format!("E{e}"),
                [SOURCE_LANG, DISTRACTOR_LANG, LINKED_LANG].map(|l| (l, title(l, e))),
            )?;
            links.insert(
                &format!("A{e}"),
                [SOURCE_LANG, LINKED_LANG].map(|l| (l, answer(l, e))),
            )?;

            let ask = |rng: &mut ChaCha8Rng, range: std::ops::Range<usize>| {
                let qw = QUESTION_WORDS[rng.gen_range(0..QUESTION_WORDS.len())];
                let kws: Vec<String> = range.map(|j| keyword(SOURCE_LANG, e, j)).collect();
                format!("{qw} {}", kws.join(" "))
            };
            let text = ask(&mut rng, 0..KEYWORDS - 1);
            train.push(QAInstance::new(
                Question::new(format!("train-{e}"), SOURCE_LANG, text),
                vec![answer(SOURCE_LANG, e)],
                vec![format!("{SOURCE_LANG}-{e}-0")],
            )?);
            let text = ask(&mut rng, 1..KEYWORDS);
            eval.push(EvalItem {
                question: Question::new(format!("eval-{e}"), SOURCE_LANG, text),
                answers: AnswerSet::new(BTreeMap::from([
                    (SOURCE_LANG.to_string(), vec![answer(SOURCE_LANG, e)]),
                    (LINKED_LANG.to_string(), vec![answer(LINKED_LANG, e)]),
                ]))?,
            });
        }

        let passages = articles
            .iter()
            .flat_map(|a| segment_article(a, DEFAULT_MAX_TOKENS))
            .collect();
        let (passages, _) = filter_passages(passages, DEFAULT_MIN_TOKENS.min(cfg.article_tokens), &[]);
        Ok(Self {
            config: cfg.clone(),
            articles,
            store: PassageStore::new(passages)?,
            links,
            train,
            eval,
            unextractable_titles,
            linked_only,
        })
    }

    /// Toy generator that can extract each training question's answers and
    /// refuses spurious articles.
    pub fn generator(&self) -> ToyExtractiveGenerator {
        ToyExtractiveGenerator {
            question_oracles: oracle_answers(&self.train, Some(&self.links)),
            unextractable_titles: self.unextractable_titles.clone(),
            ..ToyExtractiveGenerator::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub r_target: f64,
    pub r_multi: f64,
}

/// Mean recall@k of the evaluation questions.
pub fn evaluate_recall(
    encoder: &dyn DualEncoder,
    index: &DenseIndex,
    store: &PassageStore,
    items: &[EvalItem],
    k: usize,
) -> Result<RecallSummary> {
    if items.is_empty() {
        return Ok(RecallSummary::default());
    }
    let questions: Vec<Question> = items.iter().map(|i| i.question.clone()).collect();
    let queries = encoder.encode_questions(&questions)?;
    let hits = index.search_batch(&queries, k)?;
    let mut sum = RecallSummary::default();
    for (item, hits) in items.iter().zip(hits) {
        let docs: Vec<_> = hits
            .iter()
            .filter_map(|h| store.get(&h.passage_id).cloned())
            .collect();
        let r = recall_at_k(&docs, &item.answers, &item.question.lang, k);
        sum.r_target += f64::from(u8::from(r.target));
        sum.r_multi += f64::from(u8::from(r.multi));
    }
    let n = items.len() as f64;
    Ok(RecallSummary {
        r_target: sum.r_target / n,
        r_multi: sum.r_multi / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eConfig {
    pub world: ToyConfig,
    pub dim: usize,
    pub vocab_size: usize,
    pub init_seed: u64,
    pub k: usize,
    pub mining: IterationConfig,
    pub train: TrainConfig,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            world: ToyConfig::default(),
            dim: 32,
            vocab_size: 16384,
            init_seed: 1,
            k: 10,
            mining: IterationConfig::default(),
            train: TrainConfig {
                epochs: 40,
                learning_rate: 50.0,
                batch_size: 16,
                seed: 0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Training round, from 1.
    pub round: usize,
    pub training_examples: usize,
    pub recall: RecallSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub passages: usize,
    pub linked_only_fraction: f64,
    /// Recall of the untrained encoder.
    pub initial: RecallSummary,
    pub rounds: Vec<RoundReport>,
    pub ledger: Vec<IterationLedger>,
    pub seconds: f64,
}

impl E2eReport {
    /// Recall after the first training round (initial data only).
    pub fn first_round(&self) -> Option<&RecallSummary> {
        self.rounds.first().map(|r| &r.recall)
    }

    pub fn last_round(&self) -> Option<&RecallSummary> {
        self.rounds.last().map(|r| &r.recall)
    }
}

/// Builds a world, then trains and mines for `mining.max_iterations`
/// rounds, measuring evaluation recall after every training round.
pub fn run_e2e(cfg: &E2eConfig) -> Result<E2eReport> {
    let start = Instant::now();
    let world = ToyWorld::generate(&cfg.world)?;
    let generator = world.generator();
    let mut encoder = ToyTrainableEncoder::random(cfg.vocab_size, cfg.dim, cfg.init_seed)?;
    let index = embed_store(&encoder, &world.store)?;
    let initial = evaluate_recall(&encoder, &index, &world.store, &world.eval, cfg.k)?;

    let mut rounds = Vec::new();
    let mut sizes = Vec::new();
    let b1 = initial_examples(&world.train, &world.store)?;
    sizes.push(b1.len());
    let state = run_loop(
        &mut encoder,
        b1,
        &world.train,
        &world.store,
        &generator,
        Some(&world.links),
        &cfg.mining,
        &cfg.train,
        &mut |round, enc, index| {
            let recall = evaluate_recall(enc, index, &world.store, &world.eval, cfg.k)?;
            rounds.push(RoundReport {
                round,
                training_examples: 0,
                recall,
            });
            Ok(())
        },
    )?;
    let mut examples = 0;
    for (i, r) in rounds.iter_mut().enumerate() {
        examples += if i == 0 {
            sizes[0]
        } else {
            state.ledger[i - 1].examples_added
        };
        r.training_examples = examples;
    }
    Ok(E2eReport {
        passages: world.store.len(),
        linked_only_fraction: world.linked_only.len() as f64 / cfg.world.entities.max(1) as f64,
        initial,
        rounds,
        ledger: state.ledger,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_shape() {
        let cfg = ToyConfig {
            entities: 20,
            spurious_fraction: 0.5,
            ..ToyConfig::default()
        };
        let w = ToyWorld::generate(&cfg).unwrap();
        assert_eq!(w.store.len(), 70);
        assert_eq!(w.linked_only.len(), 8);
        assert_eq!(w.train.len(), 20);
        for e in 0..20 {
            let en = w.store.get(&format!("en-{e}-0")).unwrap();
            let xb = w.store.get(&format!("xb-{e}-0")).unwrap();
            let xa = w.store.get(&format!("xa-{e}-0")).unwrap();
            assert_eq!(en.text.contains(&answer("en", e)), !w.linked_only.contains(&e));
            assert!(xb.text.contains(&answer("xb", e)));
            assert!(!xa.text.contains("xaa"));
        }
        let again = ToyWorld::generate(&cfg).unwrap();
        assert_eq!(again.articles, w.articles);
    }
}
