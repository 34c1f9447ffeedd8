//! Answer generation contract, prompt grammar and answer equality.
//!
//! A generator receives a question plus ranked passages and returns an
//! answer string with per-token log-probabilities; the sequence
//! log-probability is their sum. Remote generators receive the prompt
//! produced by [`format_prompt`]:
//!
//! ```text
//! <Q>: {question} [{lang}] <P>: <0: {title}> {text} <1: {title}> {text} ...
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Passage};
use crate::error::{Error, Result};
use crate::remote::RemoteGenerator;
use crate::text::normalize_answer;

pub const DEFAULT_MAX_ANSWER_TOKENS: usize = 10;
/// Passages placed in a generator prompt.
pub const DEFAULT_PROMPT_PASSAGES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub lang: String,
    pub text: String,
}

impl Question {
    pub fn new(
        question_id: impl Into<String>,
        lang: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            question_id: question_id.into(),
            lang: lang.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPassage {
    pub rank: usize,
    pub title: String,
    pub text: String,
}

impl PromptPassage {
    /// Ranks passages in the order given.
    pub fn ranked<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> Vec<PromptPassage> {
        passages
            .into_iter()
            .enumerate()
            .map(|(rank, p)| PromptPassage {
                rank,
                title: p.title.clone(),
                text: p.text.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub answer: String,
    pub token_logprobs: Vec<f64>,
    pub sequence_logprob: f64,
}

impl GenerationResult {
    /// Builds a result, checking every log-probability is finite and `<= 0`.
    pub fn new(answer: String, token_logprobs: Vec<f64>) -> Result<Self> {
        if let Some(lp) = token_logprobs.iter().find(|lp| !(lp.is_finite() && **lp <= 0.0)) {
            return Err(Error::invalid(format!("token log-probability {lp} is not <= 0")));
        }
        let sequence_logprob = token_logprobs.iter().sum();
        Ok(Self {
            answer,
            token_logprobs,
            sequence_logprob,
        })
    }

    pub fn empty() -> Self {
        Self {
            answer: String::new(),
            token_logprobs: Vec::new(),
            sequence_logprob: 0.0,
        }
    }
}

pub fn format_prompt(question: &Question, passages: &[PromptPassage]) -> String {
    let mut out = format!("<Q>: {} [{}] <P>: ", question.text, question.lang);
    for (i, p) in passages.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("<{}: {}> {}", p.rank, p.title, p.text));
    }
    out
}

/// Components recovered by [`parse_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub question: String,
    pub lang: String,
    pub passages: Vec<PromptPassage>,
}

/// Inverse of [`format_prompt`] for inputs whose question, titles and
/// texts contain no `<` or `>` and whose language tag contains no `[`,
/// `]` or whitespace.
pub fn parse_prompt(prompt: &str) -> Result<ParsedPrompt> {
    let bad = |what: &str| Error::invalid(format!("malformed prompt: {what}"));
    let rest = prompt.strip_prefix("<Q>: ").ok_or_else(|| bad("missing <Q>"))?;
    let p_at = rest.find(" <P>: ").ok_or_else(|| bad("missing <P>"))?;
    let (head, tail) = (&rest[..p_at], &rest[p_at + " <P>: ".len()..]);
    let tag_at = head.rfind(" [").ok_or_else(|| bad("missing language tag"))?;
    let lang = head[tag_at + 2..]
        .strip_suffix(']')
        .ok_or_else(|| bad("unterminated language tag"))?;
    let question = &head[..tag_at];

    let mut passages = Vec::new();
    let mut s = tail;
    while !s.is_empty() {
        let body = s.strip_prefix('<').ok_or_else(|| bad("expected '<'"))?;
        let colon = body.find(": ").ok_or_else(|| bad("missing rank separator"))?;
        let rank: usize = body[..colon].parse().map_err(|_| bad("rank is not a number"))?;
        let body = &body[colon + 2..];
        let close = body.find('>').ok_or_else(|| bad("unterminated title"))?;
        let title = &body[..close];
        let body = body[close + 1..]
            .strip_prefix(' ')
            .ok_or_else(|| bad("missing space after title"))?;
        let (text, next) = match body.find('<') {
            Some(i) => {
                let text = body[..i]
                    .strip_suffix(' ')
                    .ok_or_else(|| bad("missing separator between passages"))?;
                (text, &body[i..])
            }
            None => (body, ""),
        };
        passages.push(PromptPassage {
            rank,
            title: title.to_string(),
            text: text.to_string(),
        });
        s = next;
    }
    Ok(ParsedPrompt {
        question: question.to_string(),
        lang: lang.to_string(),
        passages,
    })
}

/// Answer equality used for mining labels and exact match.
///
/// Both sides are NFKC-folded, lowercased, trimmed of whitespace and ASCII
/// punctuation at the ends, and whitespace-collapsed. Scripts are never
/// transliterated, so an answer in the wrong language does not match.
pub fn answer_matches(prediction: &str, gold: &str, _lang: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

pub trait Generator: Send + Sync {
    fn generate(&self, question: &Question, passages: &[PromptPassage])
        -> Result<GenerationResult>;
}

/// Deterministic extractive generator.
///
/// Passages are ranked by how many distinct question content words they
/// contain (ties by rank). Without oracle answers the answer is the first
/// `max_answer_tokens` whitespace tokens of the best passage. With oracle
/// answers, passages are scanned in that order and the first oracle answer
/// found verbatim in a passage text is returned. Oracle answers come from
/// `question_oracles[question_id]` when present, else `oracle_answers`; passages whose title is in
/// `unextractable_titles` are never extracted from. When no oracle answer
/// is found the answer falls back to the first span of the rank-0 passage.
#[derive(Debug, Clone)]
pub struct ToyExtractiveGenerator {
    pub max_answer_tokens: usize,
    pub oracle_answers: Vec<String>,
    pub question_oracles: BTreeMap<String, Vec<String>>,
    pub unextractable_titles: BTreeSet<String>,
}

impl Default for ToyExtractiveGenerator {
    fn default() -> Self {
        Self {
            max_answer_tokens: DEFAULT_MAX_ANSWER_TOKENS,
            oracle_answers: Vec::new(),
            question_oracles: BTreeMap::new(),
            unextractable_titles: BTreeSet::new(),
        }
    }
}

fn content_words(text: &str, lang: &str) -> Vec<String> {
    let spaced = !crate::corpus::is_unspaced_script(lang);
    tokenize(text, lang)
        .into_iter()
        .map(|t| {
            t.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty() && (!spaced || t.chars().count() >= 3))
        .collect()
}

impl ToyExtractiveGenerator {
    pub fn with_oracle(answers: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            oracle_answers: answers.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    fn first_span(&self, text: &str) -> String {
        text.split_whitespace()
            .take(self.max_answer_tokens)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Earliest oracle answer occurring in `text`; longest wins at a tie.
    fn find_oracle<'t>(oracle: &[String], text: &'t str) -> Option<&'t str> {
        oracle
            .iter()
            .filter(|a| !a.is_empty())
            .filter_map(|a| text.find(a.as_str()).map(|at| (at, a.len())))
            .min_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)))
            .map(|(at, len)| &text[at..at + len])
    }

    fn order<'p>(&self, question: &Question, passages: &'p [PromptPassage]) -> Vec<&'p PromptPassage> {
        let wanted: HashSet<String> = content_words(&question.text, &question.lang)
            .into_iter()
            .collect();
        let mut scored: Vec<(usize, &PromptPassage)> = passages
            .iter()
            .map(|p| {
                let have: HashSet<String> = content_words(&p.title, &question.lang)
                    .into_iter()
                    .chain(content_words(&p.text, &question.lang))
                    .collect();
                (wanted.intersection(&have).count(), p)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.rank.cmp(&b.1.rank)));
        scored.into_iter().map(|(_, p)| p).collect()
    }
}

impl Generator for ToyExtractiveGenerator {
    fn generate(
        &self,
        question: &Question,
        passages: &[PromptPassage],
    ) -> Result<GenerationResult> {
        if passages.is_empty() {
            return Ok(GenerationResult::empty());
        }
        let ordered = self.order(question, passages);
        let oracle = self
            .question_oracles
            .get(&question.question_id)
            .unwrap_or(&self.oracle_answers);
        let answer = if oracle.is_empty() {
            self.first_span(&ordered[0].text)
        } else {
            ordered
                .iter()
                .filter(|p| !self.unextractable_titles.contains(&p.title))
                .find_map(|p| Self::find_oracle(oracle, &p.text))
                .map(str::to_string)
                .unwrap_or_else(|| {
                    let first = passages.iter().min_by_key(|p| p.rank).unwrap();
                    self.first_span(&first.text)
                })
        };
        let n = tokenize(&answer, &question.lang).len();
        GenerationResult::new(answer, vec![0.0; n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    #[serde(rename = "toy-extractive")]
    ToyExtractive,
    #[serde(rename = "remote")]
    Remote,
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-extractive" => Ok(Self::ToyExtractive),
            "remote" => Ok(Self::Remote),
            other => Err(Error::invalid(format!("unknown generator kind {other:?}"))),
        }
    }
}

pub enum GeneratorHandle {
    ToyExtractive(ToyExtractiveGenerator),
    Remote(RemoteGenerator),
}

impl GeneratorHandle {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            Self::ToyExtractive(_) => GeneratorKind::ToyExtractive,
            Self::Remote(_) => GeneratorKind::Remote,
        }
    }
}

impl Generator for GeneratorHandle {
    fn generate(
        &self,
        question: &Question,
        passages: &[PromptPassage],
    ) -> Result<GenerationResult> {
        match self {
            Self::ToyExtractive(g) => g.generate(question, passages),
            Self::Remote(g) => g.generate(question, passages),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

/// Generates from `passage` alone and labels it positive iff the answer
/// matches one of `gold_answers`.
pub fn label_passage(
    generator: &dyn Generator,
    question: &Question,
    passage: &Passage,
    gold_answers: &[String],
) -> Result<(Label, GenerationResult)> {
    let result = generator.generate(question, &PromptPassage::ranked([passage]))?;
    let label = if gold_answers
        .iter()
        .any(|g| answer_matches(&result.answer, g, &question.lang))
    {
        Label::Positive
    } else {
        Label::Negative
    };
    Ok((label, result))
}
