//! Answer and retrieval metrics.
//!
//! Answer metrics operate on normalized text (see
//! [`normalize_answer`](crate::text::normalize_answer)) split with the
//! corpus tokenizer, so unspaced scripts are scored per character:
//!
//! - token F1: harmonic mean of multiset precision and recall, max over golds;
//! - exact match: [`answer_matches`] against any gold;
//! - BLEU: sentence BLEU up to 4-grams with add-one smoothing of the 2- to
//!   4-gram precisions and a brevity penalty, max over golds.
//!
//! Retrieval recall checks whether any of the first `k` passages contains
//! an answer string after NFKC folding, against the target language's
//! answers and against the union of all languages' answers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Passage};
use crate::error::{Error, Result};
use crate::generator::answer_matches;
use crate::text::{nfkc, normalize_answer};

pub const MAX_NGRAM: usize = 4;
pub const DEFAULT_RECALL_K: usize = 10;

fn answer_tokens(s: &str, lang: &str) -> Vec<String> {
    let norm = normalize_answer(s);
    tokenize(&norm, lang).into_iter().map(str::to_string).collect()
}

fn counts<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn overlap<T: std::hash::Hash + Eq>(a: &HashMap<T, usize>, b: &HashMap<T, usize>) -> usize {
    a.iter()
        .map(|(k, &n)| n.min(b.get(k).copied().unwrap_or(0)))
        .sum()
}

fn f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let common = overlap(&counts(pred), &counts(gold));
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn token_f1(prediction: &str, golds: &[String], lang: &str) -> f64 {
    let pred = answer_tokens(prediction, lang);
    golds
        .iter()
        .map(|g| f1_tokens(&pred, &answer_tokens(g, lang)))
        .fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &[String], lang: &str) -> bool {
    golds.iter().any(|g| answer_matches(prediction, g, lang))
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    if tokens.len() < n {
        return HashMap::new();
    }
    counts(tokens.windows(n))
}

fn bleu_tokens(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() {
        return if gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let p_grams = ngrams(pred, n);
        let matched = overlap(&p_grams, &ngrams(gold, n)) as f64;
        let total = pred.len().saturating_sub(n - 1) as f64;
        let precision = if n == 1 {
            matched / total
        } else {
            (matched + 1.0) / (total + 1.0)
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let (c, r) = (pred.len() as f64, gold.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / MAX_NGRAM as f64).exp()
}

pub fn bleu(prediction: &str, golds: &[String], lang: &str) -> f64 {
    let pred = answer_tokens(prediction, lang);
    golds
        .iter()
        .map(|g| bleu_tokens(&pred, &answer_tokens(g, lang)))
        .fold(0.0, f64::max)
}

/// Acceptable answers per language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct AnswerSet(BTreeMap<String, Vec<String>>);

impl AnswerSet {
    pub fn new(answers: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if answers.is_empty() {
            return Err(Error::invalid("answer set has no languages"));
        }
        Ok(Self(answers))
    }

    pub fn single(lang: &str, answers: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self(BTreeMap::from([(
            lang.to_string(),
            answers.into_iter().map(Into::into).collect(),
        )]))
    }

    pub fn get(&self, lang: &str) -> Option<&[String]> {
        self.0.get(lang).map(Vec::as_slice)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.0.values().flatten()
    }
}

impl TryFrom<BTreeMap<String, Vec<String>>> for AnswerSet {
    type Error = Error;

    fn try_from(m: BTreeMap<String, Vec<String>>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<AnswerSet> for BTreeMap<String, Vec<String>> {
    fn from(a: AnswerSet) -> Self {
        a.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecallHit {
    pub target: bool,
    pub multi: bool,
    /// The answer set has no entry for the target language.
    pub target_missing: bool,
}

fn contains_any<'a>(texts: &[String], answers: impl IntoIterator<Item = &'a String>) -> bool {
    let folded: Vec<String> = answers
        .into_iter()
        .map(|a| nfkc(a))
        .filter(|a| !a.is_empty())
        .collect();
    texts.iter().any(|t| folded.iter().any(|a| t.contains(a.as_str())))
}

pub fn recall_at_k(retrieved: &[Passage], answers: &AnswerSet, target_lang: &str, k: usize) -> RecallHit {
    let texts: Vec<String> = retrieved.iter().take(k).map(|p| nfkc(&p.text)).collect();
    let target = answers.get(target_lang);
    RecallHit {
        target: target.is_some_and(|a| contains_any(&texts, a)),
        multi: contains_any(&texts, answers.all()),
        target_missing: target.is_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LanguageCategory {
    Seen,
    MDPRSeen,
    MGENSeen,
    Unseen,
}

/// Language lists that decide [`LanguageCategory`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryConfig {
    /// Languages with human-annotated gold passages and answers.
    pub gold: BTreeSet<String>,
    /// Languages reached by mined retriever training data.
    pub mdpr: BTreeSet<String>,
    /// Languages reached only by synthetic generator data.
    pub mgen: BTreeSet<String>,
}

fn set(langs: &[&str]) -> BTreeSet<String> {
    langs.iter().map(|s| s.to_string()).collect()
}

impl Default for CategoryConfig {
    /// Default training coverage per category.
    fn default() -> Self {
        let mut mgen = set(&crate::miner::SYNTHETIC_LANGUAGES);
        mgen.insert("de".into());
        Self {
            gold: set(&["en", "ar", "bn", "fi", "ja", "ko", "ru", "te"]),
            mdpr: set(&["es", "sv", "he", "th"]),
            mgen,
        }
    }
}

pub fn categorize_language(lang: &str, config: &CategoryConfig) -> LanguageCategory {
    let lang = lang.to_lowercase();
    if config.gold.contains(&lang) {
        LanguageCategory::Seen
    } else if config.mdpr.contains(&lang) {
        LanguageCategory::MDPRSeen
    } else if config.mgen.contains(&lang) {
        LanguageCategory::MGENSeen
    } else {
        LanguageCategory::Unseen
    }
}

/// Scores of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub lang: String,
    pub answer: Option<AnswerScore>,
    pub recall: Option<RecallHit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerScore {
    pub f1: f64,
    pub em: bool,
    pub bleu: f64,
}

impl AnswerScore {
    pub fn compute(prediction: &str, golds: &[String], lang: &str) -> Self {
        Self {
            f1: token_f1(prediction, golds, lang),
            em: exact_match(prediction, golds, lang),
            bleu: bleu(prediction, golds, lang),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageReport {
    pub questions: usize,
    pub answered: usize,
    pub f1: Option<f64>,
    pub em: Option<f64>,
    pub bleu: Option<f64>,
    pub retrieval: usize,
    pub r_target: Option<f64>,
    pub r_multi: Option<f64>,
    pub target_missing: usize,
    pub category: Option<LanguageCategory>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub questions: usize,
    pub languages: BTreeMap<String, LanguageReport>,
    pub macro_f1: Option<f64>,
    pub macro_em: Option<f64>,
    pub macro_bleu: Option<f64>,
    pub macro_r_target: Option<f64>,
    pub macro_r_multi: Option<f64>,
    /// Questions whose answer set lacked the target language.
    pub target_missing: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-language means, then unweighted means across languages. Languages
/// are visited in sorted order and questions are summed in sorted order,
/// so the result does not depend on input order.
pub fn aggregate(scores: &[QuestionScore], k: usize, categories: Option<&CategoryConfig>) -> EvalReport {
    let mut by_lang: BTreeMap<&str, Vec<&QuestionScore>> = BTreeMap::new();
    for s in scores {
        by_lang.entry(&s.lang).or_default().push(s);
    }
    let mut report = EvalReport {
        k,
        questions: scores.len(),
        ..EvalReport::default()
    };
    for (lang, mut rows) in by_lang {
        rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let answers: Vec<AnswerScore> = rows.iter().filter_map(|s| s.answer).collect();
        let recalls: Vec<RecallHit> = rows.iter().filter_map(|s| s.recall).collect();
        let frac = |f: &dyn Fn(&RecallHit) -> bool| {
            mean(&recalls.iter().map(|r| f64::from(u8::from(f(r)))).collect::<Vec<_>>())
        };
        let lr = LanguageReport {
            questions: rows.len(),
            answered: answers.len(),
            f1: mean(&answers.iter().map(|a| a.f1).collect::<Vec<_>>()),
            em: mean(&answers.iter().map(|a| f64::from(u8::from(a.em))).collect::<Vec<_>>()),
            bleu: mean(&answers.iter().map(|a| a.bleu).collect::<Vec<_>>()),
            retrieval: recalls.len(),
            r_target: frac(&|r| r.target),
            r_multi: frac(&|r| r.multi),
            target_missing: recalls.iter().filter(|r| r.target_missing).count(),
            category: categories.map(|c| categorize_language(lang, c)),
        };
        report.target_missing += lr.target_missing;
        report.languages.insert(lang.to_string(), lr);
    }
    let macro_of = |f: &dyn Fn(&LanguageReport) -> Option<f64>| {
        mean(&report.languages.values().filter_map(f).collect::<Vec<_>>())
    };
    report.macro_f1 = macro_of(&|l| l.f1);
    report.macro_em = macro_of(&|l| l.em);
    report.macro_bleu = macro_of(&|l| l.bleu);
    report.macro_r_target = macro_of(&|l| l.r_target);
    report.macro_r_multi = macro_of(&|l| l.r_multi);
    report
}

/// Line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub lang: String,
    pub prediction: String,
}

/// Line of an answers file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub target_lang: String,
    pub answers: AnswerSet,
}

/// Line of a retrievals file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub question_id: String,
    pub lang: String,
    pub results: Vec<(String, f64)>,
}

/// Joins predictions and retrievals with gold answers by question id and
/// scores each question. Questions without gold answers are an error.
pub fn score_files(
    predictions: &[PredictionRecord],
    answers: &[AnswerRecord],
    retrievals: &[RetrievalRecord],
    passages: Option<&crate::corpus::PassageStore>,
    k: usize,
) -> Result<Vec<QuestionScore>> {
    let gold: HashMap<&str, &AnswerRecord> =
        answers.iter().map(|a| (a.question_id.as_str(), a)).collect();
    let lookup = |qid: &str| {
        gold.get(qid)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no gold answers for question {qid:?}")))
    };
    let mut rows: BTreeMap<String, QuestionScore> = BTreeMap::new();
    for p in predictions {
        let a = lookup(&p.question_id)?;
        let golds = a.answers.get(&a.target_lang).unwrap_or(&[]);
        let score = if golds.is_empty() {
            AnswerScore {
                f1: 0.0,
                em: false,
                bleu: 0.0,
            }
        } else {
            AnswerScore::compute(&p.prediction, golds, &a.target_lang)
        };
        rows.entry(p.question_id.clone())
            .or_insert_with(|| QuestionScore {
                question_id: p.question_id.clone(),
                lang: a.target_lang.clone(),
                answer: None,
                recall: None,
            })
            .answer = Some(score);
    }
    if !retrievals.is_empty() {
        let store = passages.ok_or_else(|| Error::invalid("retrieval scoring needs the passage file"))?;
        let scored: Vec<(String, String, RecallHit)> = retrievals
            .par_iter()
            .map(|r| {
                let a = lookup(&r.question_id)?;
                let docs = r
                    .results
                    .iter()
                    .take(k)
                    .map(|(id, _)| {
                        store
                            .get(id)
                            .cloned()
                            .ok_or_else(|| Error::invalid(format!("unknown passage {id:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((
                    r.question_id.clone(),
                    a.target_lang.clone(),
                    recall_at_k(&docs, &a.answers, &a.target_lang, k),
                ))
            })
            .collect::<Result<_>>()?;
        for (qid, lang, hit) in scored {
            rows.entry(qid.clone())
                .or_insert_with(|| QuestionScore {
                    question_id: qid,
                    lang,
                    answer: None,
                    recall: None,
                })
                .recall = Some(hit);
        }
    }
    Ok(rows.into_values().collect())
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

impl EvalReport {
    /// One row per language plus a macro row; metric columns are percentages.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lang\tcategory\tquestions\tf1\tem\tbleu\tr_target@{0}\tr_multi@{0}", self.k)?;
        for (lang, l) in &self.languages {
            let cat = l.category.map_or_else(|| "-".to_string(), |c| format!("{c:?}"));
            writeln!(
                w,
                "{lang}\t{cat}\t{}\t{}\t{}\t{}\t{}\t{}",
                l.questions,
                pct(l.f1),
                pct(l.em),
                pct(l.bleu),
                pct(l.r_target),
                pct(l.r_multi)
            )?;
        }
        writeln!(
            w,
            "macro\t-\t{}\t{}\t{}\t{}\t{}\t{}",
            self.questions,
            pct(self.macro_f1),
            pct(self.macro_em),
            pct(self.macro_bleu),
            pct(self.macro_r_target),
            pct(self.macro_r_multi)
        )?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn read_records<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    crate::corpus::read_json_lines(reader)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn psg(text: &str) -> Passage {
        Passage {
            passage_id: text.into(),
            article_id: "a".into(),
            lang: "xx".into(),
            title: "t".into(),
            text: text.into(),
            token_count: 1,
        }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("a b", &g(&["a b c"]), "en"), 0.8);
        assert_eq!(token_f1("x y", &g(&["x y"]), "en"), 1.0);
        assert_eq!(token_f1("x y", &g(&["z"]), "en"), 0.0);
        assert_eq!(token_f1("", &g(&["x"]), "en"), 0.0);
        assert_eq!(token_f1("", &g(&[""]), "en"), 1.0);
        assert_eq!(token_f1("a b", &g(&["z", "a b c"]), "en"), 0.8);
        // unspaced scripts score per character
        let f = token_f1("東京都", &g(&["東京"]), "ja");
        assert!((f - 0.8).abs() < 1e-12);
    }

    #[test]
    fn em_examples() {
        assert!(exact_match("Starship", &g(&["starship"]), "en"));
        assert!(!exact_match("Albert Hammond and Diane Warren", &g(&["Starship"]), "en"));
        assert!(!exact_match("", &g(&["x"]), "en"));
    }

    #[test]
    fn bleu_examples() {
        assert!((bleu("a b c d e", &g(&["a b c d e"]), "en") - 1.0).abs() < 1e-12);
        assert!(bleu("a b", &g(&["c d"]), "en") < 0.05);
        let short = bleu("a", &g(&["a b c d"]), "en");
        assert!((short - (1.0f64 - 4.0).exp()).abs() < 1e-12);
        // two of three tokens and one of two bigrams: p = (2/3, 2/3, 1/2, 1)
        let v = bleu("a b x", &g(&["a b c"]), "en");
        let want = ((2.0f64 / 3.0) * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn recall_examples() {
        let answers = AnswerSet::new(BTreeMap::from([
            ("ja".to_string(), g(&["ロン・ポール"])),
            ("en".to_string(), g(&["Ron Paul"])),
        ]))
        .unwrap();
        let hit = recall_at_k(&[psg("x"), psg("ロン・ポールは")], &answers, "ja", 10);
        assert!(hit.target && hit.multi);
        let en_only = recall_at_k(&[psg("Ron Paul said")], &answers, "ja", 10);
        assert!(!en_only.target && en_only.multi);
        assert_eq!(recall_at_k(&[], &answers, "ja", 10), RecallHit::default());
        let missing = recall_at_k(&[psg("Ron Paul")], &answers, "ko", 10);
        assert!(!missing.target && missing.multi && missing.target_missing);
        // beyond k does not count; NFKC folds full-width digits
        assert!(!recall_at_k(&[psg("x"), psg("Ron Paul")], &answers, "en", 1).multi);
        let digits = AnswerSet::single("en", ["1957"]);
        assert!(recall_at_k(&[psg("in １９５７")], &digits, "en", 1).target);
    }

    #[test]
    fn categories() {
        let c = CategoryConfig::default();
        assert_eq!(categorize_language("ja", &c), LanguageCategory::Seen);
        assert_eq!(categorize_language("es", &c), LanguageCategory::MDPRSeen);
        assert_eq!(categorize_language("da", &c), LanguageCategory::MGENSeen);
        assert_eq!(categorize_language("km", &c), LanguageCategory::Unseen);
        // mined data wins over synthetic data
        assert!(c.mgen.contains("es"));
    }

    #[test]
    fn aggregation() {
        let row = |qid: &str, lang: &str, f1: f64| QuestionScore {
            question_id: qid.into(),
            lang: lang.into(),
            answer: Some(AnswerScore {
                f1,
                em: f1 == 1.0,
                bleu: f1,
            }),
            recall: None,
        };
        let r = aggregate(&[row("1", "en", 0.2), row("2", "ja", 0.4)], 10, None);
        assert!((r.macro_f1.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(r.macro_r_target, None);
        let one = aggregate(&[row("1", "en", 0.2), row("2", "en", 1.0)], 10, None);
        assert_eq!(one.macro_f1, one.languages["en"].f1);
        let empty = aggregate(&[], 10, None);
        assert_eq!((empty.questions, empty.macro_f1), (0, None));
    }

    #[test]
    fn answer_file_shape() {
        let line = r#"{"question_id":"q","target_lang":"ja","answers":{"ja":["x"],"en":["y"]}}"#;
        let rec: AnswerRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.answers.get("en"), Some(&g(&["y"])[..]));
        assert!(serde_json::from_str::<AnswerRecord>(
            r#"{"question_id":"q","target_lang":"ja","answers":{}}"#
        )
        .is_err());
    }
}
