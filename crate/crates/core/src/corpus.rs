//! Article ingestion, passage segmentation and filtering.
//!
//! Articles arrive as JSON lines (`id`, `title`, `text`, `lang`), are split
//! into consecutive passages of at most `max_tokens` tokens and then
//! filtered: passages shorter than `min_tokens` and passages whose source
//! title carries a disambiguation marker are dropped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_TOKENS: usize = 100;
pub const DEFAULT_MIN_TOKENS: usize = 20;

/// Title markers of disambiguation pages in the languages we ship configs for.
pub const DEFAULT_DISAMBIGUATION_MARKERS: &[&str] = &[
    "(disambiguation)",
    "(曖昧さ回避)",
    "(täsmennyssivu)",
    "(desambiguación)",
    "(olika betydelser)",
    "(значения)",
    "(동음이의)",
    "(توضيح)",
    "(פירושונים)",
    "(แก้ความกำกวม)",
    "(消歧义)",
    "(begriffsklärung)",
    "(homonymie)",
];

/// Languages written without spaces between words; tokenized per character.
pub fn is_unspaced_script(lang: &str) -> bool {
    matches!(lang, "ja" | "th" | "km") || lang == "zh" || lang.starts_with("zh-")
}

/// Splits `text` into tokens.
///
/// Space-delimited languages yield maximal non-whitespace runs. Languages
/// in [`is_unspaced_script`] yield one token per non-whitespace character.
pub fn tokenize<'a>(text: &'a str, lang: &str) -> Vec<&'a str> {
    if is_unspaced_script(lang) {
        text.char_indices()
            .filter(|(_, c)| !c.is_whitespace())
            .map(|(i, c)| &text[i..i + c.len_utf8()])
            .collect()
    } else {
        text.split_whitespace().collect()
    }
}

/// Joins tokens back into passage text using the script's separator.
pub fn join_tokens(tokens: &[&str], lang: &str) -> String {
    if is_unspaced_script(lang) {
        tokens.concat()
    } else {
        tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    #[serde(rename = "id")]
    pub article_id: String,
    pub lang: String,
    pub title: String,
    pub text: String,
}

impl Article {
    pub fn new(
        article_id: impl Into<String>,
        lang: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            article_id: article_id.into(),
            lang: lang.into(),
            title: title.into(),
            text: text.into(),
        }
    }
}

/// The retrieval unit: a run of at most `max_tokens` tokens from one article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub article_id: String,
    pub lang: String,
    pub title: String,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub articles: usize,
    pub passages: usize,
    pub filtered: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub languages: BTreeMap<String, LanguageStats>,
    pub malformed_lines: usize,
    pub dropped_short: usize,
    pub dropped_disambiguation: usize,
}

impl CorpusStats {
    pub fn total_passages(&self) -> usize {
        self.languages.values().map(|s| s.passages).sum()
    }

    pub fn total_articles(&self) -> usize {
        self.languages.values().map(|s| s.articles).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DroppedCounts {
    pub too_short: usize,
    pub disambiguation: usize,
}

#[derive(Deserialize)]
struct RawArticle {
    id: Option<serde_json::Value>,
    title: Option<String>,
    text: Option<String>,
    lang: Option<String>,
}

fn parse_article_line(line: &str) -> std::result::Result<Article, String> {
    let raw: RawArticle = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err("field `id` must be a string or number".into()),
        None => return Err("missing field `id`".into()),
    };
    let title = raw.title.ok_or("missing field `title`")?;
    let text = raw.text.ok_or("missing field `text`")?;
    let lang = raw.lang.ok_or("missing field `lang`")?;
    if id.is_empty() {
        return Err("empty `id`".into());
    }
    if lang.is_empty() {
        return Err("empty `lang`".into());
    }
    Ok(Article {
        article_id: id,
        lang,
        title,
        text,
    })
}

/// Streams [`Article`]s out of a JSON-lines dump.
///
/// Bad lines surface as `Err(Error::Record { line, .. })` (1-based) and the
/// iterator keeps going. Blank lines are skipped.
pub struct DumpReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

pub fn parse_dump<R: BufRead>(reader: R) -> DumpReader<R> {
    DumpReader {
        lines: reader.lines(),
        line_no: 0,
    }
}

impl<R> DumpReader<R> {
    /// 1-based number of the line most recently read.
    pub fn line_no(&self) -> usize {
        self.line_no
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<Article>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::Stream(e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_article_line(&line).map_err(|message| Error::Record {
                line: self.line_no,
                message,
            }));
        }
    }
}

/// Cuts an article into consecutive passages of `max_tokens` tokens; the
/// last passage holds the remainder.
pub fn segment_article(article: &Article, max_tokens: usize) -> Vec<Passage> {
    let max_tokens = max_tokens.max(1);
    let tokens = tokenize(&article.text, &article.lang);
    tokens
        .chunks(max_tokens)
        .enumerate()
        .map(|(i, chunk)| Passage {
            passage_id: format!("{}-{}", article.article_id, i),
            article_id: article.article_id.clone(),
            lang: article.lang.clone(),
            title: article.title.clone(),
            text: join_tokens(chunk, &article.lang),
            token_count: chunk.len(),
        })
        .collect()
}

fn is_disambiguation(title: &str, markers: &[String]) -> bool {
    let title = title.to_lowercase();
    markers
        .iter()
        .any(|m| !m.is_empty() && title.contains(&m.to_lowercase()))
}

/// Drops short passages and passages from disambiguation pages, preserving
/// the order of what is kept. A passage matching both rules is counted as
/// a disambiguation drop.
pub fn filter_passages(
    passages: Vec<Passage>,
    min_tokens: usize,
    disambiguation_markers: &[String],
) -> (Vec<Passage>, DroppedCounts) {
    let mut dropped = DroppedCounts::default();
    let kept = passages
        .into_iter()
        .filter(|p| {
            if is_disambiguation(&p.title, disambiguation_markers) {
                dropped.disambiguation += 1;
                false
            } else if p.token_count < min_tokens {
                dropped.too_short += 1;
                false
            } else {
                true
            }
        })
        .collect();
    (kept, dropped)
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub max_tokens: usize,
    pub min_tokens: usize,
    pub disambiguation_markers: Vec<String>,
}

impl Default for IngestConfig {
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

/// Outcome of [`ingest`]: surviving passages, statistics and the per-line
/// errors that were skipped.
#[derive(Debug, Default)]
pub struct Ingested {
    pub passages: Vec<Passage>,
    pub stats: CorpusStats,
    pub errors: Vec<Error>,
}

/// Full ingestion: parse, segment (in parallel), filter.
///
/// Output order follows input order regardless of thread count. A repeated
/// article id is a per-line error; the first occurrence wins.
pub fn ingest<R: BufRead>(reader: R, config: &IngestConfig) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    let mut dump = parse_dump(reader);
    while let Some(item) = dump.next() {
        match item {
            Ok(article) => {
                if seen.insert(article.article_id.clone()) {
                    articles.push(article);
                } else {
                    out.stats.malformed_lines += 1;
                    out.errors.push(Error::Record {
                        line: dump.line_no(),
                        message: format!("duplicate article id {:?}", article.article_id),
                    });
                }
            }
            Err(e @ Error::Record { .. }) => {
                out.stats.malformed_lines += 1;
                out.errors.push(e);
            }
            Err(e) => return Err(e),
        }
    }

    let segmented: Vec<(Vec<Passage>, DroppedCounts)> = articles
        .par_iter()
        .map(|a| {
            filter_passages(
                segment_article(a, config.max_tokens),
                config.min_tokens,
                &config.disambiguation_markers,
            )
        })
        .collect();

    for (article, (kept, dropped)) in articles.iter().zip(segmented) {
        let lang = out.stats.languages.entry(article.lang.clone()).or_default();
        lang.articles += 1;
        lang.passages += kept.len();
        lang.filtered += dropped.too_short + dropped.disambiguation;
        out.stats.dropped_short += dropped.too_short;
        out.stats.dropped_disambiguation += dropped.disambiguation;
        out.passages.extend(kept);
    }
    Ok(out)
}

pub fn write_passages<W: Write>(mut writer: W, passages: &[Passage]) -> Result<()> {
    for p in passages {
        serde_json::to_writer(&mut writer, p).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_passages<R: BufRead>(reader: R) -> Result<Vec<Passage>> {
    read_json_lines(reader)
}

/// Reads a JSON-lines file of `T`, failing on the first bad line.
pub fn read_json_lines<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Passages keyed by id and by source article, for miners and evaluators
/// that need to go from ids back to text.
#[derive(Debug, Clone, Default)]
pub struct PassageStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    by_article: HashMap<(String, String), Vec<usize>>,
}

impl PassageStore {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        let mut by_article: HashMap<(String, String), Vec<usize>> = HashMap::new();
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.passage_id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.passage_id.clone()));
            }
            by_article
                .entry((p.lang.clone(), crate::text::title_key(&p.title)))
                .or_default()
                .push(i);
        }
        Ok(Self {
            passages,
            by_id,
            by_article,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, passage_id: &str) -> Option<&Passage> {
        self.by_id.get(passage_id).map(|&i| &self.passages[i])
    }

    /// All passages of the article titled `title` in `lang`, in segment order.
    pub fn article_passages(&self, lang: &str, title: &str) -> Vec<&Passage> {
        self.by_article
            .get(&(lang.to_string(), crate::text::title_key(title)))
            .map(|ix| ix.iter().map(|&i| &self.passages[i]).collect())
            .unwrap_or_default()
    }

    pub fn has_article(&self, lang: &str, title: &str) -> bool {
        self.by_article
            .contains_key(&(lang.to_string(), crate::text::title_key(title)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn passage(title: &str, tokens: usize) -> Passage {
        Passage {
            passage_id: format!("{title}-0"),
            article_id: title.to_string(),
            lang: "en".into(),
            title: title.into(),
            text: words(tokens),
            token_count: tokens,
        }
    }

    fn markers() -> Vec<String> {
        vec!["(disambiguation)".to_string()]
    }

    #[test]
    fn tokenize_whitespace_scripts() {
        assert_eq!(tokenize("a b  c", "en"), vec!["a", "b", "c"]);
        assert_eq!(tokenize("", "fi"), Vec::<&str>::new());
        assert_eq!(tokenize(" \t\n", "en"), Vec::<&str>::new());
    }

    #[test]
    fn tokenize_unspaced_scripts_per_character() {
        assert_eq!(
            tokenize("日本語 test", "ja"),
            vec!["日", "本", "語", "t", "e", "s", "t"]
        );
        assert_eq!(tokenize("中文", "zh-cn"), vec!["中", "文"]);
        assert_eq!(tokenize("ภาษา", "th").len(), 4);
        assert_eq!(tokenize("中文", "zh").len(), 2);
    }

    #[test]
    fn parse_dump_maps_fields_and_reports_bad_lines() {
        let input = "{\"id\":\"1\",\"title\":\"T\",\"text\":\"a b\",\"lang\":\"en\"}\nnot json\n\n{\"id\":\"2\",\"title\":\"U\",\"lang\":\"en\"}\n{\"id\":3,\"title\":\"V\",\"text\":\"\",\"lang\":\"fi\"}\n";
        let items: Vec<_> = parse_dump(input.as_bytes()).collect();
        assert_eq!(items.len(), 4);
        assert_eq!(items[0].as_ref().unwrap(), &Article::new("1", "en", "T", "a b"));
        match &items[1] {
            Err(Error::Record { line, .. }) => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match &items[2] {
            Err(Error::Record { line, message }) => {
                assert_eq!(*line, 4);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(items[3].as_ref().unwrap().article_id, "3");
        assert_eq!(parse_dump("".as_bytes()).count(), 0);
    }

    #[test]
    fn segment_boundaries() {
        let a = Article::new("a", "en", "A", words(230));
        let sizes: Vec<_> = segment_article(&a, 100).iter().map(|p| p.token_count).collect();
        assert_eq!(sizes, vec![100, 100, 30]);
        let ps = segment_article(&a, 100);
        assert_eq!(ps[2].passage_id, "a-2");
        assert!(ps[2].text.starts_with("w200 w201"));

        let a = Article::new("b", "en", "B", words(100));
        assert_eq!(segment_article(&a, 100).len(), 1);
        let a = Article::new("c", "en", "C", "   ");
        assert!(segment_article(&a, 100).is_empty());
    }

    #[test]
    fn segment_unspaced_joins_without_separator() {
        let a = Article::new("j", "ja", "J", "日本 語");
        let ps = segment_article(&a, 2);
        assert_eq!(ps[0].text, "日本");
        assert_eq!(ps[1].text, "語");
    }

    #[test]
    fn filter_boundary_and_markers() {
        let ps = vec![
            passage("short", 19),
            passage("exact", 20),
            passage("Mercury (disambiguation)", 50),
            passage("Mercury (DISAMBIGUATION) list", 50),
        ];
        let (kept, dropped) = filter_passages(ps, 20, &markers());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].title, "exact");
        assert_eq!(dropped.too_short, 1);
        assert_eq!(dropped.disambiguation, 2);
    }

    #[test]
    fn filter_is_idempotent() {
        let ps: Vec<_> = (0..40).map(|i| passage(&format!("t{i}"), i)).collect();
        let (once, _) = filter_passages(ps, 20, &markers());
        let (twice, d) = filter_passages(once.clone(), 20, &markers());
        assert_eq!(once, twice);
        assert_eq!(d, DroppedCounts::default());
    }

    #[test]
    fn ingest_counts_and_duplicates() {
        let input = [
            format!(r#"{{"id":"1","title":"A","text":"{}","lang":"en"}}"#, words(130)),
            format!(r#"{{"id":"1","title":"A2","text":"{}","lang":"en"}}"#, words(30)),
            format!(r#"{{"id":"2","title":"B (disambiguation)","text":"{}","lang":"en"}}"#, words(40)),
            "oops".to_string(),
        ]
        .join("\n");
        let out = ingest(input.as_bytes(), &IngestConfig::default()).unwrap();
        // 130 tokens -> 100 + 30, both kept.
        assert_eq!(out.passages.len(), 2);
        assert_eq!(out.stats.malformed_lines, 2);
        assert_eq!(out.errors.len(), 2);
        assert_eq!(out.stats.dropped_disambiguation, 1);
        assert_eq!(out.stats.languages["en"].articles, 2);
        assert_eq!(out.stats.total_passages(), out.passages.len());
    }

    #[test]
    fn passage_store_lookup() {
        let ps = vec![passage("A", 20), passage("B", 25)];
        let store = PassageStore::new(ps.clone()).unwrap();
        assert_eq!(store.get("B-0").unwrap().token_count, 25);
        assert_eq!(store.article_passages("en", "A").len(), 1);
        assert!(store.article_passages("fi", "A").is_empty());
        let dup = PassageStore::new(vec![ps[0].clone(), ps[0].clone()]);
        assert!(matches!(dup, Err(Error::DuplicateId(_))));
    }

    #[test]
    fn passages_roundtrip_jsonl() {
        let ps = vec![passage("A", 20), passage("B", 25)];
        let mut buf = Vec::new();
        write_passages(&mut buf, &ps).unwrap();
        let line = std::str::from_utf8(&buf).unwrap().lines().next().unwrap();
        assert!(line.starts_with(r#"{"passage_id":"A-0","article_id":"A","lang":"en","title":"A","text":"#));
        assert_eq!(read_passages(buf.as_slice()).unwrap(), ps);
    }
}
