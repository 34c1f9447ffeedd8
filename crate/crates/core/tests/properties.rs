use std::collections::BTreeMap;

use proptest::prelude::*;

use xlqa_core::corpus::{segment_article, tokenize, Article, Passage};
use xlqa_core::dense_index::DenseIndex;
use xlqa_core::encoder::{batch_nll_loss, EmbeddingVector};
use xlqa_core::evalkit::{
    aggregate, bleu, exact_match, recall_at_k, token_f1, AnswerScore, AnswerSet, QuestionScore,
};
use xlqa_core::generator::{
    answer_matches, format_prompt, label_passage, parse_prompt, Generator, Label, PromptPassage,
    Question, ToyExtractiveGenerator,
};
use xlqa_core::text::normalize_answer;

fn lang() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("en"), Just("fi"), Just("ja"), Just("th"), Just("zh-tw")]
}

fn passage(id: usize, text: String) -> Passage {
    Passage {
        passage_id: format!("p{id}"),
        article_id: "a".into(),
        lang: "en".into(),
        title: "t".into(),
        text,
        token_count: 1,
    }
}

proptest! {
    #[test]
    fn segmentation_conserves_tokens(text in "[a-zé東京 \n\t]{0,400}", lang in lang(), max in 1usize..120) {
        let article = Article::new("a", lang, "T", text.clone());
        let passages = segment_article(&article, max);
        let joined: Vec<String> = passages
            .iter()
            .flat_map(|p| tokenize(&p.text, lang).into_iter().map(str::to_string).collect::<Vec<_>>())
            .collect();
        let want: Vec<&str> = tokenize(&text, lang);
        prop_assert_eq!(joined, want);
        for p in &passages {
            prop_assert!(p.token_count >= 1 && p.token_count <= max);
        }
    }

    #[test]
    fn search_matches_brute_force(
        rows in prop::collection::vec(prop::collection::vec(-3i8..=3, 3), 1..40),
        q in prop::collection::vec(-3i8..=3, 3),
        k in 1usize..50,
    ) {
        let vecs: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&x| f32::from(x)).collect()).collect();
        let index = DenseIndex::build(
            vecs.iter().enumerate().map(|(i, v)| (format!("id{i:03}"), EmbeddingVector::new(v.clone()).unwrap())),
            3,
        ).unwrap();
        let qf: Vec<f32> = q.iter().map(|&x| f32::from(x)).collect();
        let mut want: Vec<(String, f64)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("id{i:03}"), v.iter().zip(&qf).map(|(a, b)| f64::from(a * b)).sum()))
            .collect();
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        want.truncate(k);
        let got: Vec<(String, f64)> = index
            .search(&EmbeddingVector::new(qf).unwrap(), k)
            .unwrap()
            .into_iter()
            .map(|r| (r.passage_id, r.score))
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn prompt_roundtrip(
        q in "[^<>]{0,30}",
        lang in "[a-z]{2}(-[a-z]{2})?",
        passages in prop::collection::vec(("[^<>]{0,15}", "[^<>]{0,40}"), 0..6),
    ) {
        let passages: Vec<PromptPassage> = passages
            .into_iter()
            .enumerate()
            .map(|(rank, (title, text))| PromptPassage { rank, title, text })
            .collect();
        let question = Question::new("q", lang.clone(), q.clone());
        let parsed = parse_prompt(&format_prompt(&question, &passages)).unwrap();
        prop_assert_eq!(parsed.question, q);
        prop_assert_eq!(parsed.lang, lang);
        prop_assert_eq!(parsed.passages, passages);
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,30}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once.clone());
        prop_assert!(answer_matches(&s, &once, "en"));
    }

    #[test]
    fn answer_metric_bounds(pred in "[a-c .]{0,12}", gold in "[a-c .]{0,12}", lang in lang()) {
        let golds = vec![gold.clone()];
        let f = token_f1(&pred, &golds, lang);
        let b = bleu(&pred, &golds, lang);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert_eq!(f, token_f1(&gold, std::slice::from_ref(&pred), lang));
        if exact_match(&pred, &golds, lang) {
            prop_assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn recall_is_monotone_in_k(
        texts in prop::collection::vec(prop_oneof![Just("gold here"), Just("none"), Just("金")], 0..12),
        k in 1usize..12,
    ) {
        let docs: Vec<Passage> = texts.iter().enumerate().map(|(i, t)| passage(i, t.to_string())).collect();
        let answers = AnswerSet::new(BTreeMap::from([
            ("en".to_string(), vec!["gold".to_string()]),
            ("zh-cn".to_string(), vec!["金".to_string()]),
        ])).unwrap();
        let a = recall_at_k(&docs, &answers, "zh-cn", k);
        let b = recall_at_k(&docs, &answers, "zh-cn", k + 1);
        prop_assert!(!a.target || b.target);
        prop_assert!(!a.multi || b.multi);
        prop_assert!(!a.target || a.multi);
    }

    #[test]
    fn aggregate_ignores_order(scores in prop::collection::vec((0usize..3, 0.0f64..1.0), 0..20), seed in any::<u64>()) {
        let rows: Vec<QuestionScore> = scores
            .iter()
            .enumerate()
            .map(|(i, (l, f))| QuestionScore {
                question_id: format!("q{i}"),
                lang: ["en", "ja", "fi"][*l].into(),
                answer: Some(AnswerScore { f1: *f, em: false, bleu: *f }),
                recall: None,
            })
            .collect();
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                shuffled.swap(i, (seed as usize).wrapping_add(i * 7) % n);
            }
        }
        prop_assert_eq!(aggregate(&rows, 10, None), aggregate(&shuffled, 10, None));
    }

    #[test]
    fn loss_is_non_negative(
        q in prop::collection::vec(-2.0f32..2.0, 3),
        p in prop::collection::vec(-2.0f32..2.0, 3),
        n in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 3), 0..4),
    ) {
        let ev = |v: &Vec<f32>| EmbeddingVector::new(v.clone()).unwrap();
        let loss = batch_nll_loss(&[ev(&q)], &[ev(&p)], &[n.iter().map(ev).collect()]).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn toy_generation_is_deterministic_and_labels_are_consistent(
        text in "[a-z ]{0,40}",
        oracle in "[a-z]{1,3}",
    ) {
        let generator = ToyExtractiveGenerator::with_oracle([oracle.clone()]);
        let q = Question::new("q", "en", "which one");
        let p = passage(0, text);
        let ranked = PromptPassage::ranked([&p]);
        let a = generator.generate(&q, &ranked).unwrap();
        prop_assert_eq!(&a, &generator.generate(&q, &ranked).unwrap());
        prop_assert_eq!(a.sequence_logprob, a.token_logprobs.iter().sum::<f64>());
        let (label, result) = label_passage(&generator, &q, &p, std::slice::from_ref(&oracle)).unwrap();
        prop_assert_eq!(label == Label::Positive, answer_matches(&result.answer, &oracle, "en"));
    }
}
