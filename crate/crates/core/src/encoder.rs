//! Dual encoders and the contrastive retriever objective.
//!
//! Questions and passages go through separate towers; relevance is the inner
//! product of the two embeddings. Passages are serialized as
//! `[CLS] title [SEP] text [SEP]` before encoding, questions are encoded as
//! bare text.
//!
//! Two local encoders are provided. [`HashEncoder`] is a fixed signed
//! feature-hashing encoder that needs no training. [`ToyTrainableEncoder`]
//! is a bag-of-token-embeddings model (mean pooling, one embedding table per
//! tower) trained with [`ToyTrainableEncoder::train_step`] on the softmax
//! negative log-likelihood over in-batch and mined negatives.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Passage};
use crate::error::{Error, Result};
use crate::generator::Question;
use crate::remote::RemoteEncoder;

pub const DEFAULT_DIM: usize = 768;
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Fixed-length, finite embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }
}

/// Inner product with 64-bit accumulation in index order.
///
/// The dense index uses the same routine, so scores computed here and
/// scores returned by a search are bit-identical.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += f64::from(*x) * f64::from(*y);
    }
    acc
}

pub fn relevance_score(q: &EmbeddingVector, p: &EmbeddingVector) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimMismatch {
            expected: q.dim(),
            actual: p.dim(),
        });
    }
    Ok(dot(q.as_slice(), p.as_slice()))
}

/// Input string of the passage tower.
pub fn serialize_passage(title: &str, text: &str) -> String {
    format!("{CLS} {title} {SEP} {text} {SEP}")
}

/// Tokens seen by the toy encoders: `[CLS]`/`[SEP]` stay atomic, everything
/// else goes through [`tokenize`].
pub fn model_tokens<'a>(serialized: &'a str, lang: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    for piece in serialized.split_whitespace() {
        if piece == CLS || piece == SEP {
            out.push(piece);
        } else {
            out.extend(tokenize(piece, lang));
        }
    }
    out
}

fn hash_token(key: u64, token: &str) -> u64 {
    let mut h = FnvHasher::with_key(key);
    h.write(token.as_bytes());
    h.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "toy-hash")]
    ToyHash,
    #[serde(rename = "toy-trainable")]
    ToyTrainable,
    #[serde(rename = "remote")]
    Remote,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-hash" => Ok(Self::ToyHash),
            "toy-trainable" => Ok(Self::ToyTrainable),
            "remote" => Ok(Self::Remote),
            other => Err(Error::invalid(format!("unknown encoder kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ToyHash => "toy-hash",
            Self::ToyTrainable => "toy-trainable",
            Self::Remote => "remote",
        })
    }
}

/// Question tower and passage tower behind one interface.
pub trait DualEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode_questions(&self, questions: &[Question]) -> Result<Vec<EmbeddingVector>>;

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<EmbeddingVector>>;

    fn encode_question(&self, question: &Question) -> Result<EmbeddingVector> {
        Ok(self
            .encode_questions(std::slice::from_ref(question))?
            .swap_remove(0))
    }

    fn encode_passage(&self, passage: &Passage) -> Result<EmbeddingVector> {
        Ok(self
            .encode_passages(std::slice::from_ref(passage))?
            .swap_remove(0))
    }
}

/// Signed feature hashing into `dim` buckets, L2-normalised.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("encoder dim must be positive"));
        }
        Ok(Self { dim, seed })
    }

    fn encode_tokens(&self, tokens: &[&str]) -> EmbeddingVector {
        let mut v = vec![0.0f64; self.dim];
        for t in tokens {
            let h = hash_token(self.seed, &t.to_lowercase());
            let bucket = (h % self.dim as u64) as usize;
            v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        EmbeddingVector(v.into_iter().map(|x| x as f32).collect())
    }
}

impl DualEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_questions(&self, questions: &[Question]) -> Result<Vec<EmbeddingVector>> {
        Ok(questions
            .par_iter()
            .map(|q| self.encode_tokens(&model_tokens(&q.text, &q.lang)))
            .collect())
    }

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<EmbeddingVector>> {
        Ok(passages
            .par_iter()
            .map(|p| {
                let s = serialize_passage(&p.title, &p.text);
                self.encode_tokens(&model_tokens(&s, &p.lang))
            })
            .collect())
    }
}

/// One retriever training instance: a question, the passages that answer
/// it and passages that do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question: Question,
    pub answers: Vec<String>,
    pub positives: Vec<Passage>,
    pub negatives: Vec<Passage>,
    /// Mining round that produced the example; 0 for the initial data.
    pub iteration: usize,
}

impl TrainingExample {
    pub fn new(
        question: Question,
        answers: Vec<String>,
        positives: Vec<Passage>,
        negatives: Vec<Passage>,
        iteration: usize,
    ) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::invalid(format!(
                "training example for {:?} has no positives",
                question.question_id
            )));
        }
        if let Some(p) = negatives
            .iter()
            .find(|n| positives.iter().any(|p| p.passage_id == n.passage_id))
        {
            return Err(Error::invalid(format!(
                "passage {:?} is both positive and negative",
                p.passage_id
            )));
        }
        Ok(Self {
            question,
            answers,
            positives,
            negatives,
            iteration,
        })
    }
}

/// Per-example losses and gradients with respect to every embedding that
/// took part in the softmax.
struct Contrastive {
    per_example: Vec<f64>,
    grad_question: Vec<Vec<f64>>,
    grad_positive: Vec<Vec<f64>>,
    grad_negative: Vec<Vec<Vec<f64>>>,
}

impl Contrastive {
    fn mean_loss(&self) -> f64 {
        self.per_example.iter().sum::<f64>() / self.per_example.len() as f64
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Mean over the batch of `-log softmax(score)[positive]`.
///
/// For question `i` the candidates are its own positive, the positives of
/// every `j != i` for which `in_batch(i, j)` holds, and its extra negatives.
fn contrastive(
    questions: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<Vec<f64>>],
    in_batch: &dyn Fn(usize, usize) -> bool,
) -> Contrastive {
    let m = questions.len();
    let dim = questions.first().map_or(0, Vec::len);
    let scale = 1.0 / m as f64;
    let mut out = Contrastive {
        per_example: Vec::with_capacity(m),
        grad_question: vec![vec![0.0; dim]; m],
        grad_positive: vec![vec![0.0; dim]; m],
        grad_negative: negatives
            .iter()
            .map(|ns| vec![vec![0.0; dim]; ns.len()])
            .collect(),
    };
    for i in 0..m {
        let q = &questions[i];
        let others: Vec<usize> = (0..m).filter(|&j| j != i && in_batch(i, j)).collect();
        let extra: &[Vec<f64>] = negatives.get(i).map_or(&[], Vec::as_slice);

        let mut logits = Vec::with_capacity(1 + others.len() + extra.len());
        logits.push(dot64(q, &positives[i]));
        logits.extend(others.iter().map(|&j| dot64(q, &positives[j])));
        logits.extend(extra.iter().map(|n| dot64(q, n)));

        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        out.per_example.push(lse - logits[0]);

        let w: Vec<f64> = logits.iter().map(|s| (s - lse).exp()).collect();
        // d/dq = sum_c w_c v_c - v_pos
        let gq = &mut out.grad_question[i];
        axpy(gq, scale * (w[0] - 1.0), &positives[i]);
        for (k, &j) in others.iter().enumerate() {
            axpy(gq, scale * w[1 + k], &positives[j]);
        }
        for (k, n) in extra.iter().enumerate() {
            axpy(gq, scale * w[1 + others.len() + k], n);
        }
        // d/dv_c = (w_c - [c = pos]) q
        axpy(&mut out.grad_positive[i], scale * (w[0] - 1.0), q);
        for (k, &j) in others.iter().enumerate() {
            axpy(&mut out.grad_positive[j], scale * w[1 + k], q);
        }
        for k in 0..extra.len() {
            axpy(
                &mut out.grad_negative[i][k],
                scale * w[1 + others.len() + k],
                q,
            );
        }
    }
    out
}

/// Batch loss with in-batch negatives, averaged over questions.
///
/// `extra_negatives` is either empty or has one (possibly empty) list per
/// question.
pub fn batch_nll_loss(
    question_vecs: &[EmbeddingVector],
    positive_vecs: &[EmbeddingVector],
    extra_negative_vecs: &[Vec<EmbeddingVector>],
) -> Result<f64> {
    let m = question_vecs.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if positive_vecs.len() != m {
        return Err(Error::invalid(format!(
            "{m} questions but {} positives",
            positive_vecs.len()
        )));
    }
    if !extra_negative_vecs.is_empty() && extra_negative_vecs.len() != m {
        return Err(Error::invalid(format!(
            "{m} questions but {} negative lists",
            extra_negative_vecs.len()
        )));
    }
    let dim = question_vecs[0].dim();
    let all = question_vecs
        .iter()
        .chain(positive_vecs)
        .chain(extra_negative_vecs.iter().flatten());
    for v in all {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
    }
    let q: Vec<_> = question_vecs.iter().map(EmbeddingVector::to_f64).collect();
    let p: Vec<_> = positive_vecs.iter().map(EmbeddingVector::to_f64).collect();
    let n: Vec<Vec<_>> = extra_negative_vecs
        .iter()
        .map(|ns| ns.iter().map(EmbeddingVector::to_f64).collect())
        .collect();
    Ok(contrastive(&q, &p, &n, &|_, _| true).mean_loss())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    Question,
    Passage,
}

/// Sparse gradient: only rows of tokens that occurred in the batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub question: BTreeMap<usize, Vec<f64>>,
    pub passage: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    /// Expands to full row-major matrices of shape `vocab_size x dim`.
    pub fn to_dense(&self, vocab_size: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let expand = |rows: &BTreeMap<usize, Vec<f64>>| {
            let mut m = vec![0.0; vocab_size * dim];
            for (&r, g) in rows {
                m[r * dim..(r + 1) * dim].copy_from_slice(g);
            }
            m
        };
        (expand(&self.question), expand(&self.passage))
    }
}

const ENCODER_MAGIC: &[u8; 8] = b"XLENC001";

/// Bag-of-token-embeddings dual encoder with mean pooling.
///
/// Tokens map to table rows by hashing, so the vocabulary is open and
/// `vocab_size` only bounds the table. Parameters are kept in `f64` and
/// persisted as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainableEncoder {
    vocab_size: usize,
    dim: usize,
    question: Vec<f64>,
    passage: Vec<f64>,
    pub freeze_question_tower: bool,
}

impl ToyTrainableEncoder {
    pub fn zeros(vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::invalid("vocab_size and dim must be positive"));
        }
        Ok(Self {
            vocab_size,
            dim,
            question: vec![0.0; vocab_size * dim],
            passage: vec![0.0; vocab_size * dim],
            freeze_question_tower: false,
        })
    }

    /// Uniform init with per-coordinate variance `1/dim`; question tower is
    /// drawn before the passage tower from one seeded stream.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut enc = Self::zeros(vocab_size, dim)?;
        let bound = (3.0 / dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in enc.question.iter_mut().chain(enc.passage.iter_mut()) {
            *x = rng.gen_range(-bound..bound);
        }
        Ok(enc)
    }

    pub fn from_towers(
        vocab_size: usize,
        dim: usize,
        question: Vec<f64>,
        passage: Vec<f64>,
    ) -> Result<Self> {
        let n = vocab_size * dim;
        if vocab_size == 0 || dim == 0 || question.len() != n || passage.len() != n {
            return Err(Error::invalid("tower shape does not match vocab_size x dim"));
        }
        if question.iter().chain(&passage).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite encoder parameter"));
        }
        Ok(Self {
            vocab_size,
            dim,
            question,
            passage,
            freeze_question_tower: false,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn tower(&self, tower: Tower) -> &[f64] {
        match tower {
            Tower::Question => &self.question,
            Tower::Passage => &self.passage,
        }
    }

    pub fn tower_mut(&mut self, tower: Tower) -> &mut [f64] {
        match tower {
            Tower::Question => &mut self.question,
            Tower::Passage => &mut self.passage,
        }
    }

    pub fn row_of(&self, token: &str) -> usize {
        (hash_token(0, token) % self.vocab_size as u64) as usize
    }

    fn question_rows(&self, q: &Question) -> Vec<usize> {
        model_tokens(&q.text, &q.lang)
            .into_iter()
            .map(|t| self.row_of(t))
            .collect()
    }

    fn passage_rows(&self, p: &Passage) -> Vec<usize> {
        let s = serialize_passage(&p.title, &p.text);
        model_tokens(&s, &p.lang)
            .into_iter()
            .map(|t| self.row_of(t))
            .collect()
    }

    /// Mean of the rows; zero for an empty row list.
    fn pool(&self, tower: Tower, rows: &[usize]) -> Vec<f64> {
        let table = self.tower(tower);
        let mut v = vec![0.0; self.dim];
        if rows.is_empty() {
            return v;
        }
        for &r in rows {
            axpy(&mut v, 1.0, &table[r * self.dim..(r + 1) * self.dim]);
        }
        let inv = 1.0 / rows.len() as f64;
        v.iter_mut().for_each(|x| *x *= inv);
        v
    }

    fn scatter(grads: &mut BTreeMap<usize, Vec<f64>>, rows: &[usize], g: &[f64]) {
        if rows.is_empty() {
            return;
        }
        let inv = 1.0 / rows.len() as f64;
        for &r in rows {
            let slot = grads.entry(r).or_insert_with(|| vec![0.0; g.len()]);
            axpy(slot, inv, g);
        }
    }

    /// Loss of `batch` (first positive of each example, in-batch negatives
    /// from other questions, all stored negatives) and its gradient.
    ///
    /// Two examples with the same `question_id` never serve as each
    /// other's in-batch negatives.
    pub fn loss_and_gradient(&self, batch: &[TrainingExample]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let q_rows: Vec<_> = batch.iter().map(|e| self.question_rows(&e.question)).collect();
        let p_rows: Vec<_> = batch
            .iter()
            .map(|e| {
                e.positives
                    .first()
                    .map(|p| self.passage_rows(p))
                    .ok_or_else(|| {
                        Error::invalid(format!(
                            "training example for {:?} has no positives",
                            e.question.question_id
                        ))
                    })
            })
            .collect::<Result<_>>()?;
        let n_rows: Vec<Vec<_>> = batch
            .iter()
            .map(|e| e.negatives.iter().map(|p| self.passage_rows(p)).collect())
            .collect();

        let q: Vec<_> = q_rows.iter().map(|r| self.pool(Tower::Question, r)).collect();
        let p: Vec<_> = p_rows.iter().map(|r| self.pool(Tower::Passage, r)).collect();
        let n: Vec<Vec<_>> = n_rows
            .iter()
            .map(|rs| rs.iter().map(|r| self.pool(Tower::Passage, r)).collect())
            .collect();

        let ids: Vec<&str> = batch.iter().map(|e| e.question.question_id.as_str()).collect();
        let out = contrastive(&q, &p, &n, &|i, j| ids[i] != ids[j]);
        if let Some(i) = out.per_example.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss {
                question_id: batch[i].question.question_id.clone(),
            });
        }

        let mut grad = Gradient::default();
        for i in 0..batch.len() {
            Self::scatter(&mut grad.question, &q_rows[i], &out.grad_question[i]);
            Self::scatter(&mut grad.passage, &p_rows[i], &out.grad_positive[i]);
            for (rows, g) in n_rows[i].iter().zip(&out.grad_negative[i]) {
                Self::scatter(&mut grad.passage, rows, g);
            }
        }
        Ok((out.mean_loss(), grad))
    }

    pub fn apply_gradient(&mut self, grad: &Gradient, learning_rate: f64) {
        let dim = self.dim;
        if !self.freeze_question_tower {
            for (&r, g) in &grad.question {
                axpy(&mut self.question[r * dim..(r + 1) * dim], -learning_rate, g);
            }
        }
        for (&r, g) in &grad.passage {
            axpy(&mut self.passage[r * dim..(r + 1) * dim], -learning_rate, g);
        }
    }

    /// One full-batch gradient descent step. Returns the loss before the
    /// update.
    pub fn train_step(&mut self, batch: &[TrainingExample], learning_rate: f64) -> Result<f64> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and non-negative, got {learning_rate}"
            )));
        }
        let (loss, grad) = self.loss_and_gradient(batch)?;
        self.apply_gradient(&grad, learning_rate);
        Ok(loss)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.question.len());
        buf.extend_from_slice(ENCODER_MAGIC);
        buf.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.question.iter().chain(&self.passage) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != ENCODER_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated("encoder header"));
        }
        let vocab = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = vocab
            .checked_mul(dim)
            .ok_or_else(|| Error::Corrupt("encoder shape overflows".into()))?;
        let body = &bytes[16..];
        if body.len() < 8 * n {
            return Err(Error::Truncated("encoder parameters"));
        }
        if body.len() > 8 * n {
            return Err(Error::Corrupt("trailing bytes after encoder parameters".into()));
        }
        let floats: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (q, p) = floats.split_at(n);
        Self::from_towers(vocab, dim, q.to_vec(), p.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl DualEncoder for ToyTrainableEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_questions(&self, questions: &[Question]) -> Result<Vec<EmbeddingVector>> {
        questions
            .par_iter()
            .map(|q| EmbeddingVector::from_f64(&self.pool(Tower::Question, &self.question_rows(q))))
            .collect()
    }

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<EmbeddingVector>> {
        passages
            .par_iter()
            .map(|p| EmbeddingVector::from_f64(&self.pool(Tower::Passage, &self.passage_rows(p))))
            .collect()
    }
}

/// Encoder selected at run time.
pub enum EncoderHandle {
    ToyHash(HashEncoder),
    ToyTrainable(ToyTrainableEncoder),
    Remote(RemoteEncoder),
}

impl EncoderHandle {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Self::ToyHash(_) => EncoderKind::ToyHash,
            Self::ToyTrainable(_) => EncoderKind::ToyTrainable,
            Self::Remote(_) => EncoderKind::Remote,
        }
    }

    fn inner(&self) -> &dyn DualEncoder {
        match self {
            Self::ToyHash(e) => e,
            Self::ToyTrainable(e) => e,
            Self::Remote(e) => e,
        }
    }
}

impl DualEncoder for EncoderHandle {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn encode_questions(&self, questions: &[Question]) -> Result<Vec<EmbeddingVector>> {
        self.inner().encode_questions(questions)
    }

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<EmbeddingVector>> {
        self.inner().encode_passages(passages)
    }
}
