//! Cross-lingual retrieve-then-generate question answering.
//!
//! The crate is organised around the offline/online split of a dense
//! retrieval QA system:
//!
//! - [`corpus`] turns article dumps into fixed-length passages.
//! - [`encoder`] holds the dual-encoder contract, the toy encoders and the
//!   in-batch-negative contrastive objective.
//! - [`dense_index`] answers exact maximum-inner-product queries and persists
//!   embeddings to disk.
//! - [`generator`] builds generator prompts, runs the extractive toy
//!   generator and decides answer equality.
//! - [`miner`] runs the iterative retrieve / expand / label loop that grows
//!   the retriever's training set.
//! - [`evalkit`] scores answers (F1, EM, BLEU) and retrievals (recall@k).
//! - [`remote`] is the HTTP client for the model sidecar.
//! - [`toy`] builds seeded synthetic multilingual worlds for benchmarks.

pub mod corpus;
pub mod dense_index;
pub mod encoder;
mod error;
pub mod evalkit;
pub mod generator;
pub mod miner;
pub mod remote;
pub mod text;
pub mod toy;

pub use corpus::{Article, CorpusStats, Passage, PassageStore};
pub use dense_index::{DenseIndex, RetrievalResult};
pub use encoder::{
    batch_nll_loss, relevance_score, DualEncoder, EmbeddingVector, EncoderHandle, EncoderKind,
    HashEncoder, ToyTrainableEncoder, TrainingExample,
};
pub use error::{Error, ErrorClass, Result};
pub use evalkit::{AnswerSet, EvalReport, LanguageCategory};
pub use generator::{
    answer_matches, format_prompt, GenerationResult, Generator, GeneratorHandle, PromptPassage,
    Question, ToyExtractiveGenerator,
};
pub use miner::{IterationConfig, LanguageLinkTable, MiningState, QAInstance};
