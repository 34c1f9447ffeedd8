//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xlqa_core::corpus::Article;
use xlqa_core::{DenseIndex, EmbeddingVector};

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            EmbeddingVector::new(v).expect("finite")
        })
        .collect()
}

/// Index of `n` random passages with ids `p000000`, `p000001`, ...
pub fn random_index(n: usize, dim: usize, seed: u64) -> DenseIndex {
    let ids: Vec<String> = (0..n).map(|i| format!("p{i:06}")).collect();
    DenseIndex::build(ids.iter().map(String::as_str).zip(random_vectors(n, dim, seed)), dim)
        .expect("valid index")
}

/// Articles of `tokens` words drawn from a small vocabulary; every fourth
/// one is Japanese so the per-character path is exercised too.
pub fn random_articles(n: usize, tokens: usize, seed: u64) -> Vec<Article> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let ja = i % 4 == 3;
            let text = if ja {
                (0..tokens)
                    .map(|_| char::from_u32(0x3041 + rng.gen_range(0..80)).unwrap())
                    .collect::<String>()
            } else {
                (0..tokens)
                    .map(|_| format!("w{}", rng.gen_range(0..5000)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            Article::new(format!("a{i}"), if ja { "ja" } else { "en" }, format!("T{i}"), text)
        })
        .collect()
}
