use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlqa_bench::random_articles;
use xlqa_core::corpus::{ingest, IngestConfig};
use xlqa_core::generator::PromptPassage;
use xlqa_core::miner::{embed_store, initial_examples, run_iteration, MiningContext, MiningState};
use xlqa_core::toy::{ToyConfig, ToyWorld};
use xlqa_core::{format_prompt, Generator, HashEncoder, ToyTrainableEncoder};

fn ingestion(c: &mut Criterion) {
    let articles = random_articles(2_000, 350, 1);
    let dump: String = articles
        .iter()
        .map(|a| serde_json::to_string(a).unwrap() + "\n")
        .collect();
    let mut group = c.benchmark_group("ingest");
    group.throughput(Throughput::Elements(articles.len() as u64));
    group.bench_function("2000_articles", |b| {
        b.iter(|| std::hint::black_box(ingest(dump.as_bytes(), &IngestConfig::default()).unwrap()))
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let world = ToyWorld::generate(&ToyConfig::default()).unwrap();
    let mut examples = initial_examples(&world.train, &world.store).unwrap();
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let batch = &examples[..16];
    let encoder = ToyTrainableEncoder::random(16_384, 64, 1).unwrap();
    c.bench_function("loss_and_gradient_b16_d64", |b| {
        b.iter(|| std::hint::black_box(encoder.loss_and_gradient(batch).unwrap()))
    });
}

fn generation_and_mining(c: &mut Criterion) {
    let world = ToyWorld::generate(&ToyConfig {
        entities: 200,
        spurious_fraction: 0.25,
        ..ToyConfig::default()
    })
    .unwrap();
    let generator = world.generator();
    let encoder = HashEncoder::new(64, 1).unwrap();
    let index = embed_store(&encoder, &world.store).unwrap();

    let q = &world.train[0].question;
    let passages = PromptPassage::ranked(world.store.passages().iter().take(10));
    c.bench_function("prompt_and_toy_generate_10", |b| {
        b.iter(|| {
            std::hint::black_box(format_prompt(q, &passages));
            std::hint::black_box(generator.generate(q, &passages).unwrap())
        })
    });

    let state = MiningState::initial(initial_examples(&world.train, &world.store).unwrap());
    let ctx = MiningContext {
        store: &world.store,
        index: &index,
        encoder: &encoder,
        generator: &generator,
        links: Some(&world.links),
    };
    let config = Default::default();
    let mut group = c.benchmark_group("mining");
    group.sample_size(10);
    group.bench_function("run_iteration_200_questions", |b| {
        b.iter(|| std::hint::black_box(run_iteration(&state, &world.train, &ctx, &config).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, ingestion, training, generation_and_mining);
criterion_main!(benches);
