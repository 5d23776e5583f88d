//! The whole pipeline on a generated corpus: binary datasets, a bank of
//! acceptability scorers, replayed LLM labels, routing, multi-label
//! training with and without curricula, and evaluation on held-out gold.
//!
//! cargo run --release --example end_to_end

use std::time::Instant;

use dialectid::acceptability::{build_all, AdjacencyTable, BuildMode};
use dialectid::corpus::Dialect;
use dialectid::curriculum::{
    build_schedule, order_buckets, partition, run_curriculum, BucketKind, ReplayRule,
};
use dialectid::evaluation::{evaluate_run, LabelSet};
use dialectid::pseudo_label::{
    build_hybrid_dataset, train_bank_models, BinaryClassifierBank, LlmAnnotationClient,
    DEFAULT_BANK_THRESHOLD,
};
use dialectid::synthetic::{generate, SyntheticConfig};
use dialectid::trainer::{
    per_example_loss, split_indices, train_multilabel, Cadence, ReferenceEncoder, TraceConfig,
    TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let start = Instant::now();
    let corpus = generate(&SyntheticConfig::default());
    let (pool_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let pool = corpus.select(&pool_idx);
    let test = corpus.select(&test_idx).gold();
    println!(
        "corpus {} sentences: {} pool, {} held out",
        corpus.len(),
        pool.len(),
        test.len()
    );

    let datasets = build_all(
        &pool.samples,
        &AdjacencyTable::shipped(),
        BuildMode::PseudoLabel,
    )?;
    let cfg = TrainConfig::default();
    let bank_cfg = TrainConfig {
        trace: TraceConfig {
            cadence: Cadence::PerEpoch(1),
            epochs: 3,
            warmup_epochs_ignored: 0,
        },
        ..cfg.clone()
    };
    let models = train_bank_models(
        &datasets,
        |d: Dialect| {
            ReferenceEncoder::new(cfg.encoder, cfg.seed + d.index() as u64).expect("valid config")
        },
        &bank_cfg,
    )?;
    let bank = BinaryClassifierBank::from_models(
        models.into_iter().map(|(d, m, _)| (d, m)).collect(),
        DEFAULT_BANK_THRESHOLD,
    );
    println!("bank trained in {:.1?}", start.elapsed());

    let client = LlmAnnotationClient::replay(pool.replay_fixtures(0.05, 3)).with_retries(2);
    let hybrid = build_hybrid_dataset(&pool.samples, &bank, &client)?;
    let agree = hybrid
        .samples
        .iter()
        .filter(|s| {
            let i = pool
                .samples
                .iter()
                .position(|p| p.id == s.sample.id)
                .expect("from pool");
            pool.truth[i] == s.labels
        })
        .count();
    println!(
        "hybrid: {} kept, {} dropped, {} via bank, {} via LLM, {} exactly right; {:?}",
        hybrid.samples.len(),
        hybrid.dropped,
        hybrid.routed_binary,
        hybrid.routed_gpt,
        agree,
        client.stats()
    );

    let encoder = || ReferenceEncoder::new(cfg.encoder, cfg.seed).expect("valid config");
    let base = train_multilabel(&hybrid.samples, encoder(), &cfg)?;
    let labels = LabelSet::all();
    let r = evaluate_run(&base.model, &test, &labels, cfg.inference_threshold)?;
    println!(
        "no curriculum: macro P {:.3} R {:.3} F1 {:.3} acc {:.3} ({:.1?})",
        r.macro_precision,
        r.macro_recall,
        r.macro_f1,
        r.accuracy,
        start.elapsed()
    );

    let losses = per_example_loss(&base.model, &hybrid.samples);
    for kind in [BucketKind::Cardinality, BucketKind::Aldi] {
        let spec = partition(&hybrid.samples, kind)?;
        let order = order_buckets(&spec, &losses)?;
        let schedule = build_schedule(&spec, &order, 7, ReplayRule::MinPrior)?;
        let run = run_curriculum(&schedule, &hybrid.samples, encoder(), &cfg, cfg.epochs)?;
        let r = evaluate_run(&run.model, &test, &labels, cfg.inference_threshold)?;
        println!(
            "{kind} curriculum {:?}: macro P {:.3} R {:.3} F1 {:.3} acc {:.3}",
            order, r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy
        );
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
