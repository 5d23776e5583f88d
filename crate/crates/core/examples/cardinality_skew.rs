//! Training on pseudo-labels that under-report label cardinality, with and
//! without the cardinality curriculum, scored against the true labels.
//!
//! cargo run --release --example cardinality_skew [keep_full]

use dialectid::curriculum::{
    build_schedule, order_buckets, partition, run_curriculum, BucketKind, ReplayRule,
};
use dialectid::evaluation::{evaluate_run, LabelSet};
use dialectid::synthetic::{cardinality_skewed_labels, generate, SyntheticConfig};
use dialectid::trainer::{
    per_example_loss, split_indices, train_multilabel, ReferenceEncoder, TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let keep_full: f64 = std::env::args()
        .nth(1)
        .map(|v| v.parse())
        .transpose()?
        .unwrap_or(0.2);
    let corpus = generate(&SyntheticConfig {
        msa_fraction: 0.0,
        region_fraction: 0.3,
        ..SyntheticConfig::default()
    });
    let (train_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let pool = corpus.select(&train_idx);
    let test = corpus.select(&test_idx).gold();
    let labels = cardinality_skewed_labels(&pool, keep_full, 5);
    let multi = pool.truth.iter().filter(|t| t.cardinality() > 1).count();
    let kept = labels.iter().filter(|s| s.cardinality() > 1).count();
    println!(
        "{} training sentences, {multi} truly multi-label, {kept} labelled as such",
        labels.len()
    );

    let cfg = TrainConfig::default();
    let encoder = || ReferenceEncoder::new(cfg.encoder, cfg.seed).expect("valid config");
    let base = train_multilabel(&labels, encoder(), &cfg)?;
    let all = LabelSet::all();
    let r = evaluate_run(&base.model, &test, &all, cfg.inference_threshold)?;
    println!(
        "no curriculum:          P {:.3} R {:.3} F1 {:.3}",
        r.macro_precision, r.macro_recall, r.macro_f1
    );

    let losses = per_example_loss(&base.model, &labels);
    let spec = partition(&labels, BucketKind::Cardinality)?;
    let order = order_buckets(&spec, &losses)?;
    let schedule = build_schedule(&spec, &order, 7, ReplayRule::MinPrior)?;
    let run = run_curriculum(&schedule, &labels, encoder(), &cfg, cfg.epochs)?;
    let c = evaluate_run(&run.model, &test, &all, cfg.inference_threshold)?;
    println!(
        "cardinality curriculum: P {:.3} R {:.3} F1 {:.3}  order {order:?}",
        c.macro_precision, c.macro_recall, c.macro_f1
    );
    Ok(())
}
