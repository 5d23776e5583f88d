//! A single-label classifier turned multi-label by keeping the smallest set
//! of labels covering probability mass p, scored at several p.
//!
//! cargo run --release --example top_p_baseline

use dialectid::corpus::{LabelVector, Sample};
use dialectid::evaluation::{evaluate_run, top_p_labels, LabelSet, SingleLabelDistribution};
use dialectid::synthetic::{generate, SyntheticConfig};
use dialectid::trainer::{split_indices, train_multilabel, ReferenceEncoder, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig::default());
    let (train_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let train = corpus.select(&train_idx).gold();
    let test = corpus.select(&test_idx).gold();
    let cfg = TrainConfig::default();
    let run = train_multilabel(&train, ReferenceEncoder::new(cfg.encoder, cfg.seed)?, &cfg)?;

    // Renormalised sigmoid outputs stand in for a softmax head.
    let single = |s: &Sample| {
        let p = run.model.probs_text(&s.text);
        let total: f64 = p.iter().sum();
        SingleLabelDistribution::from_slice(&p.iter().map(|x| x / total).collect::<Vec<_>>())
            .expect("normalised")
    };
    let labels = LabelSet::all();
    let r = evaluate_run(&run.model, &test, &labels, cfg.inference_threshold)?;
    println!(
        "multi-label head at {}: F1 {:.3}",
        cfg.inference_threshold, r.macro_f1
    );
    for p in [0.3, 0.5, 0.7, 0.9, 0.99] {
        let predict = |s: &Sample, _t: f64| -> LabelVector {
            top_p_labels(&single(s), p).expect("p in range")
        };
        let r = evaluate_run(&predict, &test, &labels, 0.0)?;
        let mean: f64 = test
            .iter()
            .map(|s| predict(&s.sample, 0.0).cardinality() as f64)
            .sum::<f64>()
            / test.len() as f64;
        println!(
            "top-p {p:<4}: P {:.3} R {:.3} F1 {:.3}, {mean:.2} labels per sentence",
            r.macro_precision, r.macro_recall, r.macro_f1
        );
    }
    Ok(())
}
