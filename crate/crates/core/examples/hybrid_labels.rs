//! Pseudo-labelling with replayed LLM answers: the prompt, answer parsing,
//! routing by dialectness and the cardinality profile of the result.
//!
//! cargo run --release --example hybrid_labels

use dialectid::acceptability::{build_all, AdjacencyTable, BuildMode};
use dialectid::corpus::{Dialect, LabelVector, Route};
use dialectid::pseudo_label::{
    build_hybrid_dataset, cardinality_by_aldi_report, parse_llm_response, render_prompt, route,
    serialize_llm_response, train_bank_models, BinaryClassifierBank, LlmAnnotationClient,
    DEFAULT_BANK_THRESHOLD, DEFAULT_TEMPLATE,
};
use dialectid::synthetic::{generate, SyntheticConfig};
use dialectid::trainer::{Cadence, ReferenceEncoder, TraceConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate(&SyntheticConfig::default());
    let first = &corpus.samples[0];
    println!("{}\n", render_prompt(first, DEFAULT_TEMPLATE)?);

    let full = format!(
        "Sure.\n```json\n{}\n```",
        serialize_llm_response(LabelVector::from_dialects([Dialect::EG, Dialect::SD]))
    );
    let answers = [
        full.as_str(),
        "```json\n{\"Egypt\": 1}\n```",
        "no json here",
    ];
    for raw in answers {
        match parse_llm_response(raw) {
            Ok(v) => println!("parsed {:?} -> {}", raw, v.to_bit_string()),
            Err(e) => println!("rejected {:?}: {} ({e})", raw, e.kind()),
        }
    }
    for a in [0.0, 1.0 / 9.0, 0.5, 7.0 / 9.0, 0.8] {
        println!("dialectness {a:.4} -> {}", route(a).as_str());
    }

    let cfg = TrainConfig {
        trace: TraceConfig {
            cadence: Cadence::PerEpoch(1),
            epochs: 3,
            warmup_epochs_ignored: 0,
        },
        ..TrainConfig::default()
    };
    let datasets = build_all(
        &corpus.samples,
        &AdjacencyTable::shipped(),
        BuildMode::PseudoLabel,
    )?;
    let models = train_bank_models(
        &datasets,
        |d: Dialect| {
            ReferenceEncoder::new(cfg.encoder, cfg.seed + d.index() as u64).expect("valid config")
        },
        &cfg,
    )?;
    let bank = BinaryClassifierBank::from_models(
        models.into_iter().map(|(d, m, _)| (d, m)).collect(),
        DEFAULT_BANK_THRESHOLD,
    );

    let client = LlmAnnotationClient::replay(corpus.replay_fixtures(0.1, 3)).with_retries(2);
    let hybrid = build_hybrid_dataset(&corpus.samples, &bank, &client)?;
    let exact = |r: Route| {
        hybrid
            .samples
            .iter()
            .filter(|s| s.route() == Some(r))
            .filter(|s| {
                let i = corpus
                    .samples
                    .iter()
                    .position(|p| p.id == s.sample.id)
                    .expect("from corpus");
                corpus.truth[i] == s.labels
            })
            .count()
    };
    println!(
        "\n{} via bank ({} exact), {} via LLM ({} exact), {} dropped; {:?}",
        hybrid.routed_binary,
        exact(Route::BinaryClassifiers),
        hybrid.routed_gpt,
        exact(Route::Gpt),
        hybrid.dropped,
        client.stats()
    );
    print!(
        "\n{}",
        cardinality_by_aldi_report(&hybrid.samples)?.to_tsv()
    );
    Ok(())
}
