//! Writes a generated corpus to disk for driving the `dialectid` binary:
//! an unlabeled training pool, a gold test set and replayable LLM answers.
//!
//! cargo run --example synthetic_corpus -- OUT_DIR [per_dialect]

use std::path::PathBuf;

use dialectid::corpus::{save_corpus, save_labeled, CorpusFormat};
use dialectid::synthetic::{generate, SyntheticConfig};
use dialectid::trainer::split_indices;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(
        args.next()
            .ok_or("usage: synthetic_corpus OUT_DIR [per_dialect]")?,
    );
    let per_dialect = args.next().map(|v| v.parse()).transpose()?.unwrap_or(40);
    std::fs::create_dir_all(&out)?;

    let corpus = generate(&SyntheticConfig {
        per_dialect,
        ..SyntheticConfig::default()
    });
    let (pool_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let pool = corpus.select(&pool_idx);
    let test = corpus.select(&test_idx);

    save_corpus(&out.join("pool.tsv"), &pool.samples, CorpusFormat::Tsv)?;
    save_labeled(&out.join("pool_gold.tsv"), &pool.gold())?;
    save_labeled(&out.join("test_gold.tsv"), &test.gold())?;
    std::fs::write(
        out.join("replay.jsonl"),
        pool.replay_fixtures(0.05, 3).to_jsonl(),
    )?;
    println!(
        "wrote {} pool and {} test sentences to {}",
        pool.len(),
        test.len(),
        out.display()
    );
    Ok(())
}
