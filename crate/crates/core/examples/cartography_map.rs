//! Dataset cartography for one dialect: trains a binary scorer on the
//! everything-else negatives, bins samples by how often the scorer got them
//! right, and lists the negatives that look like mislabelled positives.
//!
//! cargo run --release --example cartography_map [DIALECT]

use dialectid::acceptability::{build_binary_dataset, AdjacencyTable, BuildMode};
use dialectid::cartography::{
    bin_by_correctness, compute_metrics, export_annotation_sheet, flag_suspect_negatives,
    CorrectnessBin,
};
use dialectid::corpus::Dialect;
use dialectid::synthetic::{generate, SyntheticConfig};
use dialectid::trainer::{train_binary, Cadence, ReferenceEncoder, TraceConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let code = std::env::args().nth(1).unwrap_or_else(|| "EG".into());
    let dia = Dialect::from_code(&code).ok_or_else(|| format!("unknown dialect {code:?}"))?;
    let corpus = generate(&SyntheticConfig::default());
    let ds = build_binary_dataset(
        dia,
        &corpus.samples,
        &AdjacencyTable::shipped(),
        BuildMode::Cartography,
    )?;
    println!(
        "{dia}: {} positives, {} negatives",
        ds.positives.len(),
        ds.negatives.len()
    );

    let cfg = TrainConfig {
        trace: TraceConfig {
            cadence: Cadence::PerEpoch(4),
            epochs: 5,
            warmup_epochs_ignored: 1,
        },
        ..TrainConfig::default()
    };
    let (_, trace) = train_binary(&ds, ReferenceEncoder::new(cfg.encoder, cfg.seed)?, &cfg)?;
    let records = compute_metrics(&trace)?;

    let bins = bin_by_correctness(&records);
    println!("bin        positives  negatives");
    for bin in CorrectnessBin::all() {
        let cell = &bins[bin.index()];
        let neg = cell.iter().filter(|r| r.is_negative()).count();
        println!("{:<10} {:>9}  {:>9}", bin.label(), cell.len() - neg, neg);
    }

    // Negatives the scorer never learned to reject.
    let suspects = flag_suspect_negatives(&records);
    let sounding_alike = suspects
        .iter()
        .filter(|id| {
            let i = corpus
                .samples
                .iter()
                .position(|s| &s.id == *id)
                .expect("from corpus");
            corpus.truth[i].get(dia)
        })
        .count();
    println!(
        "{} suspect negatives, {sounding_alike} of them truly acceptable in {dia}",
        suspects.len()
    );

    let sheet = export_annotation_sheet(&records, &corpus.samples, 5, 1);
    println!("annotation sheet: {} rows", sheet.rows.len());
    for row in sheet.rows.iter().take(3) {
        println!(
            "  {} {} {} {}",
            row.id,
            row.polarity.as_str(),
            row.bin,
            row.text
        );
    }
    Ok(())
}
