use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dialectid::corpus::{
    save_corpus, save_labeled, CorpusFormat, Dialect, LabelVector, LabeledSample, Provenance,
    Sample,
};
use dialectid::pseudo_label::API_KEY_ENV;
use dialectid::synthetic::{generate, SyntheticConfig};

fn dialectid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialectid"))
        .args(args)
        .current_dir(dir)
        .env_remove(API_KEY_ENV)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = dialectid(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    dialectid(dir, args).status.code().unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(
        &fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display())),
    )
    .unwrap()
}

/// Small generated workspace: pool corpus, gold sets and replay answers.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let c = generate(&SyntheticConfig {
        per_dialect: 12,
        ..SyntheticConfig::default()
    });
    let (a, b) = dialectid::trainer::split_indices(c.len(), 0.25, 3);
    let (pool, test) = (c.select(&a), c.select(&b));
    save_corpus(
        &tmp.path().join("pool.tsv"),
        &pool.samples,
        CorpusFormat::Tsv,
    )
    .unwrap();
    save_labeled(&tmp.path().join("pool_gold.tsv"), &pool.gold()).unwrap();
    save_labeled(&tmp.path().join("test_gold.tsv"), &test.gold()).unwrap();
    fs::write(
        tmp.path().join("replay.jsonl"),
        pool.replay_fixtures(0.1, 1).to_jsonl(),
    )
    .unwrap();
    tmp
}

#[test]
fn aggregate_three_sample_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let samples = vec![
        Sample::new("a", "first").with_aldi(0.05),
        Sample::new("b", "second").with_aldi(0.5),
        Sample::new("c", "third").with_aldi(0.9),
    ];
    save_corpus(&d.join("corpus.tsv"), &samples, CorpusFormat::Tsv).unwrap();
    let bin = LabelVector::from_dialects([Dialect::EG]);
    let gpt = LabelVector::from_dialects([Dialect::MA, Dialect::TN]);
    let with = |v, p| {
        samples
            .iter()
            .map(|s| LabeledSample::new(s.clone(), v, p))
            .collect::<Vec<_>>()
    };
    save_labeled(
        &d.join("bin.tsv"),
        &with(bin, Provenance::BinaryClassifiers),
    )
    .unwrap();
    save_labeled(&d.join("gpt.tsv"), &with(gpt, Provenance::Gpt)).unwrap();

    ok(
        d,
        &[
            "aggregate",
            "--corpus",
            "corpus.tsv",
            "--binary",
            "bin.tsv",
            "--gpt",
            "gpt.tsv",
            "--aldi-routing",
            "default",
            "--out",
            "hybrid.tsv",
        ],
    );
    let out = dialectid::corpus::load_labeled(&d.join("hybrid.tsv")).unwrap();
    let got: Vec<(LabelVector, &str)> = out
        .iter()
        .map(|s| (s.labels, s.route().unwrap().as_str()))
        .collect();
    assert_eq!(
        got,
        vec![
            (bin, "binary-classifiers"),
            (gpt, "gpt"),
            (bin, "binary-classifiers")
        ]
    );
    let header = fs::read_to_string(d.join("hybrid.tsv")).unwrap();
    assert!(header
        .lines()
        .next()
        .unwrap()
        .ends_with("provenance\troute"));

    let m = json(d.join("hybrid.tsv.manifest.json"));
    assert_eq!(m["subcommand"], "aggregate");
    assert_eq!(m["thresholds"]["msa_max"], "1/9");
    assert_eq!(m["thresholds"]["high_dialect_min"], "7/9");
    assert_eq!(m["resolved"]["aldi_routing"]["source"], "flag");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);

    ok(
        d,
        &[
            "aggregate",
            "--corpus",
            "corpus.tsv",
            "--gpt",
            "gpt.tsv",
            "--aldi-routing",
            "gpt",
            "--out",
            "all_gpt.tsv",
        ],
    );
    let all_gpt = dialectid::corpus::load_labeled(&d.join("all_gpt.tsv")).unwrap();
    assert!(all_gpt.iter().all(|s| s.labels == gpt));
    // A source the routing needs but was not given.
    assert_eq!(
        code(
            d,
            &[
                "aggregate",
                "--corpus",
                "corpus.tsv",
                "--gpt",
                "gpt.tsv",
                "--out",
                "x.tsv"
            ]
        ),
        1
    );
}

#[test]
fn pipeline_and_reproducibility() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["build-binary", "--corpus", "pool.tsv", "--out", "bin"]);
    assert!(d.join("bin/EG/positives.tsv").is_file());
    let trace = [
        "--cadence",
        "per-epoch:1",
        "--trace-epochs",
        "2",
        "--hidden",
        "8",
        "--buckets",
        "512",
    ];
    let mut args = vec!["train-binary", "--datasets", "bin", "--out", "bank"];
    args.extend(trace);
    ok(d, &args);
    assert!(d.join("bank/SY/trace.jsonl").is_file());
    ok(d, &["cartography", "--traces", "bank", "--out", "carto"]);
    ok(
        d,
        &["flag", "--cartography", "carto", "--out", "flagged.tsv"],
    );
    assert!(fs::read_to_string(d.join("flagged.tsv"))
        .unwrap()
        .starts_with("dialect\tid"));
    ok(
        d,
        &[
            "annotate-export",
            "--cartography",
            "carto",
            "--corpus",
            "pool.tsv",
            "--out",
            "sheets",
        ],
    );
    assert_eq!(
        json(d.join("sheets/run_manifest.json"))["resolved"]["per_bin"]["value"],
        "10"
    );

    let stdout = ok(
        d,
        &[
            "pseudo-label",
            "--corpus",
            "pool.tsv",
            "--bank",
            "bank",
            "--replay",
            "replay.jsonl",
            "--cache",
            "cache",
            "--out",
            "hybrid.tsv",
        ],
    );
    assert!(stdout.contains("via bank"), "{stdout}");
    assert!(fs::read_dir(d.join("cache")).unwrap().count() > 0);

    let train = ["--epochs", "2", "--hidden", "8", "--buckets", "512"];
    for out in ["m1", "m2"] {
        let mut a = vec!["train", "--data", "hybrid.tsv", "--out", out];
        a.extend(train);
        ok(d, &a);
    }
    assert_eq!(
        fs::read(d.join("m1/model.json")).unwrap(),
        fs::read(d.join("m2/model.json")).unwrap()
    );

    ok(
        d,
        &[
            "loss-profile",
            "--model",
            "m1",
            "--data",
            "hybrid.tsv",
            "--out",
            "lp",
        ],
    );
    for kind in ["cardinality", "aldi"] {
        assert!(d.join(format!("lp/profile-{kind}.svg")).is_file());
    }
    ok(
        d,
        &[
            "schedule",
            "--data",
            "hybrid.tsv",
            "--losses",
            "lp/losses.tsv",
            "--kind",
            "aldi",
            "--seed",
            "7",
            "--out",
            "s1.json",
        ],
    );
    ok(
        d,
        &[
            "schedule",
            "--data",
            "hybrid.tsv",
            "--losses",
            "lp/losses.tsv",
            "--kind",
            "aldi",
            "--seed",
            "7",
            "--out",
            "s2.json",
        ],
    );
    assert_eq!(
        fs::read(d.join("s1.json")).unwrap(),
        fs::read(d.join("s2.json")).unwrap()
    );

    let mut a = vec![
        "curriculum-train",
        "--data",
        "hybrid.tsv",
        "--schedule",
        "s1.json",
        "--passes-per-stage",
        "2",
        "--out",
        "cm",
    ];
    a.extend(train);
    ok(d, &a);
    assert!(d.join("cm/training_log.jsonl").is_file());

    ok(
        d,
        &[
            "evaluate",
            "--gold",
            "test_gold.tsv",
            "--model",
            "cm",
            "--labelset",
            "dev8",
            "--out",
            "ev",
        ],
    );
    let report = json(d.join("ev/report.json"));
    assert_eq!(
        report["labelset"],
        serde_json::json!(["DZ", "EG", "JO", "PS", "SD", "SY", "TN", "YE"])
    );

    ok(
        d,
        &[
            "report",
            "--data",
            "hybrid.tsv",
            "--cartography",
            "carto",
            "--model",
            "m1",
            "--group",
            "pool=pool.tsv",
            "--out",
            "rep",
        ],
    );
    for f in [
        "cartography_map.svg",
        "cardinality_by_aldi.svg",
        "cardinality_by_aldi.tsv",
        "prediction_counts.tsv",
    ] {
        assert!(d.join("rep").join(f).is_file(), "{f}");
    }
    assert_eq!(code(d, &["report", "--out", "rep2"]), 1);
}

#[test]
fn evaluate_copy_gold_is_perfect() {
    let tmp = workspace();
    let d = tmp.path();
    ok(
        d,
        &[
            "evaluate",
            "--gold",
            "test_gold.tsv",
            "--predictions",
            "test_gold.tsv",
            "--labelset",
            "dev8",
            "--out",
            "ev",
        ],
    );
    let r = json(d.join("ev/report.json"));
    for k in ["macro_precision", "macro_recall", "macro_f1", "accuracy"] {
        assert_eq!(r[k], 1.0, "{k}");
    }
    // Predictions missing a gold id are a data error.
    fs::write(
        d.join("few.tsv"),
        fs::read_to_string(d.join("pool_gold.tsv")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        code(
            d,
            &[
                "evaluate",
                "--gold",
                "test_gold.tsv",
                "--predictions",
                "few.tsv",
                "--out",
                "ev2"
            ]
        ),
        2
    );
}

#[test]
fn baseline_top_p_from_distributions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let samples = vec![Sample::new("a", "one"), Sample::new("b", "two")];
    save_corpus(&d.join("corpus.tsv"), &samples, CorpusFormat::Tsv).unwrap();
    let header: Vec<&str> = std::iter::once("id")
        .chain(Dialect::ALL.iter().map(|d| d.code()))
        .collect();
    let uniform = vec![format!("{}", 1.0 / 18.0); 18].join("\t");
    let mut peaked = vec!["0".to_string(); 18];
    peaked[Dialect::EG.index()] = "0.95".into();
    peaked[Dialect::SD.index()] = "0.05".into();
    fs::write(
        d.join("dist.tsv"),
        format!(
            "{}\na\t{uniform}\nb\t{}\n",
            header.join("\t"),
            peaked.join("\t")
        ),
    )
    .unwrap();
    ok(
        d,
        &[
            "baseline-topp",
            "--distributions",
            "dist.tsv",
            "--corpus",
            "corpus.tsv",
            "--top-p",
            "0.9",
            "--out",
            "p.tsv",
        ],
    );
    let out = dialectid::corpus::load_labeled(&d.join("p.tsv")).unwrap();
    assert_eq!(out[0].cardinality(), 17);
    assert_eq!(out[1].labels, LabelVector::from_dialects([Dialect::EG]));
    assert_eq!(out[1].provenance(), Provenance::Predicted);
    assert_eq!(
        code(
            d,
            &[
                "baseline-topp",
                "--distributions",
                "dist.tsv",
                "--corpus",
                "corpus.tsv",
                "--top-p",
                "1.5",
                "--out",
                "q.tsv"
            ]
        ),
        1
    );
}

#[test]
fn config_file_precedence_and_dry_run() {
    let tmp = workspace();
    let d = tmp.path();
    fs::write(d.join("run.conf"), "# training\nepochs = 3\nseed = 5\n").unwrap();
    let stdout = ok(
        d,
        &[
            "--config",
            "run.conf",
            "--dry-run",
            "train",
            "--data",
            "pool_gold.tsv",
            "--seed",
            "9",
            "--out",
            "m",
        ],
    );
    assert!(!d.join("m").exists(), "dry run wrote output");
    let plan: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(plan["dry_run"], true);
    assert_eq!(plan["resolved"]["epochs"]["value"], "3");
    assert_eq!(plan["resolved"]["epochs"]["source"], "config");
    assert_eq!(plan["resolved"]["seed"]["value"], "9");
    assert_eq!(plan["resolved"]["seed"]["source"], "flag");
    assert_eq!(plan["resolved"]["batch_size"]["source"], "default");
    assert_eq!(plan["seeds"]["seed"], 9);

    fs::write(d.join("bad.conf"), "epochz = 3\n").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "--config",
                "bad.conf",
                "train",
                "--data",
                "pool_gold.tsv",
                "--out",
                "m"
            ]
        ),
        1
    );
    assert_eq!(
        code(
            d,
            &[
                "--config",
                "missing.conf",
                "train",
                "--data",
                "pool_gold.tsv",
                "--out",
                "m"
            ]
        ),
        1
    );
    fs::write(d.join("badval.conf"), "epochs = many\n").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "--config",
                "badval.conf",
                "train",
                "--data",
                "pool_gold.tsv",
                "--out",
                "m"
            ]
        ),
        1
    );
}

#[test]
fn exit_codes() {
    let tmp = workspace();
    let d = tmp.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "pool_gold.tsv",
                "--out",
                "m",
                "--no-such-flag"
            ]
        ),
        1
    );
    assert_eq!(code(d, &["frobnicate"]), 1);
    assert_eq!(code(d, &["train", "--data", "nope.tsv", "--out", "m"]), 2);
    assert_eq!(
        code(
            d,
            &[
                "train",
                "--data",
                "pool_gold.tsv",
                "--out",
                "m",
                "--val-fraction",
                "1.5"
            ]
        ),
        1
    );
    assert_eq!(
        code(
            d,
            &[
                "pseudo-label",
                "--corpus",
                "pool.tsv",
                "--source",
                "gpt",
                "--replay",
                "replay.jsonl",
                "--live",
                "--out",
                "x.tsv"
            ]
        ),
        1
    );
    // Live mode without the credential fails as an external error, before
    // any request is made.
    assert_eq!(
        code(
            d,
            &[
                "pseudo-label",
                "--corpus",
                "pool.tsv",
                "--source",
                "gpt",
                "--live",
                "--out",
                "x.tsv"
            ]
        ),
        3
    );
    assert!(!d.join("x.tsv").exists());
    // Malformed corpus rows are data errors.
    fs::write(
        d.join("broken.tsv"),
        "id\ttext\tgeo\taldi\nz\thello\tXX\t0.5\n",
    )
    .unwrap();
    assert_eq!(
        code(d, &["build-binary", "--corpus", "broken.tsv", "--out", "b"]),
        2
    );
}

#[test]
fn replay_without_fixture_for_a_sample_is_a_data_error() {
    let tmp = workspace();
    let d = tmp.path();
    fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "pseudo-label",
                "--corpus",
                "pool.tsv",
                "--source",
                "gpt",
                "--replay",
                "empty.jsonl",
                "--out",
                "g.tsv"
            ]
        ),
        2
    );
}
