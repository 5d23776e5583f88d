//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::net::TcpListener;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dialectid::acceptability::{build_binary_dataset, neighbours, AdjacencyTable, BuildMode};
use dialectid::cartography::{
    compute_metrics, CorrectnessBin, TraceEntry, TraceHeader, TrainingTrace,
};
use dialectid::corpus::{Dialect, LabelVector, Route, Sample, NUM_DIALECTS};
use dialectid::curriculum::{
    build_schedule, order_buckets, partition, run_curriculum, Bucket, BucketKind, BucketSpec,
    ReplayRule,
};
use dialectid::evaluation::{
    evaluate_run, macro_prf, top_p_labels, LabelSet, SingleLabelDistribution,
};
use dialectid::pseudo_label::{
    aggregate, build_hybrid_dataset, parse_llm_response, route, serialize_llm_response,
    train_bank_models, BinaryClassifierBank, ClientMode, HttpBackend, LlmAnnotationClient,
    PseudoLabelError, ReplayFixtures, DEFAULT_BANK_THRESHOLD, DEFAULT_TEMPLATE, PROMPT_ORDER,
};
use dialectid::synthetic::{cardinality_skewed_labels, generate, SyntheticConfig};
use dialectid::trainer::{
    per_example_loss, predict_from_logits, split_indices, train_multilabel, Cadence, Encoder,
    Model, ReferenceConfig, ReferenceEncoder, TraceConfig, TrainConfig,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn c1_cartography_oracle() -> Outcome {
    let header = TraceHeader {
        cadence_steps: 1,
        epochs: 4,
        warmup_epochs_ignored: 0,
        checkpoints_per_epoch: 1,
    };
    let hand = TrainingTrace::new(
        header,
        vec![TraceEntry::binary("h", true, vec![0.9, 0.8, 0.6, 0.7])],
    )
    .map_err(|e| e.to_string())?;
    let r = &compute_metrics(&hand).map_err(|e| e.to_string())?[0];
    let std = 0.0125f64.sqrt();
    check!(
        (r.confidence - 0.75).abs() < 1e-12
            && (r.variability - std).abs() < 1e-12
            && r.correctness == 1.0,
        "hand case gave ({}, {}, {})",
        r.confidence,
        r.variability,
        r.correctness
    );

    let mut g = rng(1);
    let mut worst = 0.0f64;
    for t in 0..200 {
        let cpe = g.random_range(1..=5usize);
        let epochs = g.random_range(10usize.div_ceil(cpe)..=50 / cpe);
        let warmup = g.random_range(0..epochs);
        let len = cpe * epochs;
        let header = TraceHeader {
            cadence_steps: 10,
            epochs,
            warmup_epochs_ignored: warmup,
            checkpoints_per_epoch: cpe,
        };
        let entries: Vec<TraceEntry> = (0..5)
            .map(|i| {
                let mut probs: Vec<f64> = (0..len).map(|_| g.random::<f64>()).collect();
                if i == 0 {
                    probs[len - 1] = 0.5;
                }
                TraceEntry::binary(format!("t{t}-{i}"), g.random::<bool>(), probs)
            })
            .collect();
        let trace = TrainingTrace::new(header, entries.clone()).map_err(|e| e.to_string())?;
        let records = compute_metrics(&trace).map_err(|e| e.to_string())?;
        for e in &entries {
            let rec = records
                .iter()
                .find(|r| r.id == e.id)
                .ok_or("record missing")?;
            let w = &e.probs[warmup * cpe..];
            let n = w.len() as f64;
            let (mut s, mut s2, mut hits) = (0.0, 0.0, 0usize);
            for &p in w {
                s += p;
                s2 += p * p;
                if p > 0.5 {
                    hits += 1;
                }
            }
            let mean = s / n;
            let sd = (s2 / n - mean * mean).max(0.0).sqrt();
            let err = (rec.confidence - mean)
                .abs()
                .max((rec.variability - sd).abs())
                .max((rec.correctness - hits as f64 / n).abs());
            worst = worst.max(err);
        }
    }
    check!(worst <= 1e-12, "max deviation {worst:e} on random traces");
    Ok(format!("200 traces, max deviation {worst:.1e}"))
}

fn c2_bins() -> Outcome {
    let ranges: [(&str, fn(f64) -> bool); 7] = [
        ("0", |c| c == 0.0),
        ("]0,0.2[", |c| c > 0.0 && c < 0.2),
        ("[0.2,0.4[", |c| (0.2..0.4).contains(&c)),
        ("[0.4,0.6[", |c| (0.4..0.6).contains(&c)),
        ("[0.6,0.8[", |c| (0.6..0.8).contains(&c)),
        ("[0.8,1[", |c| (0.8..1.0).contains(&c)),
        ("1", |c| c == 1.0),
    ];
    let mut g = rng(2);
    let mut values: Vec<f64> = vec![
        0.0,
        1.0,
        0.2,
        0.4,
        0.6,
        0.8,
        f64::MIN_POSITIVE,
        1.0 - f64::EPSILON,
    ];
    while values.len() < 10_000 {
        let v = match g.random_range(0..4) {
            0 => g.random::<f64>(),
            1 => g.random_range(0..=25) as f64 / 25.0,
            2 => g.random_range(0..=7) as f64 / 7.0,
            _ => g.random_range(0..=50) as f64 / 50.0,
        };
        values.push(v);
    }
    let mut counts = [0usize; 7];
    for &v in &values {
        let hits: Vec<usize> = (0..7).filter(|&k| (ranges[k].1)(v)).collect();
        check!(hits.len() == 1, "{v} is in {} bins", hits.len());
        let bin = CorrectnessBin::of(v);
        check!(
            bin.index() == hits[0] && bin.label() == ranges[hits[0]].0,
            "{v} binned as {bin}, expected {}",
            ranges[hits[0]].0
        );
        counts[hits[0]] += 1;
    }
    check!(CorrectnessBin::of(0.0).label() == "0", "0 not in bin \"0\"");
    check!(CorrectnessBin::of(1.0).label() == "1", "1 not in bin \"1\"");
    Ok(format!(
        "{} values, per-bin counts {counts:?}",
        values.len()
    ))
}

fn random_corpus(n: usize, seed: u64) -> Vec<Sample> {
    let mut g = rng(seed);
    (0..n)
        .map(|i| {
            let aldi = match g.random_range(0..4) {
                0 => g.random_range(0..=9) as f64 / 9.0,
                1 => 7.0 / 9.0,
                _ => g.random::<f64>(),
            };
            let mut s = Sample::new(format!("r{i:04}"), format!("sentence {i}")).with_aldi(aldi);
            if g.random::<f64>() > 0.05 {
                s = s.with_geo(Dialect::ALL[g.random_range(0..NUM_DIALECTS)]);
            }
            s
        })
        .collect()
}

fn c3_negative_selection() -> Outcome {
    let corpus = random_corpus(1000, 3);
    let table = AdjacencyTable::shipped();
    let mut violations = 0;
    let mut negatives = 0;
    for d in Dialect::ALL {
        let near = neighbours(d, &table).map_err(|e| e.to_string())?;
        let ds = build_binary_dataset(d, &corpus, &table, BuildMode::PseudoLabel)
            .map_err(|e| e.to_string())?;
        for s in &ds.negatives {
            negatives += 1;
            let aldi = s.aldi.ok_or("negative without aldi")?;
            let ok_aldi = aldi * 9.0 > 7.0 && aldi > 7.0 / 9.0;
            let ok_geo = s.geo.is_some_and(|g| g != d && !near.contains(&g));
            if !(ok_aldi && ok_geo) {
                violations += 1;
            }
        }
        let cart = build_binary_dataset(d, &corpus, &table, BuildMode::Cartography)
            .map_err(|e| e.to_string())?;
        let pos: HashSet<&str> = cart.positives.iter().map(|s| s.id.as_str()).collect();
        let neg: HashSet<&str> = cart.negatives.iter().map(|s| s.id.as_str()).collect();
        let all: HashSet<&str> = corpus.iter().map(|s| s.id.as_str()).collect();
        if !pos.is_disjoint(&neg) || pos.union(&neg).copied().collect::<HashSet<_>>() != all {
            violations += 1;
        }
        if pos.len() + neg.len() != corpus.len() {
            violations += 1;
        }
    }
    check!(violations == 0, "{violations} violations");
    Ok(format!(
        "{negatives} negatives over 18 dialects, zero violations"
    ))
}

fn c4_routing() -> Outcome {
    let mut grid: Vec<(f64, Route)> = (0..=900)
        .map(|k| {
            let expect = if k < 100 || k > 700 {
                Route::BinaryClassifiers
            } else {
                Route::Gpt
            };
            (k as f64 / 900.0, expect)
        })
        .collect();
    grid.push((1.0 / 9.0, Route::Gpt));
    grid.push((7.0 / 9.0, Route::Gpt));
    for (a, want) in &grid {
        check!(
            route(*a) == *want,
            "aldi {a} routed to {:?}, expected {want:?}",
            route(*a)
        );
    }
    let mut g = rng(4);
    for _ in 0..100 {
        let v = LabelVector::from_bits(g.random_range(1..1u32 << NUM_DIALECTS));
        let a = g.random::<f64>();
        check!(aggregate(a, v, v).0 == v, "aggregate(a, v, v) != v at {a}");
    }
    Ok(format!("{} grid points and 100 vectors", grid.len()))
}

fn spec_of(sizes: &[usize]) -> BucketSpec {
    let mut next = 0;
    BucketSpec {
        kind: BucketKind::Cardinality,
        buckets: sizes
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let members = (0..n)
                    .map(|_| {
                        next += 1;
                        format!("s{next:04}")
                    })
                    .collect();
                Bucket {
                    key: k + 1,
                    label: format!("c={}", k + 1),
                    members,
                }
            })
            .collect(),
    }
}

fn c5_schedule() -> Outcome {
    let spec = spec_of(&[100, 50, 30]);
    let mut g = rng(5);
    let mut losses = BTreeMap::new();
    for b in &spec.buckets {
        for id in &b.members {
            losses.insert(id.clone(), 0.2 * b.key as f64 + g.random_range(-0.05..0.05));
        }
    }
    let order = order_buckets(&spec, &losses).map_err(|e| e.to_string())?;
    check!(order == vec![1, 2, 3], "order {order:?}");
    for (name, f) in [
        ("x10", (|l: f64| l * 10.0) as fn(f64) -> f64),
        ("+1", |l: f64| l + 1.0),
    ] {
        let t: BTreeMap<String, f64> = losses.iter().map(|(k, v)| (k.clone(), f(*v))).collect();
        let o = order_buckets(&spec, &t).map_err(|e| e.to_string())?;
        check!(o == order, "order changed under {name}: {o:?}");
    }
    let sched =
        build_schedule(&spec, &order, 11, ReplayRule::MinPrior).map_err(|e| e.to_string())?;
    let shape: Vec<(usize, Vec<usize>)> = sched
        .stages
        .iter()
        .map(|s| (s.new.len(), s.replay.iter().map(|r| r.ids.len()).collect()))
        .collect();
    check!(
        shape == vec![(100, vec![]), (50, vec![50]), (30, vec![30, 30])],
        "stage shapes {shape:?}"
    );
    for st in &sched.stages {
        for draw in &st.replay {
            let members: HashSet<&String> = spec
                .get(draw.bucket)
                .ok_or("unknown bucket")?
                .members
                .iter()
                .collect();
            let uniq: HashSet<&String> = draw.ids.iter().collect();
            check!(
                uniq.len() == draw.ids.len(),
                "duplicate replay id in stage {}",
                st.stage
            );
            check!(
                draw.ids.iter().all(|i| members.contains(i)),
                "replay id outside its bucket"
            );
        }
    }
    let again =
        build_schedule(&spec, &order, 11, ReplayRule::MinPrior).map_err(|e| e.to_string())?;
    check!(again == sched, "same seed gave a different schedule");
    let other =
        build_schedule(&spec, &order, 12, ReplayRule::MinPrior).map_err(|e| e.to_string())?;
    check!(other != sched, "different seeds gave identical draws");
    Ok("stages 100 / 50+50 / 30+30+30, seeded draws without replacement".into())
}

fn c6_top_p() -> Outcome {
    let uniform =
        SingleLabelDistribution::new([1.0 / 18.0; NUM_DIALECTS]).map_err(|e| e.to_string())?;
    let n = top_p_labels(&uniform, 0.9)
        .map_err(|e| e.to_string())?
        .cardinality();
    check!(n == 17, "uniform at 0.9 gave {n} labels");
    let mut p = [0.05 / 15.0; NUM_DIALECTS];
    p[..3].copy_from_slice(&[0.6, 0.3, 0.05]);
    let skew = SingleLabelDistribution::new(p).map_err(|e| e.to_string())?;
    let n = top_p_labels(&skew, 0.9)
        .map_err(|e| e.to_string())?
        .cardinality();
    check!(n == 2, "(0.6, 0.3, 0.05, ...) at 0.9 gave {n} labels");
    let mut g = rng(6);
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..NUM_DIALECTS)
            .map(|_| g.random::<f64>().powi(3))
            .collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let d = SingleLabelDistribution::from_slice(&probs).map_err(|e| e.to_string())?;
        let mass = g.random_range(0.01..=1.0);
        let v = top_p_labels(&d, mass).map_err(|e| e.to_string())?;
        check!(v.get(d.argmax()), "argmax missing at p = {mass}");
    }
    Ok("uniform -> 17, skewed -> 2, argmax kept in 1000 draws".into())
}

fn c7_metrics() -> Outcome {
    let preds = vec![vec![true, false], vec![true, true]];
    let golds = vec![vec![true, true], vec![false, true]];
    let f1 = macro_prf(&preds, &golds).map_err(|e| e.to_string())?.f1;
    check!(f1 == 2.0 / 3.0, "worked example macro F1 {f1}");

    let mut g = rng(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = g.random_range(1..40);
        let width = g.random_range(1..=NUM_DIALECTS);
        let (dp, dg) = (g.random::<f64>(), g.random::<f64>());
        let preds: Vec<Vec<bool>> = (0..rows)
            .map(|_| (0..width).map(|_| g.random_bool(dp)).collect())
            .collect();
        let golds: Vec<Vec<bool>> = (0..rows)
            .map(|_| (0..width).map(|_| g.random_bool(dg)).collect())
            .collect();
        let m = macro_prf(&preds, &golds).map_err(|e| e.to_string())?;
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for k in 0..width {
            let (mut tp, mut fp, mut fn_) = (0.0f64, 0.0f64, 0.0f64);
            for r in 0..rows {
                match (preds[r][k], golds[r][k]) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
            sp += p;
            sr += r;
            sf += f;
        }
        let w = width as f64;
        worst = worst
            .max((m.precision - sp / w).abs())
            .max((m.recall - sr / w).abs())
            .max((m.f1 - sf / w).abs());
    }
    check!(worst <= 1e-12, "max deviation {worst:e}");
    Ok(format!(
        "worked example 2/3, 1000 random instances, max deviation {worst:.1e}"
    ))
}

fn small_encoder(seed: u64, extra_layers: usize) -> ReferenceEncoder {
    let cfg = ReferenceConfig {
        buckets: 32,
        hidden: 4,
        extra_layers,
        ngram_min: 2,
        ngram_max: 3,
    };
    ReferenceEncoder::new(cfg, seed).expect("valid config")
}

fn c8_trainer() -> Outcome {
    let mut g = rng(8);
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let mut model = Model::new(small_encoder(inst, (inst % 3) as usize), 3, inst);
        let texts = ["kata mira", "sulu bana tika", "ra", "mimi lana kora"];
        let feats: Vec<_> = texts.iter().map(|t| model.featurize(t)).collect();
        let ys: Vec<Vec<f64>> = feats
            .iter()
            .map(|_| (0..3).map(|_| g.random_range(0..2) as f64).collect())
            .collect();
        let batch: Vec<_> = feats
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x, y.as_slice()))
            .collect();
        let (_, grad) = model.loss_and_gradient(&batch, None);
        let h = 1e-5;
        for i in 0..model.param_count() {
            let orig = *model.param_mut(i);
            *model.param_mut(i) = orig + h;
            let up = model.batch_loss(&batch);
            *model.param_mut(i) = orig - h;
            let down = model.batch_loss(&batch);
            *model.param_mut(i) = orig;
            let num = (up - down) / (2.0 * h);
            let scale = grad[i].abs().max(num.abs());
            if scale > 1e-8 {
                worst = worst.max((grad[i] - num).abs() / scale);
            }
        }
    }
    check!(worst < 1e-4, "gradient relative error {worst:e}");

    let corpus = generate(&SyntheticConfig {
        per_dialect: 8,
        ..SyntheticConfig::default()
    });
    let cfg = TrainConfig {
        epochs: 2,
        frozen_bottom_layers: 1,
        encoder: ReferenceConfig {
            buckets: 256,
            hidden: 8,
            extra_layers: 1,
            ..ReferenceConfig::default()
        },
        ..TrainConfig::default()
    };
    let init = ReferenceEncoder::new(cfg.encoder, cfg.seed).map_err(|e| e.to_string())?;
    let trained =
        train_multilabel(&corpus.gold(), init.clone(), &cfg).map_err(|e| e.to_string())?;
    let groups = init.layer_groups();
    let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    check!(
        bits(&init.params()[groups[0].clone()])
            == bits(&trained.model.encoder.params()[groups[0].clone()]),
        "frozen group changed during training"
    );
    check!(
        bits(&init.params()[groups[1].clone()])
            != bits(&trained.model.encoder.params()[groups[1].clone()]),
        "unfrozen group did not train"
    );

    for _ in 0..1000 {
        let logits: Vec<f64> = (0..NUM_DIALECTS)
            .map(|_| g.random_range(-6.0..6.0))
            .collect();
        let mut t = [g.random_range(0.01..0.99), g.random_range(0.01..0.99)];
        t.sort_by(f64::total_cmp);
        let low = predict_from_logits(&logits, t[0]);
        let high = predict_from_logits(&logits, t[1]);
        check!(
            high.is_subset_of(low),
            "threshold {} set not within threshold {} set",
            t[1],
            t[0]
        );
    }
    Ok(format!(
        "max gradient relative error {worst:.1e}; frozen group bit-identical; threshold monotone"
    ))
}

fn c9_end_to_end() -> Outcome {
    let start = Instant::now();
    let corpus = generate(&SyntheticConfig::default());
    check!(
        corpus.len() == 1800,
        "corpus has {} sentences",
        corpus.len()
    );
    let (pool_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let pool = corpus.select(&pool_idx);
    let test = corpus.select(&test_idx).gold();

    let datasets = dialectid::acceptability::build_all(
        &pool.samples,
        &AdjacencyTable::shipped(),
        BuildMode::PseudoLabel,
    )
    .map_err(|e| e.to_string())?;
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
    )
    .map_err(|e| e.to_string())?;
    let bank = BinaryClassifierBank::from_models(
        models.into_iter().map(|(d, m, _)| (d, m)).collect(),
        DEFAULT_BANK_THRESHOLD,
    );
    let client = LlmAnnotationClient::replay(pool.replay_fixtures(0.05, 3)).with_retries(2);
    let hybrid = build_hybrid_dataset(&pool.samples, &bank, &client).map_err(|e| e.to_string())?;

    let encoder = || ReferenceEncoder::new(cfg.encoder, cfg.seed).expect("valid config");
    let base = train_multilabel(&hybrid.samples, encoder(), &cfg).map_err(|e| e.to_string())?;
    let all = LabelSet::all();
    let f_base = evaluate_run(&base.model, &test, &all, cfg.inference_threshold)
        .map_err(|e| e.to_string())?
        .macro_f1;

    let losses = per_example_loss(&base.model, &hybrid.samples);
    let mut curricula = Vec::new();
    for kind in [BucketKind::Cardinality, BucketKind::Aldi] {
        let spec = partition(&hybrid.samples, kind).map_err(|e| e.to_string())?;
        let order = order_buckets(&spec, &losses).map_err(|e| e.to_string())?;
        let schedule =
            build_schedule(&spec, &order, 7, ReplayRule::MinPrior).map_err(|e| e.to_string())?;
        let run = run_curriculum(&schedule, &hybrid.samples, encoder(), &cfg, cfg.epochs)
            .map_err(|e| e.to_string())?;
        let f = evaluate_run(&run.model, &test, &all, cfg.inference_threshold)
            .map_err(|e| e.to_string())?
            .macro_f1;
        curricula.push((kind, f));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "no-curriculum {f_base:.4}, {}, {secs:.1}s",
        curricula
            .iter()
            .map(|(k, f)| format!("{k} {f:.4} (gap {:.4})", f_base - f))
            .collect::<Vec<_>>()
            .join(", ")
    );
    check!(f_base >= 0.95, "baseline below 0.95: {detail}");
    check!(
        curricula.iter().all(|(_, f)| (f_base - f).abs() <= 0.02),
        "curriculum outside 0.02: {detail}"
    );
    check!(secs < 180.0, "too slow: {detail}");
    Ok(detail)
}

fn c10_direction() -> Outcome {
    let corpus = generate(&SyntheticConfig {
        msa_fraction: 0.0,
        region_fraction: 0.3,
        ..SyntheticConfig::default()
    });
    let (train_idx, test_idx) = split_indices(corpus.len(), 0.2, 11);
    let pool = corpus.select(&train_idx);
    let test = corpus.select(&test_idx).gold();
    let labels = cardinality_skewed_labels(&pool, 0.2, 5);
    let cfg = TrainConfig::default();
    let encoder = || ReferenceEncoder::new(cfg.encoder, cfg.seed).expect("valid config");
    let all = LabelSet::all();
    let base = train_multilabel(&labels, encoder(), &cfg).map_err(|e| e.to_string())?;
    let r_base = evaluate_run(&base.model, &test, &all, cfg.inference_threshold)
        .map_err(|e| e.to_string())?
        .macro_recall;
    let losses = per_example_loss(&base.model, &labels);
    let spec = partition(&labels, BucketKind::Cardinality).map_err(|e| e.to_string())?;
    let order = order_buckets(&spec, &losses).map_err(|e| e.to_string())?;
    let schedule =
        build_schedule(&spec, &order, 7, ReplayRule::MinPrior).map_err(|e| e.to_string())?;
    let run = run_curriculum(&schedule, &labels, encoder(), &cfg, cfg.epochs)
        .map_err(|e| e.to_string())?;
    let r_cur = evaluate_run(&run.model, &test, &all, cfg.inference_threshold)
        .map_err(|e| e.to_string())?
        .macro_recall;
    let detail =
        format!("macro recall: cardinality curriculum {r_cur:.4}, no curriculum {r_base:.4}");
    check!(r_cur >= r_base, "{detail}");
    Ok(detail)
}

fn country_object(keys: &[Dialect], value: impl Fn(Dialect) -> String) -> String {
    let body: Vec<String> = keys
        .iter()
        .map(|d| format!("\"{}\": {}", d.country_name(), value(*d)))
        .collect();
    format!("{{{}}}", body.join(", "))
}

fn c11_llm_client() -> Outcome {
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let connections = Arc::new(AtomicUsize::new(0));
    {
        let connections = Arc::clone(&connections);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                connections.fetch_add(1, Ordering::SeqCst);
                drop(stream);
            }
        });
    }
    let samples: Vec<Sample> = (0..20)
        .map(|i| Sample::new(format!("x{i}"), format!("tweet number {i}")).with_aldi(0.5))
        .collect();
    let refs: Vec<&Sample> = samples.iter().collect();

    // The stub must notice a real attempt, or a zero count proves nothing.
    let backend = HttpBackend::new(
        &format!("http://{addr}/v1/chat/completions"),
        "stub",
        "k".into(),
        Duration::from_secs(5),
    )
    .map_err(|e| e.to_string())?;
    let live = LlmAnnotationClient::new(ClientMode::Live(Box::new(backend)), DEFAULT_TEMPLATE)
        .map_err(|e| e.to_string())?
        .with_retries(0);
    let err = live
        .gpt_vector(&samples[0])
        .err()
        .ok_or("live call to the stub succeeded")?;
    check!(err.is_external(), "live failure not external: {err}");
    let deadline = Instant::now() + Duration::from_secs(2);
    while connections.load(Ordering::SeqCst) == 0 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(10));
    }
    let seen = connections.load(Ordering::SeqCst);
    check!(seen >= 1, "stub saw no connection from the live client");

    let good = |i: usize| serialize_llm_response(LabelVector::from_bits(1 << (i % NUM_DIALECTS)));
    let mut fixtures = ReplayFixtures::new();
    for (i, s) in samples.iter().enumerate() {
        fixtures.insert(s.id.clone(), vec![good(i)]);
    }
    let replay = LlmAnnotationClient::replay(fixtures);
    let results = replay.gpt_vectors(&refs);
    check!(results.iter().all(Result::is_ok), "replay failed");
    std::thread::sleep(Duration::from_millis(50));
    check!(
        connections.load(Ordering::SeqCst) == seen && replay.stats().endpoint_calls == 0,
        "replay mode touched the network"
    );

    let mut fixtures = ReplayFixtures::new();
    fixtures.insert("x0", vec!["Sorry, I cannot tell.".to_string(), good(0)]);
    let retrying = LlmAnnotationClient::replay(fixtures).with_retries(2);
    let v = retrying
        .gpt_vector(&samples[0])
        .map_err(|e| e.to_string())?;
    check!(
        v == LabelVector::from_bits(1),
        "retried answer parsed wrong"
    );
    check!(
        retrying.stats().retries == 1,
        "{} retries instead of one",
        retrying.stats().retries
    );

    let seventeen = country_object(&PROMPT_ORDER[..17], |_| "1".into());
    let non_binary = country_object(&PROMPT_ORDER, |d| {
        if d == PROMPT_ORDER[4] {
            "2".into()
        } else {
            "0".into()
        }
    });
    let k17 = parse_llm_response(&seventeen)
        .err()
        .ok_or("17-key response accepted")?;
    let kbad = parse_llm_response(&non_binary)
        .err()
        .ok_or("non-binary response accepted")?;
    check!(
        k17.kind() != kbad.kind(),
        "both fixtures raise {}",
        k17.kind()
    );
    let mut fixtures = ReplayFixtures::new();
    fixtures.insert("x0", vec![seventeen]);
    fixtures.insert("x1", vec![non_binary]);
    let strict = LlmAnnotationClient::replay(fixtures).with_retries(0);
    let kind = |r: Result<LabelVector, PseudoLabelError>| match r {
        Err(PseudoLabelError::RetriesExhausted { last, .. }) => Ok(last.kind()),
        other => Err(format!("unexpected {other:?}")),
    };
    let (a, b) = (
        kind(strict.gpt_vector(&samples[0]))?,
        kind(strict.gpt_vector(&samples[1]))?,
    );
    check!(a != b, "client reports {a} for both");
    Ok(format!(
        "replay made 0 connections (live probe made {seen}); one retry; {a} vs {b}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("cartography oracle", c1_cartography_oracle),
        ("bin partition", c2_bins),
        ("negative selection", c3_negative_selection),
        ("aggregation routing", c4_routing),
        ("curriculum schedule", c5_schedule),
        ("top-p conversion", c6_top_p),
        ("metrics oracle", c7_metrics),
        ("trainer correctness", c8_trainer),
        ("end-to-end smoke", c9_end_to_end),
        ("direction of effect", c10_direction),
        ("llm client contract", c11_llm_client),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
