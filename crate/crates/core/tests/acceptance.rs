//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criteria 5, 6 and 8 share one synthetic corpus and one pair of trained
//! models; the whole run takes several minutes in release mode.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::Rng;

use fs2net::classifier::{build_default_set, classify_all, PredictionRow, PredictionTable};
use fs2net::eval::{compute_metrics, format_percent, run_protocol, NamedDataset, Protocol, ProtocolConfig};
use fs2net::fiber::{parse_dataset, render_dataset};
use fs2net::nn::{adam_update, AdamConfig, AdamState};
use fs2net::pairing::{batch_stream, ClassPools, BATCH_SIZE};
use fs2net::preprocess::{kept_len, preprocess_dataset, SEQ_LEN};
use fs2net::rng::{stream, Domain};
use fs2net::siamese::tiny_gradcheck;
use fs2net::trainer::{parse_checkpoint, render_checkpoint, save_checkpoint, load_checkpoint, TrainConfig, Trainer};
use fs2net::{
    center_fiber, curvature_scores, generate_corpus, prune_and_pad, split_dataset, Axis, Fiber, FiberDataset,
    GenConfig, Level, Point3, ProcessedFiber, SiameseModel, TaggedRotation, TowerConfig,
};

const CORPUS_SEED: u64 = 0;
const SPLIT_SEED: u64 = 1;
const TRAIN_SEED: u64 = 1;
const DEFAULTS_SEED: u64 = 1;
const ITERATIONS: usize = 1000;
const RESUME_AT: usize = 500;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

struct Report {
    failed: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, outcome: Check) {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            self.failed += 1;
        }
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        worst = worst.max(tiny_gradcheck(seed, 1e-5)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst < 1e-5 && secs < 60.0, format!("max relative error {worst:.3e} over 20 models in {secs:.1}s")))
}

fn random_fibers(n: usize, seed: u64) -> Vec<ProcessedFiber> {
    let mut r = stream(seed, Domain::Batch, 0);
    (0..n)
        .map(|i| {
            let len = r.random_range(36..=120);
            let pts = (0..len)
                .map(|_| Point3::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)))
                .collect();
            prune_and_pad(&Fiber::new(format!("r{i}"), pts, None).unwrap()).unwrap()
        })
        .collect()
}

fn siamese_invariants() -> Check {
    let model = SiameseModel::new(TowerConfig::default(), Level::Coarse, 5)?;
    let fibers = random_fibers(200, 5);
    let symmetric = fibers
        .chunks(2)
        .filter(|p| model.score_pair(&p[0], &p[1]).to_bits() == model.score_pair(&p[1], &p[0]).to_bits())
        .count();
    let selfs: Vec<f64> = fibers[..100].iter().map(|f| model.score_pair(f, f)).collect();
    let spread = selfs.iter().fold(0.0f64, |m, s| m.max((s - selfs[0]).abs()));
    Ok((
        symmetric == 100 && spread <= 1e-12,
        format!("{symmetric}/100 pairs symmetric bitwise; self-score spread {spread:.1e}"),
    ))
}

fn batch_composition() -> Check {
    let ds = generate_corpus(&GenConfig {
        per_white_class: 20,
        seed: 3,
        ..GenConfig::default()
    })?;
    let fibers = preprocess_dataset(&ds)?;
    let class_of = |level: Level, i: usize| level.class_of(fibers[i].label.unwrap()).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for (level, similar, batches) in [(Level::Fine, 4, 1000usize), (Level::Coarse, 5, 1000)] {
        let pools = ClassPools::new(&fibers, level);
        let k = level.num_classes();
        let mut anchors = vec![0usize; k];
        let mut bad = 0;
        for batch in batch_stream(&pools, 9)?.take(batches) {
            let a = batch.anchor_class;
            anchors[a] += 1;
            let sim: Vec<_> = batch.pairs.iter().filter(|p| p.target == 1).collect();
            let dis: Vec<_> = batch.pairs.iter().filter(|p| p.target == 0).collect();
            let mut good = batch.pairs.len() == BATCH_SIZE && sim.len() == similar && dis.len() == BATCH_SIZE - similar;
            good &= sim.iter().all(|p| p.left != p.right && class_of(level, p.left) == a && class_of(level, p.right) == a);
            good &= dis.iter().all(|p| class_of(level, p.left) == a && class_of(level, p.right) != a);
            if level == Level::Fine {
                let rights: HashSet<usize> = dis.iter().map(|p| class_of(level, p.right)).collect();
                good &= rights.len() == 7;
            }
            if !good {
                bad += 1;
            }
        }
        let even = anchors.iter().all(|&c| c == batches / k);
        ok &= bad == 0 && even;
        notes.push(format!("{level}: {bad} malformed of {batches}, anchor counts {anchors:?}"));
    }
    Ok((ok, notes.join("; ")))
}

fn preprocessing() -> Check {
    let mut r = stream(11, Domain::Batch, 1);
    let mut failures = Vec::new();
    for n in 2..=400usize {
        let pts: Vec<Point3> = (0..n)
            .map(|_| Point3::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0), r.random_range(-20.0..20.0)))
            .collect();
        let f = Fiber::new(format!("n{n}"), pts.clone(), None)?;
        let p = prune_and_pad(&f)?;
        let x = p.features();
        let m = ((3 * n + 3) / 4).min(100);
        let mut good = x.shape() == (SEQ_LEN, 3) && p.valid_len() == m;
        good &= (m..SEQ_LEN).all(|i| x.row(i).iter().all(|&v| v == 0.0));
        // kept rows form a subsequence of the centred fiber
        let centred = center_fiber(&f);
        let mut cursor = 0;
        let mut kept = Vec::new();
        for row in 0..m {
            while cursor < n && centred.points[cursor].to_array() != x.row(row) {
                cursor += 1;
            }
            good &= cursor < n;
            kept.push(cursor);
            cursor += 1;
        }
        for scale in [0.5, 2.0, 7.0] {
            let scaled = Fiber::new("s", pts.iter().map(|&q| q * scale).collect(), None)?;
            let s = curvature_scores(&center_fiber(&scaled).points);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            let mut top = order[..m].to_vec();
            top.sort_unstable();
            good &= top == kept;
        }
        if !good {
            failures.push(n);
        }
    }
    let anchors = kept_len(120) == 90 && kept_len(36) == 27;
    Ok((
        failures.is_empty() && anchors,
        format!("n=2..400 failures {failures:?}; 120->{} 36->{}", kept_len(120), kept_len(36)),
    ))
}

fn adam() -> Check {
    let cfg = AdamConfig {
        lr: 0.001,
        ..AdamConfig::default()
    };
    let mut theta = [1.0];
    let mut state = AdamState::new(1, cfg);
    adam_update(&mut theta, &[2.0], &mut state)?;
    let expected = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
    let (stepped, first) = (theta[0], (theta[0] - expected).abs());

    let mut theta = [1.0];
    let mut state = AdamState::new(1, AdamConfig { lr: 0.01, ..cfg });
    for _ in 0..5000 {
        let g = [2.0 * theta[0]];
        adam_update(&mut theta, &g, &mut state)?;
    }
    Ok((
        first < 1e-9 && theta[0].abs() < 1e-3,
        format!("first step {stepped:.10} (error {first:.1e}); |theta| after 5000 steps {:.2e}", theta[0].abs()),
    ))
}

fn metrics() -> Check {
    let row = |i: usize, truth: usize, pred: usize| PredictionRow {
        id: format!("p{i}"),
        truth: Some(truth),
        pred,
        score: 0.5,
    };
    // coarse classes: 0 = Grey, 1 = White
    let grey = Level::Coarse.parse_class("Grey").unwrap();
    let white = Level::Coarse.parse_class("White").unwrap();
    let a = PredictionTable {
        level: Level::Coarse,
        rows: (0..10).map(|i| row(i, grey, if i == 0 { white } else { grey })).collect(),
    };
    let b = PredictionTable {
        level: Level::Coarse,
        rows: (0..5).map(|i| row(i, white, if i == 0 { grey } else { white })).collect(),
    };
    let c = PredictionTable {
        level: Level::Coarse,
        rows: (0..20).map(|i| row(i, if i < 7 { white } else { grey }, white)).collect(),
    };
    let (ra, rb, rc) = (compute_metrics(&a)?, compute_metrics(&b)?, compute_metrics(&c)?);
    let acc = format_percent(ra.accuracy);
    let rec = format_percent(rb.recall.unwrap_or(f64::NAN));
    let degenerate = (format_percent(rc.recall.unwrap_or(f64::NAN)), format_percent(rc.accuracy));
    Ok((
        acc == "90.00" && rec == "80.00" && degenerate == ("100.00".into(), "35.00".into()),
        format!("accuracy {acc}; recall {rec}; all-White recall {} accuracy {} (white fraction 35.00)", degenerate.0, degenerate.1),
    ))
}

fn accuracy(table: &PredictionTable) -> f64 {
    let hit = table.rows.iter().filter(|r| r.truth == Some(r.pred)).count();
    100.0 * hit as f64 / table.rows.len() as f64
}

struct Synthetic {
    corpus: FiberDataset,
    train: FiberDataset,
    test: FiberDataset,
    train_fibers: Vec<ProcessedFiber>,
    coarse: Trainer,
    half: String,
    fine: SiameseModel,
    fine_accuracy: f64,
}

fn fine_test(test: &FiberDataset, rotation: Option<&TaggedRotation>) -> fs2net::Result<Vec<ProcessedFiber>> {
    preprocess_dataset(&fs2net::eval::prepare_test_set(test, Level::Fine, rotation)?)
}

fn end_to_end() -> Result<(Check, Synthetic), Box<dyn std::error::Error>> {
    let start = Instant::now();
    let corpus = generate_corpus(&GenConfig {
        seed: CORPUS_SEED,
        ..GenConfig::default()
    })?;
    let (train, test) = split_dataset(&corpus, 0.8, SPLIT_SEED)?;
    let train_fibers = preprocess_dataset(&train)?;

    let mut cfg = TrainConfig::new(Level::Coarse, TRAIN_SEED);
    cfg.iterations = RESUME_AT;
    let mut coarse = Trainer::new(cfg)?;
    let mut losses = coarse.run(&train_fibers, |_| {})?;
    let half = render_checkpoint(&coarse.checkpoint())?;
    coarse.set_iterations(ITERATIONS);
    losses.extend(coarse.run(&train_fibers, |_| {})?);
    let mean = |s: &[fs2net::trainer::LogEntry]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..100]), mean(&losses[ITERATIONS - 100..]));

    let defaults = build_default_set(&train, Level::Coarse, 5, &[], DEFAULTS_SEED)?;
    let table = classify_all(coarse.model(), &defaults, &preprocess_dataset(&test)?)?;
    let report = compute_metrics(&table)?;
    let recall = report.recall.unwrap_or(0.0);

    let mut cfg = TrainConfig::new(Level::Fine, TRAIN_SEED);
    cfg.iterations = ITERATIONS;
    let fine = fs2net::trainer::train(&cfg, &train_fibers)?.model;
    let defaults = build_default_set(&train, Level::Fine, 5, &[], DEFAULTS_SEED)?;
    let fine_table = classify_all(&fine, &defaults, &fine_test(&test, None)?)?;
    let fine_accuracy = accuracy(&fine_table);
    let secs = start.elapsed().as_secs_f64();

    let pass = report.accuracy >= 95.0 && recall >= 90.0 && fine_accuracy >= 85.0 && secs < 1200.0;
    let detail = format!(
        "coarse accuracy {} recall {} on {} held-out fibers; fine accuracy {} on {} white fibers; \
         coarse loss {first:.3} -> {last:.3}; {secs:.0}s",
        format_percent(report.accuracy),
        format_percent(recall),
        report.total,
        format_percent(fine_accuracy),
        fine_table.rows.len(),
    );
    let synthetic = Synthetic {
        corpus,
        train,
        test,
        train_fibers,
        coarse,
        half,
        fine,
        fine_accuracy,
    };
    Ok((Ok((pass, detail)), synthetic))
}

fn rotation_robustness(s: &Synthetic) -> Check {
    let rotated = fine_test(&s.test, Some(&TaggedRotation::axis(Axis::Z, 30.0)))?;
    let plain = build_default_set(&s.train, Level::Fine, 5, &[], DEFAULTS_SEED)?;
    let augmented = build_default_set(
        &s.train,
        Level::Fine,
        5,
        &TaggedRotation::default_augmentation(),
        DEFAULTS_SEED,
    )?;
    let without = accuracy(&classify_all(&s.fine, &plain, &rotated)?);
    let with = accuracy(&classify_all(&s.fine, &augmented, &rotated)?);
    Ok((
        with > without && s.fine_accuracy - with <= 10.0,
        format!(
            "z:30 fine accuracy {} augmented vs {} plain; unrotated {}",
            format_percent(with),
            format_percent(without),
            format_percent(s.fine_accuracy)
        ),
    ))
}

fn persistence(s: &Synthetic) -> Check {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("coarse.ckpt");
    save_checkpoint(&s.coarse.checkpoint(), &path)?;
    let loaded = load_checkpoint(&path)?.model;
    let fibers = preprocess_dataset(&s.test)?;
    let mut r = stream(8, Domain::Batch, 0);
    let same_scores = (0..100)
        .filter(|_| {
            let (a, b) = (fibers.choose(&mut r).unwrap(), fibers.choose(&mut r).unwrap());
            s.coarse.model().score_pair(a, b).to_bits() == loaded.score_pair(a, b).to_bits()
        })
        .count();

    let mut resumed = Trainer::from_checkpoint(parse_checkpoint(&s.half)?)?;
    resumed.set_iterations(ITERATIONS);
    resumed.run(&s.train_fibers, |_| {})?;
    let resume_equal = render_checkpoint(&resumed.checkpoint())? == render_checkpoint(&s.coarse.checkpoint())?;

    let text = render_dataset(&s.corpus);
    let data_path = dir.path().join("corpus.fib");
    fs2net::save_dataset(&s.corpus, &data_path)?;
    let round_trip = parse_dataset(&text)? == s.corpus && fs2net::load_dataset(&data_path)? == s.corpus;
    Ok((
        same_scores == 100 && resume_equal && round_trip,
        format!(
            "{same_scores}/100 scores bitwise after reload; resume at {RESUME_AT} {} uninterrupted {ITERATIONS}; \
             dataset round trip {}",
            if resume_equal { "==" } else { "!=" },
            if round_trip { "exact" } else { "lossy" }
        ),
    ))
}

fn protocol_outputs(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, Box<dyn std::error::Error>> {
    let corpus = generate_corpus(&GenConfig {
        per_white_class: 12,
        grey_fraction: 0.5,
        seed: 21,
        ..GenConfig::default()
    })?;
    let mut cfg = ProtocolConfig::new(Protocol::Intra, 4);
    cfg.levels = vec![Level::Coarse, Level::Fine];
    cfg.train.iterations = 20;
    cfg.test_rotation = Some(TaggedRotation::axis(Axis::Z, 20.0));
    let runs = run_protocol(
        &cfg,
        &[NamedDataset {
            name: "synthetic".into(),
            dataset: corpus,
        }],
    )?;
    let mut files = Vec::new();
    for run in &runs {
        let stem = dir.join(format!("{}-{}", run.report.protocol, run.report.level));
        save_checkpoint(&run.checkpoint, stem.with_extension("ckpt"))?;
        run.predictions.save(stem.with_extension("pred.tsv"))?;
        run.report.save(stem.with_extension("report.txt"))?;
    }
    let mut names: Vec<_> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    names.sort();
    for p in names {
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p)?));
    }
    Ok(files)
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = protocol_outputs(a.path())?;
    let second = protocol_outputs(b.path())?;
    let identical = first == second && !first.is_empty();
    let bytes: usize = first.iter().map(|(_, d)| d.len()).sum();
    Ok((
        identical,
        format!(
            "{} files ({bytes} bytes) {} across two protocol runs",
            first.len(),
            if identical { "byte-identical" } else { "differ" }
        ),
    ))
}

fn main() -> ExitCode {
    let mut report = Report { failed: 0 };
    report.record(1, "gradient correctness", gradient_correctness());
    report.record(2, "siamese invariants", siamese_invariants());
    report.record(3, "batch composition", batch_composition());
    report.record(4, "preprocessing", preprocessing());
    report.record(7, "adam", adam());
    report.record(9, "metrics", metrics());
    match end_to_end() {
        Ok((check, synthetic)) => {
            report.record(5, "end-to-end synthetic", check);
            report.record(6, "rotation robustness", rotation_robustness(&synthetic));
            report.record(8, "persistence", persistence(&synthetic));
        }
        Err(e) => {
            for (id, name) in [(5, "end-to-end synthetic"), (6, "rotation robustness"), (8, "persistence")] {
                report.record(id, name, Err(e.to_string().into()));
            }
        }
    }
    report.record(10, "determinism", determinism());
    if report.failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", report.failed);
        ExitCode::FAILURE
    }
}
