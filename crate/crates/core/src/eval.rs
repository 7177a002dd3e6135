//! Metrics, reports and the intra / inter / merged experiment protocols.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::classifier::{build_default_set, classify_all, DefaultSet, PredictionTable, DEFAULT_PER_CLASS};
use crate::error::{Error, Result};
use crate::fiber::{rotate_fiber, split_dataset, Fiber, FiberDataset, FineLabel, Level, TaggedRotation};
use crate::preprocess::preprocess_dataset;
use crate::rng::{self, Domain};
use crate::trainer::{train, Checkpoint, LogEntry, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub test: String,
    pub level: Level,
    pub rotation: Option<String>,
    pub total: usize,
    pub white_total: usize,
    /// Percentages.
    pub accuracy: f64,
    pub recall: Option<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

fn percent(num: usize, den: usize) -> f64 {
    100.0 * num as f64 / den as f64
}

pub fn format_percent(p: f64) -> String {
    format!("{p:.2}")
}

/// Accuracy, white recall and confusion matrix of a prediction table. Every
/// row must carry a truth class.
pub fn compute_metrics(table: &PredictionTable) -> Result<EvalReport> {
    let level = table.level;
    let k = level.num_classes();
    let mut confusion = vec![vec![0; k]; k];
    let (mut correct, mut white, mut white_hit) = (0, 0, 0);
    for row in &table.rows {
        let truth = row.truth.ok_or_else(|| Error::MissingTruth(row.id.clone()))?;
        confusion[truth][row.pred] += 1;
        if truth == row.pred {
            correct += 1;
        }
        if level.class_is_white(truth) {
            white += 1;
            if level.class_is_white(row.pred) {
                white_hit += 1;
            }
        }
    }
    let total = table.rows.len();
    if total == 0 {
        return Err(Error::Config("cannot evaluate an empty prediction table".into()));
    }
    Ok(EvalReport {
        protocol: "eval".into(),
        test: String::new(),
        level,
        rotation: None,
        total,
        white_total: white,
        accuracy: percent(correct, total),
        recall: (white > 0).then(|| percent(white_hit, white)),
        confusion,
    })
}

/// Replaces the truth column with labels looked up by id. At fine level,
/// rows whose truth is Grey are dropped.
pub fn attach_truth(table: &PredictionTable, labels: &HashMap<String, Option<FineLabel>>) -> Result<PredictionTable> {
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let label = labels
            .get(&row.id)
            .copied()
            .flatten()
            .ok_or_else(|| Error::MissingTruth(row.id.clone()))?;
        let Some(truth) = table.level.class_of(label) else {
            continue;
        };
        rows.push(crate::classifier::PredictionRow {
            truth: Some(truth),
            ..row.clone()
        });
    }
    Ok(PredictionTable {
        level: table.level,
        rows,
    })
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let fields = [
            ("protocol", self.protocol.clone()),
            ("test", if self.test.is_empty() { "-".into() } else { self.test.clone() }),
            ("level", self.level.to_string()),
            ("rotation", self.rotation.clone().unwrap_or_else(|| "none".into())),
            ("fibers", self.total.to_string()),
            ("white", self.white_total.to_string()),
            ("accuracy", format_percent(self.accuracy)),
            ("recall", self.recall.map_or("n/a".into(), format_percent)),
        ];
        for (k, v) in fields {
            let _ = writeln!(out, "{k:<10}{v}");
        }
        let names: Vec<&str> = (0..self.level.num_classes()).map(|c| self.level.class_name(c)).collect();
        let width = names
            .iter()
            .map(|n| n.len())
            .chain(self.confusion.iter().flatten().map(|v| v.to_string().len()))
            .max()
            .unwrap_or(1)
            + 2;
        let _ = writeln!(out, "\nconfusion (rows truth, columns predicted)");
        let _ = write!(out, "{:width$}", "");
        for n in &names {
            let _ = write!(out, "{n:>width$}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.confusion) {
            let _ = write!(out, "{n:<width$}");
            for v in row {
                let _ = write!(out, "{v:>width$}");
            }
            out.push('\n');
        }
        out
    }

    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "protocol={}", self.protocol);
        let _ = writeln!(out, "test={}", self.test);
        let _ = writeln!(out, "level={}", self.level);
        let _ = writeln!(out, "rotation={}", self.rotation.as_deref().unwrap_or("none"));
        let _ = writeln!(out, "total={}", self.total);
        let _ = writeln!(out, "white_total={}", self.white_total);
        let _ = writeln!(out, "accuracy={}", format_percent(self.accuracy));
        let _ = writeln!(out, "recall={}", self.recall.map_or("n/a".into(), format_percent));
        for (i, row) in self.confusion.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(out, "confusion.{i}.{j}={v}");
            }
        }
        out
    }

    /// Writes the text report to `path` and the key-value form next to it
    /// with a `.kv` extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render_text()).map_err(|e| Error::io(path, e))?;
        let kv = path.with_extension("kv");
        fs::write(&kv, self.render_kv()).map_err(|e| Error::io(&kv, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// One dataset, split into train and test.
    Intra,
    /// Train on the first dataset, test on each of the others.
    Inter,
    /// A per-file quota from every dataset trains one model; the rest of
    /// every file forms the test set.
    Merged,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Intra => "intra",
            Protocol::Inter => "inter",
            Protocol::Merged => "merged",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intra" => Ok(Protocol::Intra),
            "inter" => Ok(Protocol::Inter),
            "merged" => Ok(Protocol::Merged),
            _ => Err(format!("unknown protocol `{s}` (expected intra, inter or merged)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub dataset: FiberDataset,
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub levels: Vec<Level>,
    /// Training settings; `level` and `seed` are overwritten per run.
    pub train: TrainConfig,
    pub seed: u64,
    /// Training fraction for the intra split.
    pub fraction: f64,
    /// Training fibers drawn from each file under the merged protocol.
    pub quota: usize,
    pub per_class: usize,
    pub augmentation: Vec<TaggedRotation>,
    /// Rotation applied to every raw test fiber before preprocessing.
    pub test_rotation: Option<TaggedRotation>,
}

impl ProtocolConfig {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        ProtocolConfig {
            protocol,
            levels: vec![Level::Coarse, Level::Fine],
            train: TrainConfig::new(Level::Coarse, seed),
            seed,
            fraction: 0.8,
            quota: 4000,
            per_class: DEFAULT_PER_CLASS,
            augmentation: TaggedRotation::default_augmentation(),
            test_rotation: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: EvalReport,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogEntry>,
    pub defaults: DefaultSet,
    pub predictions: PredictionTable,
}

fn note(ds: &FiberDataset, line: String) -> String {
    if ds.provenance.is_empty() {
        line
    } else {
        format!("{}\n{line}", ds.provenance)
    }
}

fn merge(parts: Vec<(String, Vec<Fiber>)>, provenance: String) -> Result<FiberDataset> {
    let fibers = parts
        .into_iter()
        .flat_map(|(name, fibers)| {
            fibers.into_iter().map(move |mut f| {
                f.id = format!("{name}/{}", f.id);
                f
            })
        })
        .collect();
    FiberDataset::new(fibers, provenance)
}

/// Train and test splits per protocol, as `(train, [(test name, test)])`.
fn protocol_splits(cfg: &ProtocolConfig, inputs: &[NamedDataset]) -> Result<(FiberDataset, Vec<NamedDataset>)> {
    match cfg.protocol {
        Protocol::Intra => {
            let [only] = inputs else {
                return Err(Error::Config(format!("intra protocol takes one dataset, got {}", inputs.len())));
            };
            let (train, test) = split_dataset(&only.dataset, cfg.fraction, cfg.seed)?;
            Ok((
                train,
                vec![NamedDataset {
                    name: only.name.clone(),
                    dataset: test,
                }],
            ))
        }
        Protocol::Inter => {
            let [train, tests @ ..] = inputs else {
                return Err(Error::Config("inter protocol needs a training dataset".into()));
            };
            if tests.is_empty() {
                return Err(Error::Config("inter protocol needs at least one test dataset".into()));
            }
            Ok((train.dataset.clone(), tests.to_vec()))
        }
        Protocol::Merged => {
            if inputs.is_empty() {
                return Err(Error::Config("merged protocol needs at least one dataset".into()));
            }
            let mut train_parts = Vec::new();
            let mut test_parts = Vec::new();
            for (k, input) in inputs.iter().enumerate() {
                let n = input.dataset.len();
                if cfg.quota > n {
                    return Err(Error::Config(format!(
                        "training quota {} exceeds the {n} fibers in {}",
                        cfg.quota, input.name
                    )));
                }
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng::stream(cfg.seed, Domain::Subsample, k as u64));
                let mut chosen = vec![false; n];
                for &i in &order[..cfg.quota] {
                    chosen[i] = true;
                }
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (f, c) in input.dataset.fibers.iter().zip(chosen) {
                    if c { a.push(f.clone()) } else { b.push(f.clone()) }
                }
                train_parts.push((input.name.clone(), a));
                test_parts.push((input.name.clone(), b));
            }
            let names: Vec<&str> = inputs.iter().map(|i| i.name.as_str()).collect();
            let prov = format!("merged {} quota={} seed={}", names.join(","), cfg.quota, cfg.seed);
            let train = merge(train_parts, prov.clone())?;
            let test = merge(test_parts, prov)?;
            if test.is_empty() {
                return Err(Error::Config("merged protocol leaves no fibers for testing".into()));
            }
            Ok((
                train,
                vec![NamedDataset {
                    name: "merged".into(),
                    dataset: test,
                }],
            ))
        }
    }
}

/// Rotates (optionally) and filters the raw test set for `level`.
pub fn prepare_test_set(test: &FiberDataset, level: Level, rotation: Option<&TaggedRotation>) -> Result<FiberDataset> {
    let mut fibers = Vec::with_capacity(test.len());
    for f in &test.fibers {
        if level == Level::Fine && !f.label.is_some_and(FineLabel::is_white) {
            continue;
        }
        fibers.push(match rotation {
            Some(r) => rotate_fiber(f, &r.rotation)?,
            None => f.clone(),
        });
    }
    let prov = match rotation {
        Some(r) => note(test, format!("test rotation {}", r.tag)),
        None => test.provenance.clone(),
    };
    Ok(FiberDataset {
        fibers,
        provenance: prov,
    })
}

/// Runs preprocess → train → default set → classify → metrics for every
/// level and every test set of the protocol.
pub fn run_protocol(cfg: &ProtocolConfig, inputs: &[NamedDataset]) -> Result<Vec<ProtocolRun>> {
    let (train_raw, tests) = protocol_splits(cfg, inputs)?;
    let train_fibers = preprocess_dataset(&train_raw)?;
    let mut runs = Vec::new();
    for &level in &cfg.levels {
        let tcfg = TrainConfig {
            level,
            seed: cfg.seed,
            ..cfg.train.clone()
        };
        let outcome = train(&tcfg, &train_fibers)?;
        let defaults = build_default_set(&train_raw, level, cfg.per_class, &cfg.augmentation, cfg.seed)?;
        for test in &tests {
            let raw = prepare_test_set(&test.dataset, level, cfg.test_rotation.as_ref())?;
            let fibers = preprocess_dataset(&raw)?;
            let predictions = classify_all(&outcome.model, &defaults, &fibers)?;
            let mut report = compute_metrics(&predictions)?;
            report.protocol = cfg.protocol.name().into();
            report.test = test.name.clone();
            report.rotation = cfg.test_rotation.as_ref().map(|r| r.tag.clone());
            runs.push(ProtocolRun {
                report,
                checkpoint: outcome.checkpoint.clone(),
                log: outcome.log.clone(),
                defaults: defaults.clone(),
                predictions,
            });
        }
    }
    Ok(runs)
}
