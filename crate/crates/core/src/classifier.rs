//! Default sets and argmax classification.
//!
//! A test fiber is scored against every labeled reference in the default
//! set and takes the class of the best-scoring reference. Ties on the best
//! score fall back to the higher per-class mean, then to the lower class
//! index.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fiber::{rotate_fiber, FiberDataset, Level, TaggedRotation};
use crate::preprocess::{parse_processed, prune_and_pad, render_processed, ProcessedFiber};
use crate::rng::{self, Domain};
use crate::siamese::SiameseModel;

pub const DEFAULT_PER_CLASS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultEntry {
    pub fiber: ProcessedFiber,
    pub class: usize,
    /// Rotation applied before preprocessing, `id` for none.
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefaultSet {
    pub level: Level,
    pub entries: Vec<DefaultEntry>,
}

impl DefaultSet {
    /// Builds a set from processed fibers whose ids carry an `@tag` suffix
    /// (a missing suffix means `id`). Every fiber needs a label with a class
    /// at `level`.
    pub fn from_processed(fibers: Vec<ProcessedFiber>, level: Level) -> Result<Self> {
        let mut entries = Vec::with_capacity(fibers.len());
        for fiber in fibers {
            let label = fiber
                .label
                .ok_or_else(|| Error::MissingTruth(fiber.id.clone()))?;
            let class = level.class_of(label).ok_or_else(|| {
                Error::Config(format!("default entry {} ({label}) has no {level}-level class", fiber.id))
            })?;
            let tag = match fiber.id.rsplit_once('@') {
                Some((_, t)) => t.to_string(),
                None => "id".to_string(),
            };
            entries.push(DefaultEntry { fiber, class, tag });
        }
        let set = DefaultSet { level, entries };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDefaultSet);
        }
        if let Some(e) = self.entries.iter().find(|e| e.class >= self.level.num_classes()) {
            return Err(Error::Config(format!("default entry {} has class {} out of range", e.fiber.id, e.class)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.level.num_classes()];
        for e in &self.entries {
            counts[e.class] += 1;
        }
        counts
    }

    pub fn fibers(&self) -> impl Iterator<Item = &ProcessedFiber> {
        self.entries.iter().map(|e| &e.fiber)
    }
}

/// Samples `per_class` raw fibers per class and emits one entry per
/// rotation in `{identity} ∪ rotations`. Each rotation is applied to the
/// raw fiber, which is then pruned and padded.
pub fn build_default_set(
    ds: &FiberDataset,
    level: Level,
    per_class: usize,
    rotations: &[TaggedRotation],
    seed: u64,
) -> Result<DefaultSet> {
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    let mut pools = vec![Vec::new(); level.num_classes()];
    for (i, f) in ds.fibers.iter().enumerate() {
        if let Some(c) = f.label.and_then(|l| level.class_of(l)) {
            pools[c].push(i);
        }
    }
    let mut all_rotations = vec![TaggedRotation::identity()];
    all_rotations.extend(rotations.iter().filter(|r| r.tag != "id").cloned());

    let mut picks = Vec::new();
    for (class, pool) in pools.iter_mut().enumerate() {
        if pool.len() < per_class {
            return Err(Error::Underpopulated {
                class: level.class_name(class).to_string(),
                available: pool.len(),
                required: per_class,
            });
        }
        let mut rng = rng::stream(seed, Domain::DefaultSet, class as u64);
        pool.shuffle(&mut rng);
        let mut chosen = pool[..per_class].to_vec();
        chosen.sort_unstable();
        picks.extend(chosen.into_iter().map(|i| (class, i)));
    }

    let jobs: Vec<(usize, usize, &TaggedRotation)> = picks
        .iter()
        .flat_map(|&(c, i)| all_rotations.iter().map(move |r| (c, i, r)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(class, i, rot)| {
            let raw = &ds.fibers[i];
            let rotated = rotate_fiber(raw, &rot.rotation)?;
            let mut fiber = prune_and_pad(&rotated)?;
            fiber.id = format!("{}@{}", raw.id, rot.tag);
            Ok(DefaultEntry {
                fiber,
                class,
                tag: rot.tag.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DefaultSet { level, entries })
}

pub fn save_default_set(set: &DefaultSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let fibers: Vec<ProcessedFiber> = set.fibers().cloned().collect();
    fs::write(path, render_processed(&fibers)).map_err(|e| Error::io(path, e))
}

pub fn load_default_set(path: impl AsRef<Path>, level: Level) -> Result<DefaultSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DefaultSet::from_processed(parse_processed(&text)?, level)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub class: usize,
    pub best_score: f64,
    /// Best score per class; `None` for classes absent from the default set.
    pub class_max: Vec<Option<f64>>,
    pub class_mean: Vec<Option<f64>>,
}

/// Argmax over `(class, score)` pairs. Independent of the pair order.
pub fn decide(scores: &[(usize, f64)], num_classes: usize) -> Result<Decision> {
    if scores.is_empty() {
        return Err(Error::EmptyDefaultSet);
    }
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    for &(c, s) in scores {
        per_class
            .get_mut(c)
            .ok_or_else(|| Error::Config(format!("class {c} out of range")))?
            .push(s);
    }
    let mut class_max = vec![None; num_classes];
    let mut class_mean = vec![None; num_classes];
    for (c, v) in per_class.iter_mut().enumerate() {
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        class_max[c] = v.last().copied();
        class_mean[c] = Some(v.iter().sum::<f64>() / v.len() as f64);
    }
    let mut best: Option<usize> = None;
    for c in 0..num_classes {
        let (Some(m), Some(mu)) = (class_max[c], class_mean[c]) else {
            continue;
        };
        best = match best {
            Some(b) => {
                let (bm, bmu) = (class_max[b].unwrap(), class_mean[b].unwrap());
                if m > bm || (m == bm && mu > bmu) {
                    Some(c)
                } else {
                    Some(b)
                }
            }
            None => Some(c),
        };
    }
    let class = best.expect("at least one class has scores");
    Ok(Decision {
        class,
        best_score: class_max[class].unwrap(),
        class_max,
        class_mean,
    })
}

/// A model paired with its default set, with reference embeddings cached.
pub struct Classifier<'a> {
    model: &'a SiameseModel,
    defaults: &'a DefaultSet,
    reference: Vec<Vec<f64>>,
}

impl<'a> Classifier<'a> {
    pub fn new(model: &'a SiameseModel, defaults: &'a DefaultSet) -> Result<Self> {
        defaults.validate()?;
        if defaults.level != model.level {
            return Err(Error::Config(format!(
                "default set is {}-level but the model is {}-level",
                defaults.level, model.level
            )));
        }
        let fibers: Vec<ProcessedFiber> = defaults.fibers().cloned().collect();
        let reference = model.embed_all(&fibers);
        Ok(Classifier {
            model,
            defaults,
            reference,
        })
    }

    pub fn classify(&self, f: &ProcessedFiber) -> Result<Decision> {
        let e = self.model.embed(f);
        let scores: Vec<(usize, f64)> = self
            .defaults
            .entries
            .iter()
            .zip(&self.reference)
            .map(|(entry, r)| (entry.class, self.model.score_embeddings(&e, r)))
            .collect();
        decide(&scores, self.defaults.level.num_classes())
    }
}

pub fn classify_fiber(model: &SiameseModel, defaults: &DefaultSet, f: &ProcessedFiber) -> Result<Decision> {
    Classifier::new(model, defaults)?.classify(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    /// Truth as a class index at the table's level.
    pub truth: Option<usize>,
    pub pred: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub level: Level,
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTION_HEADER: &str = "id\ttruth\tpred\tscore";

impl PredictionTable {
    pub fn render(&self) -> String {
        let mut out = format!("{PREDICTION_HEADER}\n");
        for r in &self.rows {
            let truth = r.truth.map_or("?", |c| self.level.class_name(c));
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                truth,
                self.level.class_name(r.pred),
                r.score
            ));
        }
        out
    }

    pub fn parse(text: &str, level: Level) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == PREDICTION_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{PREDICTION_HEADER}`"),
                })
            }
        }
        let class = |name: &str, line: usize| {
            level.parse_class(name).ok_or_else(|| Error::Parse {
                line,
                message: format!("`{name}` is not a {level}-level class"),
            })
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Parse {
                    line: n,
                    message: format!("expected 4 tab-separated fields, found {}", cols.len()),
                });
            }
            let truth = if cols[1] == "?" { None } else { Some(class(cols[1], n)?) };
            let score = cols[3].parse().map_err(|_| Error::Parse {
                line: n,
                message: format!("bad score `{}`", cols[3]),
            })?;
            rows.push(PredictionRow {
                id: cols[0].to_string(),
                truth,
                pred: class(cols[2], n)?,
                score,
            });
        }
        Ok(PredictionTable { level, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, level: Level) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, level)
    }
}

/// Classifies every fiber. Truth is the fiber's label mapped to the model's
/// level, `None` when unlabeled or classless at that level.
pub fn classify_all(model: &SiameseModel, defaults: &DefaultSet, fibers: &[ProcessedFiber]) -> Result<PredictionTable> {
    let clf = Classifier::new(model, defaults)?;
    let rows = fibers
        .par_iter()
        .map(|f| {
            let d = clf.classify(f)?;
            Ok(PredictionRow {
                id: f.id.clone(),
                truth: f.label.and_then(|l| model.level.class_of(l)),
                pred: d.class,
                score: d.best_score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable {
        level: model.level,
        rows,
    })
}
