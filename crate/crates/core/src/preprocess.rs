//! Curvature-based pruning of variable-length fibers into fixed 100×3 inputs.
//!
//! Each interior point is scored by the magnitude of its second differences
//! at offsets 1 and 4, measured separately in the xy, xz and yz projections
//! and summed. The lowest-scoring quarter of the points is dropped; the rest
//! keep their order and are zero-padded at the tail to 100 rows.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fiber::{
    center_fiber, format_points, label_field, parse_label, parse_points, Fiber, FiberDataset,
    FineLabel, Point3,
};
use crate::nn::Matrix;

pub const SEQ_LEN: usize = 100;
pub const FEATURES: usize = 3;
pub const PROCESSED_HEADER: &str = "#processed v1";

const OFFSETS: [usize; 2] = [1, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedFiber {
    pub id: String,
    pub label: Option<FineLabel>,
    features: Matrix,
    valid_len: usize,
}

impl ProcessedFiber {
    pub fn new(
        id: impl Into<String>,
        label: Option<FineLabel>,
        features: Matrix,
        valid_len: usize,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |message: String| Error::InvalidFiber {
            id: id.clone(),
            message,
        };
        if features.shape() != (SEQ_LEN, FEATURES) {
            return Err(invalid(format!(
                "features must be {SEQ_LEN}x{FEATURES}, got {:?}",
                features.shape()
            )));
        }
        if !(2..=SEQ_LEN).contains(&valid_len) {
            return Err(invalid(format!("valid_len {valid_len} outside [2, {SEQ_LEN}]")));
        }
        if !features.is_finite() {
            return Err(invalid("non-finite feature".into()));
        }
        if (valid_len..SEQ_LEN).any(|r| features.row(r).iter().any(|&v| v != 0.0)) {
            return Err(invalid("padding rows must be zero".into()));
        }
        Ok(ProcessedFiber {
            id,
            label,
            features,
            valid_len,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    /// An all-zero input, mostly useful for probing a model.
    pub fn zeros(id: impl Into<String>) -> Self {
        ProcessedFiber {
            id: id.into(),
            label: None,
            features: Matrix::zeros(SEQ_LEN, FEATURES),
            valid_len: 2,
        }
    }
}

/// Number of points kept from a fiber of `n` points: `min(100, ceil(0.75 n))`.
pub fn kept_len(n: usize) -> usize {
    ((3 * n).div_ceil(4)).min(SEQ_LEN)
}

fn plane_norms(d: Point3) -> f64 {
    (d.x * d.x + d.y * d.y).sqrt() + (d.x * d.x + d.z * d.z).sqrt() + (d.y * d.y + d.z * d.z).sqrt()
}

/// Per-point curvature scores. Endpoints score `+∞`; offset terms whose
/// neighbours fall outside the fiber contribute nothing.
pub fn curvature_scores(points: &[Point3]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                return f64::INFINITY;
            }
            OFFSETS
                .iter()
                .filter(|&&k| i >= k && i + k < n)
                .map(|&k| plane_norms(points[i - k] - points[i] * 2.0 + points[i + k]))
                .sum()
        })
        .collect()
}

/// Indices of the `m` highest-scoring points, ties to the lower index,
/// returned in ascending order.
pub fn select_points(scores: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..m.min(order.len())].to_vec();
    kept.sort_unstable();
    kept
}

pub fn prune_and_pad(f: &Fiber) -> Result<ProcessedFiber> {
    if f.len() < 2 {
        return Err(Error::InvalidFiber {
            id: f.id.clone(),
            message: "a fiber needs at least 2 points".into(),
        });
    }
    let centred = center_fiber(f);
    let scores = curvature_scores(&centred.points);
    let m = kept_len(f.len());
    let mut features = Matrix::zeros(SEQ_LEN, FEATURES);
    for (row, &i) in select_points(&scores, m).iter().enumerate() {
        features.row_mut(row).copy_from_slice(&centred.points[i].to_array());
    }
    ProcessedFiber::new(f.id.clone(), f.label, features, m)
}

pub fn preprocess_dataset(ds: &FiberDataset) -> Result<Vec<ProcessedFiber>> {
    ds.fibers.par_iter().map(prune_and_pad).collect()
}

pub fn render_processed(fibers: &[ProcessedFiber]) -> String {
    let mut out = String::new();
    out.push_str(PROCESSED_HEADER);
    out.push('\n');
    for f in fibers {
        let points: Vec<Point3> = f
            .features
            .iter_rows()
            .map(|r| Point3::new(r[0], r[1], r[2]))
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            f.id,
            label_field(f.label),
            format_points(&points),
            f.valid_len
        ));
    }
    out
}

pub fn parse_processed(text: &str) -> Result<Vec<ProcessedFiber>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == PROCESSED_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing `{PROCESSED_HEADER}` header"),
            })
        }
    }
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let label = parse_label(fields[1], line)?;
        let points = parse_points(fields[2], line)?;
        if points.len() != SEQ_LEN {
            return Err(err(format!("expected {SEQ_LEN} points, found {}", points.len())));
        }
        let valid_len: usize = fields[3]
            .parse()
            .map_err(|_| err(format!("bad valid_len `{}`", fields[3])))?;
        let data = points.iter().flat_map(|p| p.to_array()).collect();
        let features = Matrix::from_vec(SEQ_LEN, FEATURES, data)?;
        let fiber = ProcessedFiber::new(fields[0], label, features, valid_len)
            .map_err(|e| err(e.to_string()))?;
        if !seen.insert(fiber.id.clone()) {
            return Err(Error::DuplicateId(fiber.id));
        }
        out.push(fiber);
    }
    Ok(out)
}

pub fn is_processed_text(text: &str) -> bool {
    text.lines().next().is_some_and(|h| h.trim_end() == PROCESSED_HEADER)
}

pub fn load_processed(path: impl AsRef<Path>) -> Result<Vec<ProcessedFiber>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_processed(&text)
}

pub fn save_processed(fibers: &[ProcessedFiber], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_processed(fibers)).map_err(|e| Error::io(path, e))
}
