//! Fiber data model, label taxonomy, dataset files and rigid transforms.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const DATASET_HEADER: &str = "# fs2net dataset v1";
const PROVENANCE_PREFIX: &str = "# provenance: ";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Anatomical label: grey matter or one of the eight white-matter tracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FineLabel {
    Grey,
    Arcuate,
    Cingulum,
    Corticospinal,
    ForcepsMajor,
    Fornix,
    InferiorOccipitofrontal,
    SuperiorLongitudinal,
    Uncinate,
}

impl FineLabel {
    pub const ALL: [FineLabel; 9] = [
        FineLabel::Grey,
        FineLabel::Arcuate,
        FineLabel::Cingulum,
        FineLabel::Corticospinal,
        FineLabel::ForcepsMajor,
        FineLabel::Fornix,
        FineLabel::InferiorOccipitofrontal,
        FineLabel::SuperiorLongitudinal,
        FineLabel::Uncinate,
    ];

    pub const WHITE: [FineLabel; 8] = [
        FineLabel::Arcuate,
        FineLabel::Cingulum,
        FineLabel::Corticospinal,
        FineLabel::ForcepsMajor,
        FineLabel::Fornix,
        FineLabel::InferiorOccipitofrontal,
        FineLabel::SuperiorLongitudinal,
        FineLabel::Uncinate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FineLabel::Grey => "Grey",
            FineLabel::Arcuate => "Arcuate",
            FineLabel::Cingulum => "Cingulum",
            FineLabel::Corticospinal => "Corticospinal",
            FineLabel::ForcepsMajor => "ForcepsMajor",
            FineLabel::Fornix => "Fornix",
            FineLabel::InferiorOccipitofrontal => "InferiorOccipitofrontal",
            FineLabel::SuperiorLongitudinal => "SuperiorLongitudinal",
            FineLabel::Uncinate => "Uncinate",
        }
    }

    pub fn coarse(self) -> CoarseLabel {
        match self {
            FineLabel::Grey => CoarseLabel::Grey,
            _ => CoarseLabel::White,
        }
    }

    pub fn is_white(self) -> bool {
        self != FineLabel::Grey
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FineLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FineLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name() == s)
            .ok_or_else(|| format!("unknown label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoarseLabel {
    Grey,
    White,
}

impl CoarseLabel {
    pub fn name(self) -> &'static str {
        match self {
            CoarseLabel::Grey => "Grey",
            CoarseLabel::White => "White",
        }
    }
}

/// Classification granularity. Coarse is Grey vs White; Fine is the 8-way
/// white-tract split (grey fibers have no fine class).
///
/// Classes at a level are addressed by index; index order is the tie-break
/// enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Coarse,
    Fine,
}

impl Level {
    pub fn num_classes(self) -> usize {
        match self {
            Level::Coarse => 2,
            Level::Fine => 8,
        }
    }

    pub fn class_of(self, label: FineLabel) -> Option<usize> {
        match self {
            Level::Coarse => Some(label.coarse() as usize),
            Level::Fine => FineLabel::WHITE.iter().position(|&l| l == label),
        }
    }

    pub fn class_name(self, class: usize) -> &'static str {
        match self {
            Level::Coarse => [CoarseLabel::Grey, CoarseLabel::White][class].name(),
            Level::Fine => FineLabel::WHITE[class].name(),
        }
    }

    pub fn parse_class(self, name: &str) -> Option<usize> {
        (0..self.num_classes()).find(|&c| self.class_name(c) == name)
    }

    /// Whether a class at this level belongs to white matter.
    pub fn class_is_white(self, class: usize) -> bool {
        match self {
            Level::Coarse => class == CoarseLabel::White as usize,
            Level::Fine => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::Coarse => "coarse",
            Level::Fine => "fine",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "coarse" | "macro" => Ok(Level::Coarse),
            "fine" | "micro" => Ok(Level::Fine),
            _ => Err(format!("unknown level `{s}` (expected coarse or fine)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    pub id: String,
    pub points: Vec<Point3>,
    pub label: Option<FineLabel>,
}

impl Fiber {
    pub fn new(id: impl Into<String>, points: Vec<Point3>, label: Option<FineLabel>) -> Result<Self> {
        let fiber = Fiber {
            id: id.into(),
            points,
            label,
        };
        fiber.validate()?;
        Ok(fiber)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidFiber {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() || self.id.contains(['\t', '\n', '\r']) {
            return Err(invalid("id must be non-empty and free of tabs and newlines"));
        }
        if self.points.len() < 2 {
            return Err(invalid("a fiber needs at least 2 points"));
        }
        if !self.points.iter().all(Point3::is_finite) {
            return Err(invalid("non-finite coordinate"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }
}

pub(crate) fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len() as f64;
    let sum = points.iter().fold(Point3::ZERO, |acc, &p| acc + p);
    Point3::new(sum.x / n, sum.y / n, sum.z / n)
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    matrix: [[f64; 3]; 3],
}

const ROTATION_TOL: f64 = 1e-9;

impl RotationSpec {
    pub const IDENTITY: RotationSpec = RotationSpec {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn new(matrix: [[f64; 3]; 3]) -> Result<Self> {
        let r = RotationSpec { matrix };
        r.check()?;
        Ok(r)
    }

    pub fn about_axis(axis: Axis, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let matrix = match axis {
            Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
            Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
            Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        };
        RotationSpec { matrix }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.matrix
    }

    pub fn transpose(&self) -> Self {
        let m = &self.matrix;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        RotationSpec { matrix: t }
    }

    /// Matrix product `self · other` (apply `other` first).
    pub fn compose(&self, other: &RotationSpec) -> RotationSpec {
        let (a, b) = (&self.matrix, &other.matrix);
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        RotationSpec { matrix: m }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let m = &self.matrix;
        Point3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
        )
    }

    fn check(&self) -> Result<()> {
        let m = &self.matrix;
        if !m.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NotARotation("non-finite entry".into()));
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ROTATION_TOL {
                    return Err(Error::NotARotation(format!(
                        "(R^T R)[{i}][{j}] = {dot}, expected {expected}"
                    )));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotARotation(format!("determinant {det}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            _ => Err(format!("unknown axis `{s}`")),
        }
    }
}

/// A rotation with a short human-readable tag such as `z:30`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedRotation {
    pub tag: String,
    pub rotation: RotationSpec,
}

impl TaggedRotation {
    pub fn identity() -> Self {
        TaggedRotation {
            tag: "id".to_string(),
            rotation: RotationSpec::IDENTITY,
        }
    }

    pub fn axis(axis: Axis, degrees: f64) -> Self {
        TaggedRotation {
            tag: format!("{}:{}", axis.name(), degrees),
            rotation: RotationSpec::about_axis(axis, degrees),
        }
    }

    /// The z-axis set {±10°, ±20°, ±30°} used to augment default sets.
    pub fn default_augmentation() -> Vec<TaggedRotation> {
        [10.0, -10.0, 20.0, -20.0, 30.0, -30.0]
            .into_iter()
            .map(|d| TaggedRotation::axis(Axis::Z, d))
            .collect()
    }
}

impl FromStr for TaggedRotation {
    type Err = String;

    /// Parses `axis:degrees`, e.g. `z:-20`, or `id`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "id" {
            return Ok(TaggedRotation::identity());
        }
        let (axis, deg) = s
            .split_once(':')
            .ok_or_else(|| format!("rotation `{s}` is not of the form axis:degrees"))?;
        let degrees: f64 = deg
            .parse()
            .map_err(|_| format!("rotation `{s}` has a bad angle"))?;
        if !degrees.is_finite() {
            return Err(format!("rotation `{s}` has a non-finite angle"));
        }
        Ok(TaggedRotation::axis(axis.parse()?, degrees))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiberDataset {
    pub fibers: Vec<Fiber>,
    /// Free-text origin notes (generator config, source file). May span lines.
    pub provenance: String,
}

impl FiberDataset {
    pub fn new(fibers: Vec<Fiber>, provenance: impl Into<String>) -> Result<Self> {
        let ds = FiberDataset {
            fibers,
            provenance: provenance.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.fibers.len());
        for f in &self.fibers {
            f.validate()?;
            if !seen.insert(f.id.as_str()) {
                return Err(Error::DuplicateId(f.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    /// Number of fibers carrying each fine label, in `FineLabel::ALL` order.
    pub fn label_counts(&self) -> [usize; 9] {
        let mut counts = [0; 9];
        for f in &self.fibers {
            if let Some(l) = f.label {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

pub(crate) fn format_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> String {
    let mut out = String::new();
    for (i, p) in points.into_iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        // `Display` for f64 is the shortest string that parses back exactly.
        out.push_str(&format!("{},{},{}", p.x, p.y, p.z));
    }
    out
}

pub(crate) fn parse_points(s: &str, line: usize) -> Result<Vec<Point3>> {
    let err = |message: String| Error::Parse { line, message };
    s.split(';')
        .map(|triple| {
            let mut coords = triple.split(',');
            let mut next = || -> Result<f64> {
                let tok = coords
                    .next()
                    .ok_or_else(|| err(format!("point `{triple}` needs 3 coordinates")))?;
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("bad coordinate `{tok}`")))?;
                if !v.is_finite() {
                    return Err(err(format!("non-finite coordinate `{tok}`")));
                }
                Ok(v)
            };
            let p = Point3::new(next()?, next()?, next()?);
            if coords.next().is_some() {
                return Err(err(format!("point `{triple}` has more than 3 coordinates")));
            }
            Ok(p)
        })
        .collect()
}

pub(crate) fn parse_label(s: &str, line: usize) -> Result<Option<FineLabel>> {
    if s == "?" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|message| Error::Parse { line, message })
}

pub(crate) fn label_field(label: Option<FineLabel>) -> &'static str {
    label.map_or("?", FineLabel::name)
}

/// Parses the dataset text format: `id<TAB>label<TAB>x,y,z;x,y,z;...`.
pub fn parse_dataset(text: &str) -> Result<FiberDataset> {
    let mut fibers = Vec::new();
    let mut provenance: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if let Some(rest) = raw.strip_prefix(PROVENANCE_PREFIX) {
            provenance.push(rest);
            continue;
        }
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0];
        let label = parse_label(fields[1], line)?;
        let points = parse_points(fields[2], line)?;
        let fiber = Fiber::new(id, points, label).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        fibers.push(fiber);
    }
    Ok(FiberDataset {
        fibers,
        provenance: provenance.join("\n"),
    })
}

pub fn render_dataset(ds: &FiberDataset) -> String {
    let mut out = String::new();
    out.push_str(DATASET_HEADER);
    out.push('\n');
    if !ds.provenance.is_empty() {
        for line in ds.provenance.split('\n') {
            out.push_str(PROVENANCE_PREFIX);
            out.push_str(line);
            out.push('\n');
        }
    }
    for f in &ds.fibers {
        out.push_str(&f.id);
        out.push('\t');
        out.push_str(label_field(f.label));
        out.push('\t');
        out.push_str(&format_points(&f.points));
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<FiberDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(ds: &FiberDataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    let path = path.as_ref();
    fs::write(path, render_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn rotate_fiber(f: &Fiber, r: &RotationSpec) -> Result<Fiber> {
    r.check()?;
    Ok(Fiber {
        id: f.id.clone(),
        points: f.points.iter().map(|&p| r.apply(p)).collect(),
        label: f.label,
    })
}

/// Translates the fiber so its centroid sits at the origin.
pub fn center_fiber(f: &Fiber) -> Fiber {
    let c = f.centroid();
    Fiber {
        id: f.id.clone(),
        points: f.points.iter().map(|&p| p - c).collect(),
        label: f.label,
    }
}

/// Stratified, seeded split. Within each label group (fine labels in
/// enumeration order, unlabeled last) `floor(fraction * count)` fibers go to
/// the first part. Both parts keep the input order.
pub fn split_dataset(
    ds: &FiberDataset,
    fraction: f64,
    seed: u64,
) -> Result<(FiberDataset, FiberDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let groups: Vec<Option<FineLabel>> = FineLabel::ALL
        .iter()
        .copied()
        .map(Some)
        .chain(std::iter::once(None))
        .collect();
    let mut first = vec![false; ds.fibers.len()];
    for (g, group) in groups.iter().enumerate() {
        let mut members: Vec<usize> = ds
            .fibers
            .iter()
            .enumerate()
            .filter(|(_, f)| f.label == *group)
            .map(|(i, _)| i)
            .collect();
        let take = (fraction * members.len() as f64 + 1e-9).floor() as usize;
        let mut rng = rng::stream(seed, Domain::Split, g as u64);
        members.shuffle(&mut rng);
        for &i in &members[..take] {
            first[i] = true;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (f, in_first) in ds.fibers.iter().zip(first) {
        if in_first {
            a.push(f.clone());
        } else {
            b.push(f.clone());
        }
    }
    let note = |part: &str| {
        let mut p = ds.provenance.clone();
        if !p.is_empty() {
            p.push('\n');
        }
        p.push_str(&format!("split part={part} fraction={fraction} seed={seed}"));
        p
    };
    Ok((
        FiberDataset {
            fibers: a,
            provenance: note("first"),
        },
        FiberDataset {
            fibers: b,
            provenance: note("second"),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fiber(id: &str, pts: &[[f64; 3]], label: Option<FineLabel>) -> Fiber {
        Fiber::new(
            id,
            pts.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
            label,
        )
        .unwrap()
    }

    #[test]
    fn label_taxonomy() {
        assert_eq!(FineLabel::ALL.iter().filter(|l| l.is_white()).count(), 8);
        assert_eq!(FineLabel::Grey.coarse(), CoarseLabel::Grey);
        for l in FineLabel::WHITE {
            assert_eq!(l.coarse(), CoarseLabel::White);
            assert_eq!(l.name().parse::<FineLabel>().unwrap(), l);
        }
        assert_eq!(Level::Fine.class_of(FineLabel::Grey), None);
        assert_eq!(Level::Coarse.class_of(FineLabel::Fornix), Some(1));
        assert_eq!(Level::Fine.parse_class("Uncinate"), Some(7));
    }

    #[test]
    fn parses_single_record() {
        let ds = parse_dataset("f1\tGrey\t0,0,0;1,0,0\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.fibers[0].points.len(), 2);
        assert_eq!(ds.fibers[0].label, Some(FineLabel::Grey));
    }

    #[test]
    fn parses_absent_label() {
        let ds = parse_dataset("f1\t?\t0,0,0;1,1,1\n").unwrap();
        assert_eq!(ds.fibers[0].label, None);
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = parse_dataset("f1\tGrey\t0,0,0;1,0,0\nf1\tGrey\t0,0,0;1,0,0\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "f1"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "# header\nf1\tGrey\t0,0,0;1,0,0\nf2\tGrey\t0,0;1,0,0\n";
        match parse_dataset(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected error {e}"),
        }
        match parse_dataset("f1\tGrey\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected error {e}"),
        }
        assert!(parse_dataset("f1\tBogus\t0,0,0;1,0,0\n").is_err());
        assert!(parse_dataset("f1\tGrey\t0,0,0\n").is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(parse_dataset("f1\tGrey\t0,0,NaN;1,0,0\n").is_err());
        assert!(parse_dataset("f1\tGrey\t0,0,inf;1,0,0\n").is_err());
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let text = render_dataset(&FiberDataset::default());
        assert_eq!(text, format!("{DATASET_HEADER}\n"));
        assert_eq!(parse_dataset(&text).unwrap(), FiberDataset::default());
    }

    #[test]
    fn save_load_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fib");
        let ds = FiberDataset::new(
            vec![
                fiber("a", &[[0.1, 0.2, 0.3], [1e-300, -0.0, 123456.789]], Some(FineLabel::Fornix)),
                fiber("b", &[[1.0 / 3.0, 2.0, 3.0], [4.0, 5.0, 6.0]], None),
            ],
            "seed=1\nsecond line",
        )
        .unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.fibers[0].points[0].x, 0.1);
    }

    #[test]
    fn rotation_validation() {
        assert!(RotationSpec::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]).is_err());
        assert!(RotationSpec::new([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(RotationSpec::new(*RotationSpec::about_axis(Axis::Y, 33.0).matrix()).is_ok());
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let f = fiber("a", &[[1.0, 0.0, 0.0], [0.5, -2.0, 3.0]], Some(FineLabel::Arcuate));
        assert_eq!(rotate_fiber(&f, &RotationSpec::IDENTITY).unwrap(), f);
        let r = rotate_fiber(&f, &RotationSpec::about_axis(Axis::Z, 90.0)).unwrap();
        let p = r.points[0];
        assert!((p.x - 0.0).abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15 && p.z == 0.0);
        assert_eq!(r.id, f.id);
        assert_eq!(r.label, f.label);
    }

    #[test]
    fn centering_examples() {
        let f = fiber("a", &[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], None);
        assert_eq!(center_fiber(&f), f);
        let g = center_fiber(&fiber("b", &[[2.0, 2.0, 2.0], [4.0, 4.0, 4.0]], None));
        assert_eq!(g.points, vec![Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0)]);
    }

    #[test]
    fn split_counts() {
        let grey: Vec<Fiber> = (0..10)
            .map(|i| fiber(&format!("g{i}"), &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], Some(FineLabel::Grey)))
            .collect();
        let ds = FiberDataset::new(grey, "").unwrap();
        let (a, b) = split_dataset(&ds, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a2, b2) = split_dataset(&ds, 0.5, 3).unwrap();
        assert_eq!((a, b), (a2, b2));
        assert!(split_dataset(&ds, 0.0, 3).is_err());
        assert!(split_dataset(&ds, 1.0, 3).is_err());
    }

    #[test]
    fn split_stratifies_two_labels() {
        let mut fibers = Vec::new();
        for (k, label) in [FineLabel::Cingulum, FineLabel::Uncinate].into_iter().enumerate() {
            for i in 0..250 {
                fibers.push(fiber(&format!("{k}-{i}"), &[[0.0, 0.0, 0.0], [1.0, 0.0, i as f64]], Some(label)));
            }
        }
        let ds = FiberDataset::new(fibers, "").unwrap();
        let (train, test) = split_dataset(&ds, 0.8, 11).unwrap();
        let count = |d: &FiberDataset, l| d.fibers.iter().filter(|f| f.label == Some(l)).count();
        assert_eq!(count(&train, FineLabel::Cingulum), 200);
        assert_eq!(count(&train, FineLabel::Uncinate), 200);
        assert_eq!(count(&test, FineLabel::Cingulum), 50);
        assert_eq!(count(&test, FineLabel::Uncinate), 50);
    }

    fn arb_point() -> impl Strategy<Value = Point3> {
        (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    fn arb_fiber() -> impl Strategy<Value = Fiber> {
        prop::collection::vec(arb_point(), 2..40)
            .prop_map(|pts| Fiber::new("p", pts, Some(FineLabel::Cingulum)).unwrap())
    }

    fn arb_rotation() -> impl Strategy<Value = RotationSpec> {
        (0.0..360.0f64, 0.0..360.0f64, 0.0..360.0f64).prop_map(|(a, b, c)| {
            let r = RotationSpec::about_axis(Axis::Z, a)
                .compose(&RotationSpec::about_axis(Axis::Y, b))
                .compose(&RotationSpec::about_axis(Axis::X, c));
            RotationSpec::new(*r.matrix()).unwrap()
        })
    }

    fn distance_matrix(f: &Fiber) -> Vec<f64> {
        let mut out = Vec::new();
        for a in &f.points {
            for b in &f.points {
                out.push(a.distance(b));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn rotation_preserves_distances(f in arb_fiber(), r in arb_rotation()) {
            let g = rotate_fiber(&f, &r).unwrap();
            prop_assert_eq!(g.len(), f.len());
            for (d0, d1) in distance_matrix(&f).into_iter().zip(distance_matrix(&g)) {
                prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            }
            let back = rotate_fiber(&g, &r.transpose()).unwrap();
            for (p, q) in f.points.iter().zip(&back.points) {
                prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9 && (p.z - q.z).abs() < 1e-9);
            }
        }

        #[test]
        fn centering_zeroes_centroid(f in arb_fiber()) {
            let g = center_fiber(&f);
            prop_assert!(g.centroid().norm() < 1e-12);
            for (d0, d1) in distance_matrix(&f).into_iter().zip(distance_matrix(&g)) {
                prop_assert!((d0 - d1).abs() <= 1e-12 * d0.max(1.0));
            }
        }

        #[test]
        fn serialization_round_trip(fs in prop::collection::vec(
            (prop::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 2..6), 0usize..10), 0..6)
        ) {
            let fibers: Vec<Fiber> = fs.into_iter().enumerate().filter_map(|(i, (pts, l))| {
                let points: Vec<Point3> = pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
                let label = FineLabel::ALL.get(l).copied();
                Fiber::new(format!("f{i}"), points, label).ok()
            }).collect();
            let ds = FiberDataset::new(fibers, "prop").unwrap();
            let back = parse_dataset(&render_dataset(&ds)).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn split_partitions(n in 1usize..60, frac in 0.05..0.95f64, seed in any::<u64>()) {
            let fibers: Vec<Fiber> = (0..n).map(|i| Fiber::new(
                format!("f{i}"),
                vec![Point3::ZERO, Point3::new(i as f64, 0.0, 0.0)],
                if i % 3 == 0 { None } else { Some(FineLabel::ALL[i % 9]) },
            ).unwrap()).collect();
            let ds = FiberDataset::new(fibers, "").unwrap();
            let (a, b) = split_dataset(&ds, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            let mut ids: Vec<&str> = a.fibers.iter().chain(&b.fibers).map(|f| f.id.as_str()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            let again = split_dataset(&ds, frac, seed).unwrap();
            prop_assert_eq!(again.0, a);
        }
    }
}
