//! Seeded synthetic fiber corpus.
//!
//! Each white tract is a fixed smooth parametric curve over `u ∈ [0, 1]`,
//! spanning roughly 6 to 10 mm. Fibers sample their tract's template at
//! `u_j = j / (n - 1)`, add isotropic Gaussian jitter and a random translation
//! of up to 1.5 mm per axis. Grey fibers are short (2 to 4 mm) random curves lying on a
//! sphere of radius 12 mm that encloses the templates.
//!
//! | tract                   | template                                    |
//! |-------------------------|---------------------------------------------|
//! | Arcuate                 | semicircle, radius 4, xy plane              |
//! | Cingulum                | helix, radius 1.5, 1.5 turns along z        |
//! | Corticospinal           | three-quarter circle, radius 3, xz plane    |
//! | ForcepsMajor            | S-curve along x                             |
//! | Fornix                  | J-hook: straight along y, curling into z    |
//! | InferiorOccipitofrontal | deep parabolic U in the yz plane            |
//! | SuperiorLongitudinal    | shallow arc in the xz plane                 |
//! | Uncinate                | straight diagonal segment                   |

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fiber::{Fiber, FiberDataset, FineLabel, Point3};
use crate::rng::{self, Domain};

pub const GENERATOR_VERSION: u32 = 1;

const GREY_SHELL_RADIUS: f64 = 12.0;
const MAX_OFFSET: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub per_white_class: usize,
    pub grey_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub length_range: (usize, usize),
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            per_white_class: 200,
            grey_fraction: 0.9,
            noise_sigma: 0.3,
            seed: 0,
            length_range: (36, 120),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.per_white_class < 1 {
            return bad("per_white_class must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.grey_fraction) {
            return bad(format!("grey_fraction must lie in [0, 1), got {}", self.grey_fraction));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        let (lo, hi) = self.length_range;
        if lo < 2 || hi > 1000 || lo > hi {
            return bad(format!("length_range {lo}..{hi} must satisfy 2 <= min <= max <= 1000"));
        }
        Ok(())
    }

    pub fn white_count(&self) -> usize {
        8 * self.per_white_class
    }

    /// Grey count `g` such that `g / (white + g)` equals `grey_fraction`.
    pub fn grey_count(&self) -> usize {
        let white = self.white_count() as f64;
        (white * self.grey_fraction / (1.0 - self.grey_fraction)).round() as usize
    }

    pub fn provenance(&self) -> String {
        format!(
            "fs2net-synthgen v{GENERATOR_VERSION} per_white_class={} grey_fraction={} noise_sigma={} seed={} length_range={}..{}",
            self.per_white_class,
            self.grey_fraction,
            self.noise_sigma,
            self.seed,
            self.length_range.0,
            self.length_range.1
        )
    }
}

/// Noise-free template of a white tract at parameter `u ∈ [0, 1]`.
///
/// Panics on `FineLabel::Grey`, which has no template.
pub fn template_point(label: FineLabel, u: f64) -> Point3 {
    match label {
        FineLabel::Arcuate => Point3::new(4.0 * (PI * u).cos(), 4.0 * (PI * u).sin(), 0.0),
        FineLabel::Cingulum => {
            let a = 3.0 * PI * u;
            Point3::new(1.5 * a.cos(), 1.5 * a.sin(), 8.0 * u - 4.0)
        }
        FineLabel::Corticospinal => {
            let a = 1.5 * PI * u + 0.25 * PI;
            Point3::new(3.0 * a.cos(), 0.0, 3.0 * a.sin())
        }
        FineLabel::ForcepsMajor => Point3::new(8.0 * u - 4.0, 2.0 * (2.0 * PI * u).sin(), 0.0),
        FineLabel::Fornix => {
            // smoothstep-eased curl over the second half
            let s = ((u - 0.5) / 0.5).clamp(0.0, 1.0);
            let w = s * s * (3.0 - 2.0 * s);
            let a = PI * w;
            Point3::new(0.3 * u, 6.0 * u - 3.0 - 1.5 * a.sin(), 1.5 * (1.0 - a.cos()))
        }
        FineLabel::InferiorOccipitofrontal => {
            let v = 2.0 * u - 1.0;
            Point3::new(0.0, 3.0 * v, 4.0 * v * v)
        }
        FineLabel::SuperiorLongitudinal => Point3::new(9.0 * u - 4.5, 0.0, 2.5 * (PI * u).sin()),
        FineLabel::Uncinate => {
            let v = 2.0 * u - 1.0;
            Point3::new(3.0 * v, -2.0 * v, 2.0 * v)
        }
        FineLabel::Grey => panic!("grey matter has no template"),
    }
}

/// Samples a template at `n` evenly spaced parameters.
pub fn sample_template(label: FineLabel, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|j| template_point(label, j as f64 / (n - 1) as f64))
        .collect()
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> Point3 {
    if sigma == 0.0 {
        return Point3::ZERO;
    }
    let mut g = || rng.sample::<f64, _>(StandardNormal) * sigma;
    Point3::new(g(), g(), g())
}

fn unit_vector(rng: &mut impl Rng) -> Point3 {
    loop {
        let p = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = p.norm();
        if n > 1e-3 && n <= 1.0 {
            return p * (1.0 / n);
        }
    }
}

fn cross(a: Point3, b: Point3) -> Point3 {
    Point3::new(
        a.y * b.z - a.z * b.y,
        a.z * b.x - a.x * b.z,
        a.x * b.y - a.y * b.x,
    )
}

fn dot(a: Point3, b: Point3) -> f64 {
    a.x * b.x + a.y * b.y + a.z * b.z
}

fn white_fiber(cfg: &GenConfig, label: FineLabel, index: usize) -> Vec<Point3> {
    let mut rng = rng::stream(cfg.seed, Domain::Generator, index as u64);
    let n = rng.random_range(cfg.length_range.0..=cfg.length_range.1);
    let offset = Point3::new(
        rng.random_range(-MAX_OFFSET..MAX_OFFSET),
        rng.random_range(-MAX_OFFSET..MAX_OFFSET),
        rng.random_range(-MAX_OFFSET..MAX_OFFSET),
    );
    sample_template(label, n)
        .into_iter()
        .map(|p| p + offset + gaussian(&mut rng, cfg.noise_sigma))
        .collect()
}

fn grey_fiber(cfg: &GenConfig, index: usize) -> Vec<Point3> {
    let mut rng = rng::stream(cfg.seed, Domain::Generator, index as u64);
    let n = rng.random_range(cfg.length_range.0..=cfg.length_range.1);
    let centre = unit_vector(&mut rng);
    let helper = unit_vector(&mut rng);
    let mut tangent = helper - centre * dot(helper, centre);
    if tangent.norm() < 1e-6 {
        tangent = cross(centre, Point3::new(0.0, 0.0, 1.0));
        if tangent.norm() < 1e-6 {
            tangent = Point3::new(1.0, 0.0, 0.0);
        }
    }
    let tangent = tangent * (1.0 / tangent.norm());
    let binormal = cross(centre, tangent);
    let length = rng.random_range(2.0..4.0);
    let bend = rng.random_range(-0.3..0.3);
    (0..n)
        .map(|j| {
            let s = (j as f64 / (n - 1) as f64 - 0.5) * length;
            let dir = centre + (tangent * s + binormal * (0.5 * bend * s * s)) * (1.0 / GREY_SHELL_RADIUS);
            dir * (GREY_SHELL_RADIUS / dir.norm()) + gaussian(&mut rng, cfg.noise_sigma)
        })
        .collect()
}

/// Generates the labeled corpus: white tracts in `FineLabel::WHITE` order,
/// `per_white_class` each, followed by the grey fibers.
pub fn generate_corpus(cfg: &GenConfig) -> Result<FiberDataset> {
    cfg.validate()?;
    let white = cfg.white_count();
    let total = white + cfg.grey_count();
    let fibers = (0..total)
        .map(|index| {
            let (label, points) = if index < white {
                let label = FineLabel::WHITE[index / cfg.per_white_class];
                (label, white_fiber(cfg, label, index))
            } else {
                (FineLabel::Grey, grey_fiber(cfg, index))
            };
            Fiber::new(format!("f{index:06}"), points, Some(label))
        })
        .collect::<Result<Vec<_>>>()?;
    FiberDataset::new(fibers, cfg.provenance())
}
