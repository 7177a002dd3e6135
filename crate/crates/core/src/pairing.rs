//! Class-structured pair batches.
//!
//! A batch has 11 pairs and one anchor class. All similar pairs are drawn
//! from the anchor class; every dissimilar pair puts an anchor fiber on the
//! left and spreads the right-hand fibers evenly over the other classes.
//! Fine level: 4 similar + 7 dissimilar (one per other white tract).
//! Coarse level: 5 similar + 6 dissimilar (all against the other class).

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fiber::Level;
use crate::preprocess::ProcessedFiber;
use crate::rng::{self, Domain, Rng};
use crate::siamese::PairInput;

pub const BATCH_SIZE: usize = 11;

/// Similar-pair count of an 11-pair batch at `level`.
pub fn similar_per_batch(level: Level) -> usize {
    match level {
        Level::Fine => 4,
        Level::Coarse => 5,
    }
}

/// Pair of fibers addressed by index into the processed dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FiberPair {
    pub left: usize,
    pub right: usize,
    /// 1 when both fibers share the level's class, else 0.
    pub target: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub anchor_class: usize,
    pub pairs: Vec<FiberPair>,
}

impl Batch {
    pub fn inputs<'a>(&self, fibers: &'a [ProcessedFiber]) -> Vec<PairInput<'a>> {
        self.pairs
            .iter()
            .map(|p| PairInput {
                left: fibers[p.left].features(),
                right: fibers[p.right].features(),
                target: p.target as f64,
            })
            .collect()
    }

    pub fn similar_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.target == 1).count()
    }
}

/// Fiber indices grouped by class at one level. Fibers without a label, or
/// without a class at this level (grey at fine level), are left out.
#[derive(Debug, Clone)]
pub struct ClassPools {
    level: Level,
    members: Vec<Vec<usize>>,
}

impl ClassPools {
    pub fn new(fibers: &[ProcessedFiber], level: Level) -> Self {
        let mut members = vec![Vec::new(); level.num_classes()];
        for (i, f) in fibers.iter().enumerate() {
            if let Some(c) = f.label.and_then(|l| level.class_of(l)) {
                members[c].push(i);
            }
        }
        ClassPools { level, members }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// Errors unless every class can serve as anchor (≥ 2 fibers).
    pub fn check_all_anchors(&self) -> Result<()> {
        for c in 0..self.level.num_classes() {
            self.require(c, 2)?;
        }
        Ok(())
    }

    fn require(&self, class: usize, required: usize) -> Result<()> {
        let available = self.members[class].len();
        if available < required {
            return Err(Error::Underpopulated {
                class: self.level.class_name(class).to_string(),
                available,
                required,
            });
        }
        Ok(())
    }
}

/// Draws without replacement, reshuffling only once the pool is exhausted.
struct Draw<'a> {
    pool: &'a [usize],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Draw<'a> {
    fn new(pool: &'a [usize], rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        Draw { pool, order, pos: 0 }
    }

    fn next(&mut self, rng: &mut Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.pool[self.order[self.pos - 1]]
    }

    fn next_except(&mut self, avoid: usize, rng: &mut Rng) -> usize {
        loop {
            let v = self.next(rng);
            if v != avoid {
                return v;
            }
        }
    }
}

/// One 11-pair batch around `anchor`.
pub fn make_batch(pools: &ClassPools, anchor: usize, rng: &mut Rng) -> Result<Batch> {
    let level = pools.level;
    let classes = level.num_classes();
    if anchor >= classes {
        return Err(Error::Config(format!("anchor class {anchor} out of range for {level} level")));
    }
    pools.require(anchor, 2)?;
    let others: Vec<usize> = (0..classes).filter(|&c| c != anchor).collect();
    for &c in &others {
        pools.require(c, 1)?;
    }
    let similar = similar_per_batch(level);
    let per_other = (BATCH_SIZE - similar) / others.len();

    let mut anchors = Draw::new(pools.members(anchor), rng);
    let mut other_draws: Vec<Draw> = others
        .iter()
        .map(|&c| Draw::new(pools.members(c), rng))
        .collect();
    let mut pairs = Vec::with_capacity(BATCH_SIZE);
    for _ in 0..similar {
        let left = anchors.next(rng);
        let right = anchors.next_except(left, rng);
        pairs.push(FiberPair { left, right, target: 1 });
    }
    for draw in &mut other_draws {
        for _ in 0..per_other {
            let left = anchors.next(rng);
            let right = draw.next(rng);
            pairs.push(FiberPair { left, right, target: 0 });
        }
    }
    debug_assert_eq!(pairs.len(), BATCH_SIZE);
    Ok(Batch {
        anchor_class: anchor,
        pairs,
    })
}

/// Endless batch sequence. Iteration `k` anchors on class `k mod classes`
/// and draws from the stream keyed by `(seed, k)`, so any suffix can be
/// regenerated from its starting index.
pub struct BatchStream<'a> {
    pools: &'a ClassPools,
    seed: u64,
    next: u64,
}

impl<'a> BatchStream<'a> {
    pub fn starting_at(pools: &'a ClassPools, seed: u64, iteration: u64) -> Result<Self> {
        pools.check_all_anchors()?;
        Ok(BatchStream {
            pools,
            seed,
            next: iteration,
        })
    }

    pub fn next_index(&self) -> u64 {
        self.next
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let k = self.next;
        self.next += 1;
        let anchor = (k % self.pools.level.num_classes() as u64) as usize;
        let mut rng = rng::stream(self.seed, Domain::Batch, k);
        // populations were checked when the stream was created
        Some(make_batch(self.pools, anchor, &mut rng).expect("class pools validated"))
    }
}

pub fn batch_stream(pools: &ClassPools, seed: u64) -> Result<BatchStream<'_>> {
    BatchStream::starting_at(pools, seed, 0)
}
