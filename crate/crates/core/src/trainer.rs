//! Training loop and checkpoints.
//!
//! Each iteration draws one 11-pair batch, takes the mean squared error of
//! the 11 similarity scores against their 0/1 targets, backpropagates and
//! applies one Adam step. Batch `k` depends only on `(seed, k)`, so a run
//! resumed from a checkpoint replays the uninterrupted run bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::Level;
use crate::nn::{adam_update, AdamConfig, AdamState, Params};
use crate::pairing::{BatchStream, ClassPools, BATCH_SIZE};
use crate::preprocess::ProcessedFiber;
use crate::siamese::{SiameseModel, TowerConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub level: Level,
    pub iterations: usize,
    /// Pairs per iteration. Overrides of the default 11 must be
    /// a multiple of 11; each iteration then consumes that many batches.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub tower: TowerConfig,
    pub data_path: Option<String>,
    pub checkpoint_path: Option<String>,
}

impl TrainConfig {
    pub fn new(level: Level, seed: u64) -> Self {
        TrainConfig {
            level,
            iterations: DEFAULT_ITERATIONS,
            batch_size: BATCH_SIZE,
            adam: AdamConfig::default(),
            seed,
            tower: TowerConfig::default(),
            data_path: None,
            checkpoint_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % BATCH_SIZE != 0 {
            return Err(Error::Config(format!(
                "batch size must be a positive multiple of {BATCH_SIZE}, got {}",
                self.batch_size
            )));
        }
        self.adam.validate()?;
        self.tower.validate()
    }

    pub fn is_override(&self) -> bool {
        self.batch_size != BATCH_SIZE
    }

    fn batches_per_iteration(&self) -> u64 {
        (self.batch_size / BATCH_SIZE) as u64
    }
}

/// Batch-stream position. Batches are derived from `(seed, index)`, so
/// this pair is the whole RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_batch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub iteration: usize,
    pub rng: RngState,
    pub model: SiameseModel,
    pub adam: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
}

pub struct Trainer {
    config: TrainConfig,
    model: SiameseModel,
    adam: AdamState,
    iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = SiameseModel::new(config.tower, config.level, config.seed)?;
        let adam = AdamState::new(model.num_params(), config.adam);
        Ok(Trainer {
            config,
            model,
            adam,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let expected = ckpt.iteration as u64 * ckpt.config.batches_per_iteration();
        if ckpt.rng.next_batch != expected || ckpt.rng.seed != ckpt.config.seed {
            return Err(Error::Config("checkpoint RNG state disagrees with its iteration".into()));
        }
        Ok(Trainer {
            config: ckpt.config,
            model: ckpt.model,
            adam: ckpt.adam,
            iteration: ckpt.iteration,
        })
    }

    pub fn model(&self) -> &SiameseModel {
        &self.model
    }

    pub fn into_model(self) -> SiameseModel {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Sets the total iteration target (used when resuming with a new goal).
    pub fn set_iterations(&mut self, iterations: usize) {
        self.config.iterations = iterations;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            iteration: self.iteration,
            rng: RngState {
                seed: self.config.seed,
                next_batch: self.iteration as u64 * self.config.batches_per_iteration(),
            },
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Trains until `config.iterations` iterations have been completed,
    /// calling `on_step` after each one.
    pub fn run(
        &mut self,
        fibers: &[ProcessedFiber],
        mut on_step: impl FnMut(&LogEntry),
    ) -> Result<Vec<LogEntry>> {
        let pools = ClassPools::new(fibers, self.config.level);
        let per_iter = self.config.batches_per_iteration();
        let mut stream = BatchStream::starting_at(&pools, self.config.seed, self.iteration as u64 * per_iter)?;
        let mut log = Vec::new();
        while self.iteration < self.config.iterations {
            let mut inputs = Vec::with_capacity(self.config.batch_size);
            for _ in 0..per_iter {
                let batch = stream.next().expect("batch stream is endless");
                inputs.extend(batch.inputs(fibers));
            }
            let (loss, grads) = self.model.loss_and_gradient(&inputs)?;
            self.iteration += 1;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: self.iteration,
                });
            }
            let mut flat = self.model.params.to_flat();
            adam_update(&mut flat, &grads.to_flat(), &mut self.adam)?;
            self.model.params.set_flat(&flat);
            let entry = LogEntry {
                iteration: self.iteration,
                loss,
            };
            on_step(&entry);
            log.push(entry);
        }
        Ok(log)
    }
}

pub struct TrainOutcome {
    pub model: SiameseModel,
    pub log: Vec<LogEntry>,
    pub checkpoint: Checkpoint,
}

pub fn train(cfg: &TrainConfig, fibers: &[ProcessedFiber]) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let log = trainer.run(fibers, |_| {})?;
    let checkpoint = trainer.checkpoint();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        checkpoint,
    })
}

pub fn render_checkpoint(ckpt: &Checkpoint) -> Result<String> {
    serde_json::to_string_pretty(ckpt).map_err(|e| Error::Config(format!("cannot serialize checkpoint: {e}")))
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: u32,
    }
    let corrupt = |e: serde_json::Error| Error::CorruptCheckpoint {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(corrupt)?;
    if probe.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: probe.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(corrupt)?;
    ckpt.model.validate()?;
    if ckpt.adam.m.len() != ckpt.model.num_params() || ckpt.adam.v.len() != ckpt.model.num_params() {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}

pub fn render_log(log: &[LogEntry]) -> String {
    let mut out = String::from("iteration\tloss\n");
    for e in log {
        out.push_str(&format!("{}\t{}\n", e.iteration, e.loss));
    }
    out
}

pub fn save_log(log: &[LogEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(render_log(log).as_bytes()).map_err(|e| Error::io(path, e))
}
