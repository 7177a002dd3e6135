//! Twin-tower fiber comparator.
//!
//! One tower (BLSTM → LSTM → dense → dense) maps a fiber to an embedding;
//! the same tower is applied to both fibers of a pair. The head scores the
//! pair as `σ(w · |e_a − e_b| + b)`, so identical fibers always receive
//! `σ(b)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fiber::Level;
use crate::nn::{gradcheck, Activation, BlstmLayer, BlstmTrace, Dense, LstmCell, LstmTrace, Matrix, Params};
use crate::preprocess::{ProcessedFiber, FEATURES};
use crate::rng::{self, Domain};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerConfig {
    pub blstm_hidden: usize,
    pub lstm_hidden: usize,
    pub dense_hidden: usize,
    pub embedding: usize,
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig {
            blstm_hidden: 32,
            lstm_hidden: 64,
            dense_hidden: 64,
            embedding: 32,
        }
    }
}

impl TowerConfig {
    /// Small tower used by the gradient-check suite.
    pub fn tiny() -> Self {
        TowerConfig {
            blstm_hidden: 4,
            lstm_hidden: 8,
            dense_hidden: 8,
            embedding: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.blstm_hidden, self.lstm_hidden, self.dense_hidden, self.embedding].contains(&0) {
            return Err(Error::Config(format!("tower sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub blstm: BlstmLayer,
    pub lstm: LstmCell,
    pub dense1: Dense,
    pub dense2: Dense,
}

impl Params for Tower {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.blstm.visit(f);
        self.lstm.visit(f);
        self.dense1.visit(f);
        self.dense2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.blstm.visit_mut(f);
        self.lstm.visit_mut(f);
        self.dense1.visit_mut(f);
        self.dense2.visit_mut(f);
    }
}

/// Every trainable tensor of the comparator: the single shared tower and
/// the similarity head. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseParams {
    pub tower: Tower,
    pub head: Dense,
}

impl Params for SiameseParams {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        self.tower.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.tower.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiameseModel {
    pub version: u32,
    pub level: Level,
    pub config: TowerConfig,
    pub params: SiameseParams,
}

/// Cached activations of one tower pass.
#[derive(Debug, Clone)]
pub struct TowerTrace {
    blstm: BlstmTrace,
    lstm: LstmTrace,
    summary: Vec<f64>,
    hidden: Vec<f64>,
    pub embedding: Vec<f64>,
}

/// One training example: two input sequences and a 0/1 target.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub left: &'a Matrix,
    pub right: &'a Matrix,
    pub target: f64,
}

impl SiameseModel {
    /// Fresh model with Glorot-uniform weights drawn from the `Init` stream
    /// of `seed`.
    pub fn new(config: TowerConfig, level: Level, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Domain::Init, 0);
        Ok(Self::init_with(config, level, &mut rng))
    }

    pub fn init_with(config: TowerConfig, level: Level, rng: &mut impl Rng) -> Self {
        let blstm = BlstmLayer::init(FEATURES, config.blstm_hidden, rng);
        let lstm = LstmCell::init(2 * config.blstm_hidden, config.lstm_hidden, rng);
        let dense1 = Dense::init(config.lstm_hidden, config.dense_hidden, Activation::ReLU, rng);
        let dense2 = Dense::init(config.dense_hidden, config.embedding, Activation::ReLU, rng);
        let head = Dense::init(config.embedding, 1, Activation::Sigmoid, rng);
        SiameseModel {
            version: MODEL_VERSION,
            level,
            config,
            params: SiameseParams {
                tower: Tower {
                    blstm,
                    lstm,
                    dense1,
                    dense2,
                },
                head,
            },
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    /// Checks that parameter shapes agree with `config`.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let t = &self.params.tower;
        let shapes_ok = t.blstm.forward.w.shape() == (4 * c.blstm_hidden, FEATURES)
            && t.blstm.backward.w.shape() == (4 * c.blstm_hidden, FEATURES)
            && t.blstm.forward.u.shape() == (4 * c.blstm_hidden, c.blstm_hidden)
            && t.blstm.backward.u.shape() == (4 * c.blstm_hidden, c.blstm_hidden)
            && t.blstm.forward.b.len() == 4 * c.blstm_hidden
            && t.blstm.backward.b.len() == 4 * c.blstm_hidden
            && t.lstm.w.shape() == (4 * c.lstm_hidden, 2 * c.blstm_hidden)
            && t.lstm.u.shape() == (4 * c.lstm_hidden, c.lstm_hidden)
            && t.lstm.b.len() == 4 * c.lstm_hidden
            && t.dense1.w.shape() == (c.dense_hidden, c.lstm_hidden)
            && t.dense1.b.len() == c.dense_hidden
            && t.dense2.w.shape() == (c.embedding, c.dense_hidden)
            && t.dense2.b.len() == c.embedding
            && self.params.head.w.shape() == (1, c.embedding)
            && self.params.head.b.len() == 1;
        if !shapes_ok {
            return Err(Error::Shape("model parameters do not match the tower config".into()));
        }
        if !self.params.all_finite() {
            return Err(Error::Shape("model has non-finite parameters".into()));
        }
        Ok(())
    }

    fn check_sequence(&self, x: &Matrix) -> Result<()> {
        if x.cols() != FEATURES || x.rows() == 0 {
            return Err(Error::Shape(format!(
                "tower input must be T x {FEATURES} with T >= 1, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn tower_trace(&self, x: &Matrix) -> TowerTrace {
        let t = &self.params.tower;
        let blstm = t.blstm.forward_trace(x);
        let blstm_out = BlstmLayer::output(&blstm);
        let lstm = t.lstm.forward_trace(&blstm_out);
        let summary = lstm.h.row(lstm.h.rows() - 1).to_vec();
        let hidden = t.dense1.forward(&summary);
        let embedding = t.dense2.forward(&hidden);
        TowerTrace {
            blstm,
            lstm,
            summary,
            hidden,
            embedding,
        }
    }

    fn tower_backward(&self, trace: &TowerTrace, d_embedding: &[f64], grads: &mut Tower) {
        let t = &self.params.tower;
        let d_hidden = t
            .dense2
            .backward(&trace.hidden, &trace.embedding, d_embedding, &mut grads.dense2);
        let d_summary = t
            .dense1
            .backward(&trace.summary, &trace.hidden, &d_hidden, &mut grads.dense1);
        let steps = trace.lstm.h.rows();
        let mut dh = Matrix::zeros(steps, t.lstm.hidden_size());
        dh.row_mut(steps - 1).copy_from_slice(&d_summary);
        let d_blstm_out = t.lstm.backward(&trace.lstm, &dh, &mut grads.lstm);
        t.blstm.backward(&trace.blstm, &d_blstm_out, &mut grads.blstm);
    }

    /// Embedding of an arbitrary `T × 3` sequence.
    pub fn embed_sequence(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_sequence(x)?;
        Ok(self.tower_trace(x).embedding)
    }

    /// All 100 rows, padding included, go through the tower; the LSTM state
    /// after the last row feeds the dense stack.
    pub fn embed(&self, f: &ProcessedFiber) -> Vec<f64> {
        self.tower_trace(f.features()).embedding
    }

    pub fn embed_all(&self, fibers: &[ProcessedFiber]) -> Vec<Vec<f64>> {
        fibers.par_iter().map(|f| self.embed(f)).collect()
    }

    /// Head output for two precomputed embeddings.
    pub fn score_embeddings(&self, a: &[f64], b: &[f64]) -> f64 {
        let distance: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
        self.params.head.forward(&distance)[0]
    }

    pub fn score_pair(&self, a: &ProcessedFiber, b: &ProcessedFiber) -> f64 {
        self.score_embeddings(&self.embed(a), &self.embed(b))
    }

    pub fn score_sequences(&self, a: &Matrix, b: &Matrix) -> Result<f64> {
        Ok(self.score_embeddings(&self.embed_sequence(a)?, &self.embed_sequence(b)?))
    }

    fn pair_forward(&self, pair: &PairInput<'_>) -> (TowerTrace, TowerTrace, Vec<f64>, f64) {
        let ta = self.tower_trace(pair.left);
        let tb = self.tower_trace(pair.right);
        let distance: Vec<f64> = ta
            .embedding
            .iter()
            .zip(&tb.embedding)
            .map(|(x, y)| (x - y).abs())
            .collect();
        let score = self.params.head.forward(&distance)[0];
        (ta, tb, distance, score)
    }

    /// Mean squared error of the scores over `pairs`.
    pub fn batch_loss(&self, pairs: &[PairInput<'_>]) -> f64 {
        let errors: Vec<f64> = pairs
            .par_iter()
            .map(|p| {
                let (_, _, _, s) = self.pair_forward(p);
                (s - p.target) * (s - p.target)
            })
            .collect();
        errors.iter().sum::<f64>() / pairs.len() as f64
    }

    /// Mean batch loss and its exact gradient with respect to every
    /// parameter. Per-pair gradients are reduced in pair order, so the result
    /// does not depend on thread count.
    pub fn loss_and_gradient(&self, pairs: &[PairInput<'_>]) -> Result<(f64, SiameseParams)> {
        if pairs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for p in pairs {
            self.check_sequence(p.left)?;
            self.check_sequence(p.right)?;
        }
        let n = pairs.len() as f64;
        let per_pair: Vec<(f64, SiameseParams)> = pairs
            .par_iter()
            .map(|p| {
                let mut g = self.params.zeros_like();
                let (ta, tb, distance, score) = self.pair_forward(p);
                let err = score - p.target;
                let d_score = 2.0 * err / n;
                let d_distance = self
                    .params
                    .head
                    .backward(&distance, &[score], &[d_score], &mut g.head);
                // subgradient of |x| at 0 is taken as 0
                let d_a: Vec<f64> = d_distance
                    .iter()
                    .zip(ta.embedding.iter().zip(&tb.embedding))
                    .map(|(&dd, (&ea, &eb))| {
                        let diff = ea - eb;
                        if diff > 0.0 {
                            dd
                        } else if diff < 0.0 {
                            -dd
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let d_b: Vec<f64> = d_a.iter().map(|v| -v).collect();
                self.tower_backward(&ta, &d_a, &mut g.tower);
                self.tower_backward(&tb, &d_b, &mut g.tower);
                (err * err, g)
            })
            .collect();
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &per_pair {
            loss += l;
            grads.add_assign(g);
        }
        debug_assert!(grads.all_finite());
        Ok((loss / n, grads))
    }

    /// Distance of `pairs` to the nearest non-differentiable point: the
    /// smallest |pre-activation| of any ReLU unit and the smallest nonzero
    /// embedding gap fed to the L1 distance.
    pub fn kink_margin(&self, pairs: &[PairInput<'_>]) -> f64 {
        let t = &self.params.tower;
        let mut margin = f64::INFINITY;
        for p in pairs {
            let ta = self.tower_trace(p.left);
            let tb = self.tower_trace(p.right);
            for tr in [&ta, &tb] {
                let z1 = t.dense1.pre_activation(&tr.summary);
                let z2 = t.dense2.pre_activation(&tr.hidden);
                for z in z1.iter().chain(&z2) {
                    margin = margin.min(z.abs());
                }
            }
            for (a, b) in ta.embedding.iter().zip(&tb.embedding) {
                if *a > 0.0 || *b > 0.0 {
                    margin = margin.min((a - b).abs());
                }
            }
        }
        margin
    }

    /// Largest relative error between the analytic gradient and central
    /// differences with step `eps`, over every parameter.
    pub fn finite_diff_check(&self, pairs: &[PairInput<'_>], eps: f64) -> Result<f64> {
        let (_, analytic) = self.loss_and_gradient(pairs)?;
        let mut probe = self.clone();
        let mut flat = self.params.to_flat();
        Ok(gradcheck::check_gradient(
            &mut flat,
            |theta| {
                probe.params.set_flat(theta);
                probe.batch_loss(pairs)
            },
            &analytic.to_flat(),
            eps,
        ))
    }
}

pub const GRADCHECK_SEQ_LEN: usize = 8;
pub const GRADCHECK_PAIRS: usize = 11;
const GRADCHECK_RANGE: f64 = 6.0;
const GRADCHECK_TARGET: f64 = 0.5;
const KINK_MARGIN: f64 = 1e-4;
const MAX_DRAWS: u64 = 64;

/// Finite-difference check of a freshly initialized tiny model on random
/// length-8 sequence pairs, all derived from `seed`. Inputs closer than
/// `KINK_MARGIN` to a ReLU or L1 kink are redrawn.
pub fn tiny_gradcheck(seed: u64, eps: f64) -> Result<f64> {
    let model = SiameseModel::new(TowerConfig::tiny(), Level::Fine, seed)?;
    for draw in 0..MAX_DRAWS {
        let mut r = rng::stream(seed, Domain::Batch, u64::MAX - draw);
        let seqs: Vec<Matrix> = (0..2 * GRADCHECK_PAIRS)
            .map(|_| {
                let data = (0..GRADCHECK_SEQ_LEN * FEATURES)
                    .map(|_| r.random_range(-GRADCHECK_RANGE..GRADCHECK_RANGE))
                    .collect();
                Matrix::from_vec(GRADCHECK_SEQ_LEN, FEATURES, data).expect("shape")
            })
            .collect();
        let pairs: Vec<PairInput> = seqs
            .chunks(2)
            .map(|c| PairInput {
                left: &c[0],
                right: &c[1],
                target: GRADCHECK_TARGET,
            })
            .collect();
        if model.kink_margin(&pairs) >= KINK_MARGIN {
            return model.finite_diff_check(&pairs, eps);
        }
    }
    Err(Error::Config(format!("no kink-free inputs for gradcheck seed {seed}")))
}
