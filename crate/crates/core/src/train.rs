//! BPR objectives, Adam and the training loop.
//!
//! Losses are minimized: each triple contributes `-ln sigmoid(s_ui - s_uj)`
//! with scores taken from the propagated embeddings. Gradients are pushed back
//! through the propagation to the layer-0 tables, so every row within `L`
//! hops of a sampled node receives a gradient.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::eval::{evaluate, EvalError};
use crate::graph::PogGraph;
use crate::model::{dot, EmbeddingModel, Matrix, ModelError, Propagator};
use crate::sampler::{Sampler, SamplerError, SamplerMode, TrainTriple};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, last_finite: Box<EmbeddingModel> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub sampler: SamplerMode,
    pub adam: AdamParams,
    /// Validation runs every `eval_every` epochs.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    /// Cutoff of the validation NDCG.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            l2_reg: 1e-4,
            epochs: 100,
            batch_size: 1024,
            gamma: 1.0,
            seed: 0,
            sampler: SamplerMode::PartialOrder,
            adam: AdamParams::default(),
            eval_every: 5,
            patience: 10,
            eval_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.l2_reg < 0.0 || !self.l2_reg.is_finite() {
            return Err(TrainError::InvalidConfig(format!("l2_reg must be non-negative, got {}", self.l2_reg)));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 || self.eval_k == 0 {
            return Err(TrainError::InvalidConfig("eval_every and eval_k must be at least 1".into()));
        }
        if !self.gamma.is_finite() {
            return Err(TrainError::InvalidConfig(format!("gamma must be finite, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Loss value with gradients for the layer-0 tables.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Ranking part of the loss, without regularization.
    pub ranking: f64,
    pub grad_users: Matrix,
    pub grad_items: Matrix,
}

/// `-ln sigmoid(x)`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sum_t w_t * -ln sigmoid(s_u,pos - s_u,neg) + l2_reg * sum_r ||e0_r||^2`
/// where `r` runs over the distinct layer-0 rows named by any triple.
pub fn weighted_bpr_loss(
    model: &EmbeddingModel,
    prop: &Propagator<'_>,
    triples: &[(f64, TrainTriple)],
    l2_reg: f64,
) -> Result<LossOutput, TrainError> {
    prop.check(model)?;
    let (users, items) = prop.apply(&model.users, &model.items);
    let dim = model.dim();
    let mut gu = Matrix::zeros(model.n_users(), dim);
    let mut gi = Matrix::zeros(model.n_items(), dim);
    let mut ranking = 0.0;
    let mut diff = vec![0.0; dim];
    for &(w, t) in triples {
        let eu = users.row(t.user as usize);
        let ep = items.row(t.pos as usize);
        let en = items.row(t.neg as usize);
        for ((d, p), n) in diff.iter_mut().zip(ep).zip(en) {
            *d = p - n;
        }
        let x = dot(eu, &diff);
        ranking += w * neg_log_sigmoid(x);
        // d/dx -ln sigmoid(x) = -sigmoid(-x)
        let g = -w * sigmoid(-x);
        for (o, d) in gu.row_mut(t.user as usize).iter_mut().zip(&diff) {
            *o += g * d;
        }
        for (o, e) in gi.row_mut(t.pos as usize).iter_mut().zip(eu) {
            *o += g * e;
        }
        for (o, e) in gi.row_mut(t.neg as usize).iter_mut().zip(eu) {
            *o -= g * e;
        }
    }
    // the averaged propagation operator is symmetric
    let (mut grad_users, mut grad_items) = prop.apply(&gu, &gi);

    let mut reg = 0.0;
    if l2_reg > 0.0 {
        let touched_users: BTreeSet<u32> = triples.iter().map(|(_, t)| t.user).collect();
        let touched_items: BTreeSet<u32> = triples.iter().flat_map(|(_, t)| [t.pos, t.neg]).collect();
        for u in touched_users {
            let row = model.users.row(u as usize);
            reg += dot(row, row);
            for (g, x) in grad_users.row_mut(u as usize).iter_mut().zip(row) {
                *g += 2.0 * l2_reg * x;
            }
        }
        for i in touched_items {
            let row = model.items.row(i as usize);
            reg += dot(row, row);
            for (g, x) in grad_items.row_mut(i as usize).iter_mut().zip(row) {
                *g += 2.0 * l2_reg * x;
            }
        }
    }
    let loss = ranking + l2_reg * reg;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok(LossOutput { loss, ranking, grad_users, grad_items })
}

/// Partial-order BPR loss over sampled triples (unit weight each).
pub fn pobpr_loss(
    model: &EmbeddingModel,
    prop: &Propagator<'_>,
    triples: &[TrainTriple],
    l2_reg: f64,
) -> Result<LossOutput, TrainError> {
    let weighted: Vec<(f64, TrainTriple)> = triples.iter().map(|&t| (1.0, t)).collect();
    weighted_bpr_loss(model, prop, &weighted, l2_reg)
}

/// Multi-task BPR: `sum_k alpha_k * BPR(triples of behavior k)` plus the same
/// regularizer. `tasks[k]` holds the triples of behavior `k`.
pub fn mtl_bpr_loss(
    model: &EmbeddingModel,
    prop: &Propagator<'_>,
    tasks: &[Vec<TrainTriple>],
    alphas: &[f64],
    l2_reg: f64,
) -> Result<LossOutput, TrainError> {
    if tasks.len() != alphas.len() {
        return Err(TrainError::InvalidConfig(format!("{} tasks but {} weights", tasks.len(), alphas.len())));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(TrainError::InvalidConfig(format!("task weight {a} must be non-negative")));
    }
    let weighted: Vec<(f64, TrainTriple)> =
        tasks.iter().zip(alphas).flat_map(|(ts, &a)| ts.iter().map(move |&t| (a, t))).collect();
    weighted_bpr_loss(model, prop, &weighted, l2_reg)
}

/// Adam over both embedding tables.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    lr: f64,
    t: i32,
    m: [Vec<f64>; 2],
    v: [Vec<f64>; 2],
}

impl Adam {
    pub fn new(model: &EmbeddingModel, lr: f64, params: AdamParams) -> Self {
        let nu = model.users.as_slice().len();
        let ni = model.items.as_slice().len();
        Adam { params, lr, t: 0, m: [vec![0.0; nu], vec![0.0; ni]], v: [vec![0.0; nu], vec![0.0; ni]] }
    }

    pub fn step(&mut self, model: &mut EmbeddingModel, grad_users: &Matrix, grad_items: &Matrix) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let tables =
            [(model.users.as_mut_slice(), grad_users.as_slice()), (model.items.as_mut_slice(), grad_items.as_slice())];
        for (k, (theta, grad)) in tables.into_iter().enumerate() {
            for (((x, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean loss per sampled triple over the epoch.
    pub loss: f64,
    pub val_mean_ndcg: Option<f64>,
}

impl LogRecord {
    pub fn to_tsv_line(&self) -> String {
        let val = self.val_mean_ndcg.map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!("{}\t{}\t{}\t{}", self.epoch, self.step, self.loss, val)
    }
}

/// Held-out data for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Best validation model with its epoch and score.
    pub best: Option<(usize, f64, EmbeddingModel)>,
    pub log: Vec<LogRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Best validation model when validation ran, else the final model.
    pub fn selected(&self) -> &EmbeddingModel {
        self.best.as_ref().map_or(&self.model, |(_, _, m)| m)
    }
}

/// Trains `model` in place on `graph`. One epoch is `ceil(|edges| / batch)`
/// batches drawn with replacement.
pub fn train(
    graph: &PogGraph,
    mut model: EmbeddingModel,
    config: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let prop = Propagator::new(graph, model.layers);
    prop.check(&model)?;
    let sampler = Sampler::new(graph, &config.sampler, config.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model, config.lr, config.adam);
    let steps_per_epoch = graph.n_edges().div_ceil(config.batch_size);

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, EmbeddingModel)> = None;
    let mut since_best = 0usize;
    let mut step = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        let mut drawn = 0usize;
        let last_finite = model.clone();
        for _ in 0..steps_per_epoch {
            let batch = sampler.sample_batch(config.batch_size, &mut rng);
            let out = match pobpr_loss(&model, &prop, &batch, config.l2_reg) {
                Ok(out) => out,
                Err(TrainError::NonFiniteLoss) => {
                    return Err(TrainError::Diverged { epoch, last_finite: Box::new(last_finite) })
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut model, &out.grad_users, &out.grad_items);
            total += out.loss;
            drawn += batch.len();
            step += 1;
        }
        if !model.users.is_finite() || !model.items.is_finite() {
            return Err(TrainError::Diverged { epoch, last_finite: Box::new(last_finite) });
        }

        let mut val_mean_ndcg = None;
        if let Some(v) = validation {
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                let emb = model.propagate(graph)?;
                let report = evaluate(&emb, v.train, v.valid, &[config.eval_k])?;
                let score = report.mean_ndcg(config.eval_k).unwrap_or(0.0);
                val_mean_ndcg = Some(score);
                if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
                    best = Some((epoch, score, model.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        let record = LogRecord { epoch, step, loss: total / drawn as f64, val_mean_ndcg };
        log::info!("{}", record.to_tsv_line());
        log.push(record);
        if since_best >= config.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome { model, best, log, stopped_early })
}
