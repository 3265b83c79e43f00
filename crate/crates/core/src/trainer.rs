//! Epoch loop over a t-batch plan.
//!
//! Within a batch every interaction reads the embeddings as they were before
//! the batch, and the batch's updates are committed once its loss is built.
//! Batches are grouped into spans of `span_size`; the span's losses are summed,
//! differentiated, clipped, and applied with one Adam step. Embeddings produced
//! inside a span stay on the span's tape so later batches in the same span
//! backpropagate into them; at the span boundary they become constants.

use std::cell::RefCell;
use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{sequential_evaluate, MetricsReport};
use crate::graphdata::{Interaction, InteractionLog};
use crate::losses::{traced_batch_loss, LossBreakdown, LossConfig, LossKind};
use crate::model::{Checkpoint, EmbeddingStore, ModelDims, ModelParams, DEFAULT_DIM};
use crate::numgrad::{finite_difference_check, ParameterSet, Tape, Tensor, Var};
use crate::seed;
use crate::tbatcher::{build_batches, BatchPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(rename = "loss")]
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Consecutive t-batches per optimizer step.
    pub span_size: usize,
    pub seed: u64,
    #[serde(rename = "dim")]
    pub d: usize,
    pub lambda_u: f64,
    pub lambda_i: f64,
    /// Global gradient-norm ceiling applied before every step.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::TBatch,
            epochs: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            span_size: 1,
            seed: 0,
            d: DEFAULT_DIM,
            lambda_u: 1.0,
            lambda_i: 1.0,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!(
                "invalid learning rate {}",
                self.learning_rate
            )));
        }
        if self.span_size == 0 {
            return Err(Error::Argument("span size must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Argument(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if self.loss_kind == LossKind::UnbatchedReference {
            return Err(Error::Argument(
                "the un-batched reference loss is not trainable".into(),
            ));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_i >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Argument(
                "regularization weights must be non-negative".into(),
            ));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::Argument("gradient clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub loss: f64,
    pub pred_term: f64,
    pub ureg: f64,
    pub ireg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochReport>,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParameterSet, lr: f64, weight_decay: f64) -> Adam {
        let zeros = || -> Vec<Vec<f64>> {
            params
                .ids()
                .map(|id| vec![0.0; params.value(id).len()])
                .collect()
        };
        Adam {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data()).enumerate() {
                let g = g + self.weight_decay * *w;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

fn clip_gradients(params: &mut ParameterSet, max_norm: f64) {
    let norm = params.grad_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            params
                .get_mut(id)
                .grad
                .data_mut()
                .iter_mut()
                .for_each(|g| *g *= scale);
        }
    }
}

/// Mean gap between a user's consecutive interactions (the first gap is
/// measured from time zero). Falls back to 1 when every gap is zero.
pub fn mean_user_delta(log: &InteractionLog) -> f64 {
    let mut last = vec![0.0_f64; log.num_users()];
    let mut total = 0.0;
    for it in log.interactions() {
        total += (it.timestamp - last[it.user]).max(0.0);
        last[it.user] = it.timestamp;
    }
    let mean = total / log.len().max(1) as f64;
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

/// Values of stop-gradient nodes, recorded once and replayed so a
/// finite-difference objective treats them as the constants backprop sees.
#[derive(Debug, Clone, Default)]
struct Frozen {
    values: Vec<Vec<f64>>,
    replay: bool,
    cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    User(usize),
    Item(usize),
}

/// Training state: parameters, optimizer moments and the recurrent store.
pub struct Trainer<'a> {
    log: &'a InteractionLog,
    cfg: TrainConfig,
    plan: BatchPlan,
    params: ModelParams,
    adam: Adam,
    store: EmbeddingStore,
    loss_cfg: LossConfig,
    epochs_done: usize,
    frozen: Option<Frozen>,
}

impl<'a> Trainer<'a> {
    pub fn new(log: &'a InteractionLog, cfg: TrainConfig) -> Result<Trainer<'a>> {
        cfg.validate()?;
        if log.is_empty() {
            return Err(Error::EmptyLog);
        }
        let dims = ModelDims {
            d: cfg.d,
            num_users: log.num_users(),
            num_items: log.num_items(),
            feature_dim: log.feature_dim(),
        };
        let mut rng = seed::stream(cfg.seed, "model.init");
        let mut params = ModelParams::init(dims, &mut rng)?;
        params.set_time_scale(mean_user_delta(log))?;
        let adam = Adam::new(params.params(), cfg.learning_rate, cfg.weight_decay);
        let loss_cfg = LossConfig {
            lambda_u: cfg.lambda_u,
            lambda_i: cfg.lambda_i,
            d: cfg.d,
            num_users: dims.num_users,
            num_items: dims.num_items,
        };
        Ok(Trainer {
            log,
            plan: build_batches(log),
            cfg,
            store: EmbeddingStore::for_dims(dims),
            params,
            adam,
            loss_cfg,
            epochs_done: 0,
            frozen: None,
        })
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone(), self.store.clone())
    }

    pub fn run_epoch(&mut self) -> Result<LossBreakdown> {
        self.run_epoch_observed(&mut |_, _| {})
    }

    /// One pass over the plan; `observer` sees each batch index and its
    /// interaction indices just before the batch is processed.
    pub fn run_epoch_observed(
        &mut self,
        observer: &mut dyn FnMut(usize, &[usize]),
    ) -> Result<LossBreakdown> {
        let epoch = self.epochs_done;
        self.store = EmbeddingStore::for_dims(self.params.dims());
        let mut epoch_loss = LossBreakdown::default();
        let span_size = self.cfg.span_size;
        let batches = self.plan.batches().to_vec();
        for (span_idx, span) in batches.chunks(span_size).enumerate() {
            let mut tape = Tape::new();
            let (span_loss, breakdown) =
                self.span_loss(&mut tape, span, epoch, span_idx * span_size, observer)?;
            epoch_loss += breakdown;
            let params = self.params.params_mut();
            params.zero_grad();
            tape.backward(span_loss, params)?;
            clip_gradients(params, self.cfg.grad_clip);
            self.adam.step(params);
        }
        self.epochs_done += 1;
        Ok(epoch_loss)
    }

    /// Builds the summed loss of consecutive batches on one tape, committing
    /// each batch's updates as it goes.
    fn span_loss(
        &mut self,
        tape: &mut Tape,
        span: &[Vec<usize>],
        epoch: usize,
        first_batch: usize,
        observer: &mut dyn FnMut(usize, &[usize]),
    ) -> Result<(Var, LossBreakdown)> {
        let mut overlay: HashMap<Node, Var> = HashMap::new();
        let mut terms = Vec::with_capacity(span.len());
        let mut total = LossBreakdown::default();
        for (offset, batch) in span.iter().enumerate() {
            let batch_idx = first_batch + offset;
            observer(batch_idx, batch);
            let (loss, breakdown) =
                self.forward_batch(tape, &mut overlay, batch)
                    .map_err(|e| match e {
                        Error::Numeric(_) => Error::NonFiniteLoss {
                            epoch,
                            batch: batch_idx,
                        },
                        other => other,
                    })?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            total += breakdown;
            terms.push(loss);
        }
        Ok((tape.sum(&terms)?, total))
    }

    fn stop_gradient(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        match self.frozen.as_mut() {
            None => tape.detach(v),
            Some(f) if f.replay => {
                let value = f
                    .values
                    .get(f.cursor)
                    .cloned()
                    .ok_or_else(|| Error::Trace("frozen replay overrun".into()))?;
                f.cursor += 1;
                tape.constant(Tensor::vector(value))
            }
            Some(f) => {
                f.values.push(tape.value(v)?.data().to_vec());
                tape.detach(v)
            }
        }
    }

    fn read(&self, tape: &mut Tape, overlay: &HashMap<Node, Var>, node: Node) -> Result<Var> {
        if let Some(&v) = overlay.get(&node) {
            return Ok(v);
        }
        let value = match node {
            Node::User(u) => self.store.user(u).to_vec(),
            Node::Item(j) => self.store.item(j).to_vec(),
        };
        tape.constant(Tensor::vector(value))
    }

    /// Builds one batch's loss on `tape` and commits its embedding updates.
    fn forward_batch(
        &mut self,
        tape: &mut Tape,
        overlay: &mut HashMap<Node, Var>,
        batch: &[usize],
    ) -> Result<(Var, LossBreakdown)> {
        let mut predictions = Vec::with_capacity(batch.len());
        let mut user_pairs = Vec::with_capacity(batch.len());
        let mut item_pairs = Vec::with_capacity(batch.len());
        let mut updates = Vec::with_capacity(batch.len());
        for &idx in batch {
            let it = &self.log.interactions()[idx];
            let (du, dj) = self.store.deltas(it);
            let u_prev = self.read(tape, overlay, Node::User(it.user))?;
            let j_prev = self.read(tape, overlay, Node::Item(it.item))?;

            let prev_item = self.store.last_item_of_user(it.user);
            let prev_dyn = match prev_item {
                Some(p) => self.read(tape, overlay, Node::Item(p))?,
                None => tape.constant(Tensor::vector(vec![0.0; self.cfg.d]))?,
            };
            let projected = self.params.traced_project(tape, u_prev, du)?;
            let predicted = self
                .params
                .traced_predict(tape, projected, it.user, prev_dyn, prev_item)?;
            let j_target = self.stop_gradient(tape, j_prev)?;
            let mut target = tape.value(j_target)?.data().to_vec();
            target.extend(self.store.static_item(it.item));
            let target = tape.constant(Tensor::vector(target))?;
            predictions.push((predicted, target));

            let u_new = self
                .params
                .traced_user_update(tape, u_prev, j_prev, &it.features, du)?;
            let j_new = self
                .params
                .traced_item_update(tape, j_prev, u_prev, &it.features, dj)?;
            let u_old = self.stop_gradient(tape, u_prev)?;
            let j_old = self.stop_gradient(tape, j_prev)?;
            user_pairs.push((u_new, u_old));
            item_pairs.push((j_new, j_old));
            updates.push((idx, u_new, j_new));
        }
        let loss = traced_batch_loss(
            tape,
            self.cfg.loss_kind,
            &self.loss_cfg,
            &predictions,
            &user_pairs,
            &item_pairs,
        )?;
        let breakdown = LossBreakdown::new(
            tape.value(loss.prediction)?.item(),
            tape.value(loss.user_reg)?.item(),
            tape.value(loss.item_reg)?.item(),
        );
        for (idx, u_new, j_new) in updates {
            let it = &self.log.interactions()[idx];
            let uv = tape.value(u_new)?.data().to_vec();
            let jv = tape.value(j_new)?.data().to_vec();
            self.store.commit(it, uv, jv)?;
            overlay.insert(Node::User(it.user), u_new);
            overlay.insert(Node::Item(it.item), j_new);
        }
        Ok((loss.total, breakdown))
    }
}

/// Trains for `cfg.epochs` epochs. When `validation` is given, every epoch is
/// followed by a sequential evaluation on it from the end-of-epoch state.
pub fn train(
    log: &InteractionLog,
    cfg: &TrainConfig,
    validation: Option<&InteractionLog>,
) -> Result<(TrainReport, Checkpoint)> {
    let start = Instant::now();
    let mut trainer = Trainer::new(log, cfg.clone())?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let b = trainer.run_epoch()?;
        let metrics: Option<MetricsReport> = match validation {
            Some(v) => Some(sequential_evaluate(&trainer.checkpoint(), v)?),
            None => None,
        };
        epochs.push(EpochReport {
            loss: b.total,
            pred_term: b.prediction_term,
            ureg: b.user_reg_term,
            ireg: b.item_reg_term,
            mrr: metrics.as_ref().map(|m| m.mrr),
            r10: metrics.as_ref().map(|m| m.recall_at_10),
        });
    }
    let report = TrainReport {
        config: cfg.clone(),
        epochs,
        wall_seconds: start.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    Ok((report, trainer.checkpoint()))
}

/// Finite-difference check of the full model under `cfg.loss_kind`: every
/// batch of `log` goes on one tape, so gradients also flow through the
/// recurrence across batches. Stop-gradient values are frozen at the base
/// point. Returns the worst relative error.
pub fn gradient_check(log: &InteractionLog, cfg: &TrainConfig, eps: f64) -> Result<f64> {
    let mut base = Trainer::new(log, cfg.clone())?;
    let batches = base.plan.batches().to_vec();
    let model = base.params.clone();
    let recorded: RefCell<Option<Vec<Vec<f64>>>> = RefCell::new(None);
    finite_difference_check(
        |ps, tape| {
            let mut t = Trainer::new(log, cfg.clone())?;
            t.params = model.clone();
            *t.params.params_mut() = ps.clone();
            t.frozen = Some(match recorded.borrow().clone() {
                Some(values) => Frozen {
                    values,
                    replay: true,
                    cursor: 0,
                },
                None => Frozen::default(),
            });
            let (loss, _) = t.span_loss(tape, &batches, 0, 0, &mut |_, _| {})?;
            if let Some(f) = t.frozen.take().filter(|f| !f.replay) {
                *recorded.borrow_mut() = Some(f.values);
            }
            Ok(loss)
        },
        base.params.params_mut(),
        eps,
    )
}

/// Random log of `n` interactions over 2 users and 3 items with 2 features.
pub fn toy_log(n: usize, seed: u64) -> Result<InteractionLog> {
    let mut rng = seed::stream(seed, "trainer.toy");
    let mut t = 0.0;
    let its = (0..n)
        .map(|_| {
            t += rng.gen_range(0.5..2.0);
            let mut it = Interaction::new(rng.gen_range(0..2), rng.gen_range(0..3), t);
            it.features = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            it
        })
        .collect();
    InteractionLog::new(its, 2, 3, 2)
}

/// Gradient check of each trainable loss on a seeded 3-interaction toy log.
pub fn gradient_check_toy(seed: u64, d: usize) -> Result<Vec<(LossKind, f64)>> {
    let log = toy_log(3, seed)?;
    LossKind::TRAINABLE
        .iter()
        .map(|&kind| {
            let cfg = TrainConfig {
                loss_kind: kind,
                d,
                seed,
                ..TrainConfig::default()
            };
            gradient_check(&log, &cfg, 1e-6).map(|e| (kind, e))
        })
        .collect()
}
