//! Sequential next-item evaluation, ranking metrics, and the experiment
//! runners for the synthetic networks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{chronological_split, InteractionLog};
use crate::losses::LossKind;
use crate::model::Checkpoint;
use crate::synthgen::{self, Type4Params};
use crate::trainer::{TrainConfig, Trainer};

/// Train share of the 16:1 chronological split.
pub const SIXTEEN_TO_ONE: f64 = 16.0 / 17.0;

pub fn mrr(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub recall_at_10: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_by_target: Option<BTreeMap<String, f64>>,
    pub n_test: usize,
    /// 1-based rank of the true item for every test interaction, in order.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl MetricsReport {
    pub fn from_ranks(ranks: Vec<usize>) -> MetricsReport {
        MetricsReport {
            mrr: mrr(&ranks),
            recall_at_10: recall_at_k(&ranks, 10),
            accuracy_by_target: None,
            n_test: ranks.len(),
            ranks,
        }
    }

    /// Top-1 hit rate over the test interactions selected by `filter`, or
    /// `None` when nothing is selected.
    pub fn top1_accuracy(
        &self,
        test_log: &InteractionLog,
        filter: impl Fn(usize, usize) -> bool,
    ) -> Option<f64> {
        let hits: Vec<bool> = test_log
            .interactions()
            .iter()
            .zip(&self.ranks)
            .filter(|(it, _)| filter(it.user, it.item))
            .map(|(_, &r)| r == 1)
            .collect();
        (!hits.is_empty()).then(|| hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
    }
}

/// Ranks every test interaction in time order, then commits its
/// ground-truth embedding updates before moving on. Parameters stay fixed.
pub fn sequential_evaluate(
    checkpoint: &Checkpoint,
    test_log: &InteractionLog,
) -> Result<MetricsReport> {
    let params = &checkpoint.params;
    let dims = params.dims();
    if dims.num_users != test_log.num_users()
        || dims.num_items != test_log.num_items()
        || dims.feature_dim != test_log.feature_dim()
    {
        return Err(Error::Config(format!(
            "checkpoint covers {} users / {} items / {} features, test log has {} / {} / {}",
            dims.num_users,
            dims.num_items,
            dims.feature_dim,
            test_log.num_users(),
            test_log.num_items(),
            test_log.feature_dim()
        )));
    }
    let mut store = checkpoint.store.clone();
    let mut ranks = Vec::with_capacity(test_log.len());
    for it in test_log.interactions() {
        let (du, dj) = store.deltas(it);
        let predicted = params.predict_item_embedding(&store, it.user, du)?;
        ranks.push(store.rank_of(&predicted, it.item)?);
        let u = params.update_user_embedding(&store, it, du)?;
        let j = params.update_item_embedding(&store, it, dj)?;
        store.commit(it, u, j)?;
    }
    Ok(MetricsReport::from_ranks(ranks))
}

/// One long-format result row: `experiment,loss,param,seed,metric,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub experiment: String,
    pub loss: String,
    pub param: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub fn write_tidy_csv<W: std::io::Write>(rows: &[TidyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io("<csv>", std::io::Error::other(e.to_string())))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn run_parallel<T: Send, R: Send>(
    jobs: Option<usize>,
    cells: Vec<T>,
    f: impl Fn(T) -> R + Sync + Send,
) -> Result<Vec<R>> {
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
            Ok(pool.install(|| cells.into_par_iter().map(&f).collect()))
        }
        None => Ok(cells.into_par_iter().map(&f).collect()),
    }
}

// ---------------------------------------------------------------------------
// Type 1: decision boundary sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Sweep {
    pub k: usize,
    pub p_grid: Vec<f64>,
    pub n_seeds: usize,
    pub losses: Vec<LossKind>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Cell {
    pub p: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Summary {
    pub p: f64,
    pub loss: LossKind,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Accuracy of always choosing the loss's theoretical minimizer.
    pub theory_accuracy: f64,
    /// Best achievable accuracy, `max(p, 1 − p)`.
    pub optimal_accuracy: f64,
}

/// User-3 top-1 test accuracy after training on one type-1 network.
pub fn type1_cell(
    k: usize,
    p: f64,
    loss: LossKind,
    seed: u64,
    template: &TrainConfig,
) -> Result<f64> {
    let log = synthgen::gen_type1(k, p, seed)?;
    let (train_log, test_log) = chronological_split(&log, SIXTEEN_TO_ONE)?;
    let cfg = TrainConfig {
        loss_kind: loss,
        seed,
        ..template.clone()
    };
    let mut trainer = Trainer::new(&train_log, cfg)?;
    for _ in 0..template.epochs {
        trainer.run_epoch()?;
    }
    let report = sequential_evaluate(&trainer.checkpoint(), &test_log)?;
    report
        .top1_accuracy(&test_log, |u, _| u == synthgen::TYPE1_USER_3)
        .ok_or_else(|| Error::Argument("test split has no user-3 interactions".into()))
}

pub fn run_type1_sweep(
    sweep: &Type1Sweep,
    jobs: Option<usize>,
) -> Result<(Vec<Type1Cell>, Vec<Type1Summary>)> {
    for &p in &sweep.p_grid {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("p must lie in [0, 1], got {p}")));
        }
    }
    let cells: Vec<(f64, LossKind, u64)> = sweep
        .p_grid
        .iter()
        .flat_map(|&p| {
            sweep
                .losses
                .iter()
                .flat_map(move |&l| (0..sweep.n_seeds as u64).map(move |s| (p, l, s)))
        })
        .collect();
    let results = run_parallel(jobs, cells, |(p, loss, s)| {
        let seed = sweep.train.seed.wrapping_add(s);
        type1_cell(sweep.k, p, loss, seed, &sweep.train).map(|accuracy| Type1Cell {
            p,
            loss,
            seed,
            accuracy,
        })
    })?;
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut summary = Vec::new();
    for &p in &sweep.p_grid {
        for &loss in &sweep.losses {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| c.p == p && c.loss == loss)
                .map(|c| c.accuracy)
                .collect();
            summary.push(Type1Summary {
                p,
                loss,
                mean_accuracy: mean(&accs),
                std_accuracy: sample_std(&accs),
                theory_accuracy: synthgen::choice_accuracy(p, loss)?,
                optimal_accuracy: p.max(1.0 - p),
            });
        }
    }
    Ok((cells, summary))
}

impl Type1Cell {
    pub fn tidy(&self) -> TidyRow {
        TidyRow {
            experiment: "type1".into(),
            loss: self.loss.to_string(),
            param: format!("p={}", self.p),
            seed: self.seed,
            metric: "user3_accuracy".into(),
            value: self.accuracy,
        }
    }
}

// ---------------------------------------------------------------------------
// Type 2: epochs until edge (1, 4) is always predicted

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2Convergence {
    pub n_pairs: usize,
    pub repetitions: usize,
    pub n_seeds: usize,
    pub losses: Vec<LossKind>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2Cell {
    pub loss: LossKind,
    pub seed: u64,
    /// Edge (1, 4) test accuracy after each epoch.
    pub accuracy_by_epoch: Vec<f64>,
    /// First epoch (1-based) reaching accuracy 1.0.
    pub epochs_to_perfect: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type2Summary {
    pub loss: LossKind,
    /// Mean over seeds; `None` if some seed never converged.
    pub mean_epochs_to_perfect: Option<f64>,
    pub converged_seeds: usize,
    pub n_seeds: usize,
}

pub fn type2_cell(
    n_pairs: usize,
    repetitions: usize,
    loss: LossKind,
    seed: u64,
    template: &TrainConfig,
) -> Result<Type2Cell> {
    let log = synthgen::gen_type2(n_pairs, repetitions, seed)?;
    let (train_log, test_log) = chronological_split(&log, SIXTEEN_TO_ONE)?;
    let cfg = TrainConfig {
        loss_kind: loss,
        seed,
        ..template.clone()
    };
    let mut trainer = Trainer::new(&train_log, cfg)?;
    let mut accuracy_by_epoch = Vec::with_capacity(template.epochs);
    let mut epochs_to_perfect = None;
    for epoch in 1..=template.epochs {
        trainer.run_epoch()?;
        let report = sequential_evaluate(&trainer.checkpoint(), &test_log)?;
        let acc = report
            .top1_accuracy(&test_log, |u, j| u == synthgen::USER_1 && j == 1)
            .ok_or_else(|| Error::Argument("test split has no (1, 4) edges".into()))?;
        accuracy_by_epoch.push(acc);
        if acc == 1.0 && epochs_to_perfect.is_none() {
            epochs_to_perfect = Some(epoch);
        }
    }
    Ok(Type2Cell {
        loss,
        seed,
        accuracy_by_epoch,
        epochs_to_perfect,
    })
}

pub fn run_type2_convergence(
    exp: &Type2Convergence,
    jobs: Option<usize>,
) -> Result<(Vec<Type2Cell>, Vec<Type2Summary>)> {
    let cells: Vec<(LossKind, u64)> = exp
        .losses
        .iter()
        .flat_map(|&l| (0..exp.n_seeds as u64).map(move |s| (l, exp.train.seed.wrapping_add(s))))
        .collect();
    let results = run_parallel(jobs, cells, |(loss, seed)| {
        type2_cell(exp.n_pairs, exp.repetitions, loss, seed, &exp.train)
    })?;
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = exp
        .losses
        .iter()
        .map(|&loss| {
            let epochs: Vec<Option<usize>> = cells
                .iter()
                .filter(|c| c.loss == loss)
                .map(|c| c.epochs_to_perfect)
                .collect();
            let converged: Vec<f64> = epochs.iter().flatten().map(|&e| e as f64).collect();
            Type2Summary {
                loss,
                mean_epochs_to_perfect: (converged.len() == epochs.len()).then(|| mean(&converged)),
                converged_seeds: converged.len(),
                n_seeds: epochs.len(),
            }
        })
        .collect();
    Ok((cells, summary))
}

impl Type2Cell {
    pub fn tidy(&self) -> Vec<TidyRow> {
        let mut rows: Vec<TidyRow> = self
            .accuracy_by_epoch
            .iter()
            .enumerate()
            .map(|(e, &a)| TidyRow {
                experiment: "type2".into(),
                loss: self.loss.to_string(),
                param: format!("epoch={}", e + 1),
                seed: self.seed,
                metric: "edge_1_4_accuracy".into(),
                value: a,
            })
            .collect();
        rows.push(TidyRow {
            experiment: "type2".into(),
            loss: self.loss.to_string(),
            param: "all".into(),
            seed: self.seed,
            metric: "epochs_to_perfect".into(),
            value: self.epochs_to_perfect.map_or(f64::INFINITY, |e| e as f64),
        });
        rows
    }
}

// ---------------------------------------------------------------------------
// Type 4: recommendation-walk networks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type4Comparison {
    pub params: Type4Params,
    /// Training-set sizes; the full log is sized so a 16:1 split yields them.
    pub train_sizes: Vec<usize>,
    pub n_samples: usize,
    pub losses: Vec<LossKind>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type4Cell {
    pub train_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub mrr: f64,
    pub recall_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type4Summary {
    pub train_size: usize,
    pub loss: LossKind,
    pub mrr: f64,
    pub mrr_std: f64,
    pub recall_at_10: f64,
    pub recall_at_10_std: f64,
    /// Percent change against the tbatch row of the same size.
    pub mrr_change_pct: Option<f64>,
    pub recall_change_pct: Option<f64>,
}

/// Total interactions whose 16:1 split leaves exactly `train_size` for training.
pub fn total_for_train_size(train_size: usize) -> usize {
    let mut n = (train_size as f64 / SIXTEEN_TO_ONE).floor() as usize;
    loop {
        let cut = ((n as f64) * SIXTEEN_TO_ONE).ceil() as usize;
        if cut > train_size {
            return n - 1;
        }
        n += 1;
    }
}

pub fn type4_cell(
    params: &Type4Params,
    train_size: usize,
    loss: LossKind,
    seed: u64,
    template: &TrainConfig,
) -> Result<Type4Cell> {
    let spec = Type4Params {
        n_interactions: total_for_train_size(train_size),
        ..*params
    };
    let (log, _) = synthgen::gen_type4(&spec, seed)?;
    let (train_log, test_log) = chronological_split(&log, SIXTEEN_TO_ONE)?;
    let cfg = TrainConfig {
        loss_kind: loss,
        seed,
        ..template.clone()
    };
    let mut trainer = Trainer::new(&train_log, cfg)?;
    for _ in 0..template.epochs {
        trainer.run_epoch()?;
    }
    let m = sequential_evaluate(&trainer.checkpoint(), &test_log)?;
    Ok(Type4Cell {
        train_size: train_log.len(),
        loss,
        seed,
        mrr: m.mrr,
        recall_at_10: m.recall_at_10,
    })
}

pub fn run_type4_comparison(
    exp: &Type4Comparison,
    jobs: Option<usize>,
) -> Result<(Vec<Type4Cell>, Vec<Type4Summary>)> {
    if exp.n_samples == 0 {
        return Err(Error::Argument("need at least one sample".into()));
    }
    let cells: Vec<(usize, LossKind, u64)> = exp
        .train_sizes
        .iter()
        .flat_map(|&n| {
            exp.losses.iter().flat_map(move |&l| {
                (0..exp.n_samples as u64).map(move |s| (n, l, exp.train.seed.wrapping_add(s)))
            })
        })
        .collect();
    let results = run_parallel(jobs, cells, |(n, loss, seed)| {
        type4_cell(&exp.params, n, loss, seed, &exp.train)
    })?;
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut summary: Vec<Type4Summary> = Vec::new();
    for &n in &exp.train_sizes {
        let rows: Vec<Type4Summary> = exp
            .losses
            .iter()
            .map(|&loss| {
                let sel: Vec<&Type4Cell> = cells
                    .iter()
                    .filter(|c| c.loss == loss && c.train_size == n)
                    .collect();
                let mrrs: Vec<f64> = sel.iter().map(|c| c.mrr).collect();
                let recs: Vec<f64> = sel.iter().map(|c| c.recall_at_10).collect();
                Type4Summary {
                    train_size: n,
                    loss,
                    mrr: mean(&mrrs),
                    mrr_std: sample_std(&mrrs),
                    recall_at_10: mean(&recs),
                    recall_at_10_std: sample_std(&recs),
                    mrr_change_pct: None,
                    recall_change_pct: None,
                }
            })
            .collect();
        let base = rows
            .iter()
            .find(|r| r.loss == LossKind::TBatch)
            .map(|r| (r.mrr, r.recall_at_10));
        for mut r in rows {
            if let Some((bm, br)) = base {
                if r.loss != LossKind::TBatch {
                    r.mrr_change_pct = Some(100.0 * (r.mrr - bm) / bm);
                    r.recall_change_pct = Some(100.0 * (r.recall_at_10 - br) / br);
                }
            }
            summary.push(r);
        }
    }
    Ok((cells, summary))
}

impl Type4Cell {
    pub fn tidy(&self) -> Vec<TidyRow> {
        let row = |metric: &str, value: f64| TidyRow {
            experiment: "type4".into(),
            loss: self.loss.to_string(),
            param: format!("train_size={}", self.train_size),
            seed: self.seed,
            metric: metric.into(),
            value,
        };
        vec![row("mrr", self.mrr), row("recall_at_10", self.recall_at_10)]
    }
}
