//! The three per-batch training losses and the un-batched reference loss.
//!
//! All variants share the drift penalties `λ/(n·d)·Σ‖x − x⁻‖²`; they differ
//! only in the prediction-term multiplier:
//!
//! | kind      | prediction multiplier |
//! |-----------|-----------------------|
//! | tbatch    | `1 / (|batch|·d)`     |
//! | item-sum  | `1 / d`               |
//! | full-sum  | `1`                   |
//!
//! Dividing by the batch size makes an interaction's weight depend on how
//! crowded its batch is, which moves the minimizer whenever batch sizes vary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[serde(rename = "tbatch")]
    TBatch,
    ItemSum,
    FullSum,
    /// Per-interaction loss with no normalizers; only for tests.
    UnbatchedReference,
}

impl LossKind {
    /// The three losses used for training, in reporting order.
    pub const TRAINABLE: [LossKind; 3] = [LossKind::TBatch, LossKind::ItemSum, LossKind::FullSum];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::TBatch => "tbatch",
            LossKind::ItemSum => "item-sum",
            LossKind::FullSum => "full-sum",
            LossKind::UnbatchedReference => "unbatched-reference",
        }
    }

    /// Multipliers for a batch holding `batch_size` interactions.
    pub fn coefficients(self, cfg: &LossConfig, batch_size: usize) -> LossCoefficients {
        let d = cfg.d as f64;
        let prediction = match self {
            LossKind::TBatch => 1.0 / (batch_size as f64 * d),
            LossKind::ItemSum => 1.0 / d,
            LossKind::FullSum | LossKind::UnbatchedReference => 1.0,
        };
        let (user_reg, item_reg) = match self {
            LossKind::UnbatchedReference => (cfg.lambda_u, cfg.lambda_i),
            _ => (
                cfg.lambda_u / (cfg.num_users as f64 * d),
                cfg.lambda_i / (cfg.num_items as f64 * d),
            ),
        };
        LossCoefficients {
            prediction,
            user_reg,
            item_reg,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tbatch" => Ok(LossKind::TBatch),
            "item-sum" => Ok(LossKind::ItemSum),
            "full-sum" => Ok(LossKind::FullSum),
            "unbatched-reference" => Ok(LossKind::UnbatchedReference),
            other => Err(Error::Argument(format!(
                "unknown loss {other:?} (expected tbatch, item-sum or full-sum)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub prediction: f64,
    pub user_reg: f64,
    pub item_reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_u: f64,
    pub lambda_i: f64,
    pub d: usize,
    pub num_users: usize,
    pub num_items: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.num_users == 0 || self.num_items == 0 {
            return Err(Error::Config(format!(
                "d, |U| and |I| must be positive (d={}, |U|={}, |I|={})",
                self.d, self.num_users, self.num_items
            )));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_i >= 0.0) {
            return Err(Error::Config(
                "regularization weights must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prediction_term: f64,
    pub user_reg_term: f64,
    pub item_reg_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(prediction_term: f64, user_reg_term: f64, item_reg_term: f64) -> Self {
        LossBreakdown {
            prediction_term,
            user_reg_term,
            item_reg_term,
            total: prediction_term + user_reg_term + item_reg_term,
        }
    }
}

impl std::ops::AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = LossBreakdown::new(
            self.prediction_term + o.prediction_term,
            self.user_reg_term + o.user_reg_term,
            self.item_reg_term + o.item_reg_term,
        );
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sum_pairs(pairs: &[(Vec<f64>, Vec<f64>)], want: Option<usize>, what: &str) -> Result<f64> {
    let mut total = 0.0;
    for (k, (a, b)) in pairs.iter().enumerate() {
        if a.len() != b.len() || want.is_some_and(|w| a.len() != w) {
            return Err(Error::Config(format!(
                "{what} pair {k} has lengths {} and {}{}",
                a.len(),
                b.len(),
                want.map(|w| format!(", expected {w}")).unwrap_or_default()
            )));
        }
        total += squared_distance(a, b);
    }
    Ok(total)
}

/// Loss of one batch.
///
/// `predictions` holds `(predicted, target)` pairs; `user_deltas` and
/// `item_deltas` hold `(after, before)` embeddings for the nodes the batch
/// updated. Nodes outside the batch contribute nothing to the drift sums.
pub fn batch_loss(
    kind: LossKind,
    cfg: &LossConfig,
    predictions: &[(Vec<f64>, Vec<f64>)],
    user_deltas: &[(Vec<f64>, Vec<f64>)],
    item_deltas: &[(Vec<f64>, Vec<f64>)],
) -> Result<LossBreakdown> {
    cfg.validate()?;
    if predictions.is_empty() {
        return Err(Error::Argument("batch has no predictions".into()));
    }
    let c = kind.coefficients(cfg, predictions.len());
    let pred = sum_pairs(predictions, None, "prediction")?;
    let ureg = sum_pairs(user_deltas, Some(cfg.d), "user")?;
    let ireg = sum_pairs(item_deltas, Some(cfg.d), "item")?;
    Ok(LossBreakdown::new(
        c.prediction * pred,
        c.user_reg * ureg,
        c.item_reg * ireg,
    ))
}

/// Traced counterpart of [`batch_loss`].
#[derive(Debug, Clone, Copy)]
pub struct TracedLoss {
    pub total: Var,
    pub prediction: Var,
    pub user_reg: Var,
    pub item_reg: Var,
}

pub fn traced_batch_loss(
    tape: &mut Tape,
    kind: LossKind,
    cfg: &LossConfig,
    predictions: &[(Var, Var)],
    user_deltas: &[(Var, Var)],
    item_deltas: &[(Var, Var)],
) -> Result<TracedLoss> {
    if predictions.is_empty() {
        return Err(Error::Argument("batch has no predictions".into()));
    }
    let c = kind.coefficients(cfg, predictions.len());
    let mut term = |pairs: &[(Var, Var)], coef: f64| -> Result<Var> {
        let dists = pairs
            .iter()
            .map(|&(a, b)| tape.squared_l2_distance(a, b))
            .collect::<Result<Vec<_>>>()?;
        let s = tape.sum(&dists)?;
        tape.scale(s, coef)
    };
    let prediction = term(predictions, c.prediction)?;
    let user_reg = term(user_deltas, c.user_reg)?;
    let item_reg = term(item_deltas, c.item_reg)?;
    let total = tape.sum(&[prediction, user_reg, item_reg])?;
    Ok(TracedLoss {
        total,
        prediction,
        user_reg,
        item_reg,
    })
}
