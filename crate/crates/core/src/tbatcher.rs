//! t-batching: partition an interaction log into batches where no user and
//! no item appears twice, while keeping every node's interactions in time
//! order across batches.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphdata::InteractionLog;

/// Largest log the quadratic oracle will accept.
pub const BRUTE_FORCE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPlan {
    batches: Vec<Vec<usize>>,
    source_length: usize,
}

impl BatchPlan {
    fn from_assignment(assignment: &[usize]) -> BatchPlan {
        let count = assignment.iter().map(|&k| k + 1).max().unwrap_or(0);
        let mut batches = vec![Vec::new(); count];
        for (idx, &k) in assignment.iter().enumerate() {
            batches[k].push(idx);
        }
        BatchPlan {
            batches,
            source_length: assignment.len(),
        }
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    /// Batch index of every interaction, indexed by interaction position.
    pub fn assignment(&self) -> Vec<usize> {
        let mut out = vec![0; self.source_length];
        for (k, batch) in self.batches.iter().enumerate() {
            for &idx in batch {
                out[idx] = k;
            }
        }
        out
    }

    /// Size of the batch holding each interaction.
    pub fn containing_batch_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.source_length];
        for batch in &self.batches {
            for &idx in batch {
                out[idx] = batch.len();
            }
        }
        out
    }

    /// Checks every plan invariant against `log`.
    pub fn validate(&self, log: &InteractionLog) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.source_length != log.len() {
            return bad(format!(
                "plan covers {} interactions, log has {}",
                self.source_length,
                log.len()
            ));
        }
        let mut seen = vec![false; self.source_length];
        let mut last_user: Vec<Option<usize>> = vec![None; log.num_users()];
        let mut last_item: Vec<Option<usize>> = vec![None; log.num_items()];
        let assignment = self.assignment();
        for (k, batch) in self.batches.iter().enumerate() {
            if batch.is_empty() {
                return bad(format!("batch {k} is empty"));
            }
            let mut users = std::collections::HashSet::new();
            let mut items = std::collections::HashSet::new();
            for &idx in batch {
                if idx >= self.source_length || seen[idx] {
                    return bad(format!("interaction {idx} missing or repeated"));
                }
                seen[idx] = true;
                let it = &log.interactions()[idx];
                if !users.insert(it.user) || !items.insert(it.item) {
                    return bad(format!("batch {k} repeats a node"));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("plan does not cover every interaction".into());
        }
        for (idx, it) in log.interactions().iter().enumerate() {
            let k = assignment[idx];
            for last in [&mut last_user[it.user], &mut last_item[it.item]] {
                if matches!(*last, Some(prev) if prev >= k) {
                    return bad(format!("interaction {idx} breaks node time order"));
                }
                *last = Some(k);
            }
        }
        Ok(())
    }
}

/// Assigns each interaction to batch `max(last user batch, last item batch) + 1`,
/// with both counters starting at -1.
pub fn build_batches(log: &InteractionLog) -> BatchPlan {
    let mut user_last: Vec<i64> = vec![-1; log.num_users()];
    let mut item_last: Vec<i64> = vec![-1; log.num_items()];
    let mut assignment = Vec::with_capacity(log.len());
    for it in log.interactions() {
        let k = (user_last[it.user] + 1).max(item_last[it.item] + 1);
        user_last[it.user] = k;
        item_last[it.item] = k;
        assignment.push(k as usize);
    }
    BatchPlan::from_assignment(&assignment)
}

/// Quadratic reference: scans every earlier interaction and places the
/// current one right after the latest batch that shares a node with it.
pub fn brute_force_batches(log: &InteractionLog) -> Result<BatchPlan> {
    if log.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleScale(log.len(), BRUTE_FORCE_LIMIT));
    }
    let its = log.interactions();
    let mut assignment: Vec<usize> = Vec::with_capacity(its.len());
    for (idx, it) in its.iter().enumerate() {
        let mut k = 0;
        for prev in 0..idx {
            let p = &its[prev];
            if p.user == it.user || p.item == it.item {
                k = k.max(assignment[prev] + 1);
            }
        }
        assignment.push(k);
    }
    Ok(BatchPlan::from_assignment(&assignment))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSizeStats {
    pub histogram: BTreeMap<usize, usize>,
    pub num_batches: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub max: usize,
}

pub fn batch_size_distribution(plan: &BatchPlan) -> BatchSizeStats {
    let mut histogram = BTreeMap::new();
    for b in plan.batches() {
        *histogram.entry(b.len()).or_insert(0) += 1;
    }
    let n = plan.len();
    let (mean, variance) = if n == 0 {
        (0.0, 0.0)
    } else {
        let mean = plan.source_length() as f64 / n as f64;
        let var = plan
            .batches()
            .iter()
            .map(|b| (b.len() as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        (mean, var)
    };
    BatchSizeStats {
        histogram,
        num_batches: n,
        mean,
        variance,
        max: plan.batches().iter().map(Vec::len).max().unwrap_or(0),
    }
}

impl BatchSizeStats {
    /// `size,count` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "size,count")?;
        for (size, count) in &self.histogram {
            writeln!(out, "{size},{count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::Interaction;

    fn log_of(pairs: &[(usize, usize)]) -> InteractionLog {
        let users = pairs.iter().map(|p| p.0 + 1).max().unwrap_or(0);
        let items = pairs.iter().map(|p| p.1 + 1).max().unwrap_or(0);
        let its = pairs
            .iter()
            .enumerate()
            .map(|(t, &(u, i))| Interaction::new(u, i, t as f64))
            .collect();
        InteractionLog::new(its, users, items, 0).unwrap()
    }

    #[test]
    fn four_interaction_trace() {
        let log = log_of(&[(1, 2), (3, 4), (1, 2), (3, 2)]);
        let plan = build_batches(&log);
        assert_eq!(plan.batches(), &[vec![0, 1], vec![2], vec![3]]);
        plan.validate(&log).unwrap();
        assert_eq!(brute_force_batches(&log).unwrap(), plan);
    }

    #[test]
    fn item_conflict_opens_a_new_batch() {
        let log = log_of(&[(3, 2), (1, 2)]);
        let plan = build_batches(&log);
        let sizes: Vec<usize> = plan.batches().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 1]);
    }

    #[test]
    fn empty_log_gives_empty_plan() {
        let log = log_of(&[]);
        assert!(build_batches(&log).is_empty());
        assert!(brute_force_batches(&log).unwrap().is_empty());
    }

    #[test]
    fn oracle_refuses_large_logs() {
        let pairs: Vec<(usize, usize)> =
            (0..BRUTE_FORCE_LIMIT + 1).map(|i| (i % 7, i % 5)).collect();
        let log = log_of(&pairs);
        assert!(matches!(
            brute_force_batches(&log),
            Err(Error::OracleScale(_, BRUTE_FORCE_LIMIT))
        ));
    }

    #[test]
    fn counter_rule_does_not_backfill_earlier_batches() {
        // Batch 0 shares no node with (1,2), but user 1 already sits in batch 2.
        let log = log_of(&[(0, 0), (0, 1), (1, 1), (1, 2)]);
        let plan = build_batches(&log);
        assert_eq!(plan.assignment(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn distribution_examples() {
        let log = log_of(&[(1, 2), (3, 4), (1, 2), (3, 2)]);
        let stats = batch_size_distribution(&build_batches(&log));
        assert_eq!(stats.histogram, BTreeMap::from([(1, 2), (2, 1)]));
        assert!((stats.mean - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats.max, 2);

        let single = batch_size_distribution(&build_batches(&log_of(&[(0, 0)])));
        assert_eq!(single.histogram, BTreeMap::from([(1, 1)]));
        assert_eq!(single.variance, 0.0);
    }
}
