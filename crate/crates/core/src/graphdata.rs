//! Timestamped user→item interaction logs: CSV ingestion, chronological
//! splitting and per-user history statistics.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// One timestamped user→item event.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Seconds since the start of the log.
    pub timestamp: f64,
    pub features: Vec<f64>,
    /// Carried through from the file format; never read by the model.
    pub state_label: i64,
}

impl Interaction {
    pub fn new(user: usize, item: usize, timestamp: f64) -> Self {
        Interaction {
            user,
            item,
            timestamp,
            features: Vec::new(),
            state_label: 0,
        }
    }
}

/// A time-ordered interaction sequence over fixed user and item id spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    num_users: usize,
    num_items: usize,
    feature_dim: usize,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl InteractionLog {
    /// Builds a log with numeric labels (`"0"`, `"1"`, ...) for every id.
    pub fn new(
        interactions: Vec<Interaction>,
        num_users: usize,
        num_items: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        let user_labels = (0..num_users).map(|u| u.to_string()).collect();
        let item_labels = (0..num_items).map(|i| i.to_string()).collect();
        Self::with_labels(interactions, feature_dim, user_labels, item_labels)
    }

    pub fn with_labels(
        interactions: Vec<Interaction>,
        feature_dim: usize,
        user_labels: Vec<String>,
        item_labels: Vec<String>,
    ) -> Result<Self> {
        let num_users = user_labels.len();
        let num_items = item_labels.len();
        let mut prev = 0.0_f64;
        for (idx, it) in interactions.iter().enumerate() {
            if it.user >= num_users || it.item >= num_items {
                return Err(Error::Argument(format!(
                    "interaction {idx} references user {} / item {} outside {num_users} users / {num_items} items",
                    it.user, it.item
                )));
            }
            if !it.timestamp.is_finite() || it.timestamp < 0.0 {
                return Err(Error::Argument(format!(
                    "interaction {idx} has invalid timestamp {}",
                    it.timestamp
                )));
            }
            if it.timestamp < prev {
                return Err(Error::Argument(format!(
                    "interaction {idx} is out of time order ({} < {prev})",
                    it.timestamp
                )));
            }
            if it.features.len() != feature_dim {
                return Err(Error::Schema {
                    line: idx + 1,
                    expected: feature_dim,
                    found: it.features.len(),
                });
            }
            prev = it.timestamp;
        }
        Ok(InteractionLog {
            interactions,
            num_users,
            num_items,
            feature_dim,
            user_labels,
            item_labels,
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn user_label(&self, user: usize) -> &str {
        &self.user_labels[user]
    }

    pub fn item_label(&self, item: usize) -> &str {
        &self.item_labels[item]
    }

    /// Items of `user` in time order.
    pub fn user_history(&self, user: usize) -> Vec<usize> {
        self.interactions
            .iter()
            .filter(|it| it.user == user)
            .map(|it| it.item)
            .collect()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> InteractionLog {
        InteractionLog {
            interactions: self.interactions[range].to_vec(),
            num_users: self.num_users,
            num_items: self.num_items,
            feature_dim: self.feature_dim,
            user_labels: self.user_labels.clone(),
            item_labels: self.item_labels.clone(),
        }
    }

    /// Writes the log in the same layout [`load_csv`] reads, with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let mut header = vec![
            "user_id".to_string(),
            "item_id".to_string(),
            "timestamp".to_string(),
            "state_label".to_string(),
        ];
        header.extend((1..=self.feature_dim).map(|k| format!("feat_{k}")));
        w.write_record(&header).map_err(csv_io)?;
        for it in &self.interactions {
            let mut row = vec![
                self.user_labels[it.user].clone(),
                self.item_labels[it.item].clone(),
                it.timestamp.to_string(),
                it.state_label.to_string(),
            ];
            row.extend(it.features.iter().map(|f| f.to_string()));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

/// Reads a log from a file of `user_id,item_id,timestamp,state_label,feat_1,...` rows.
pub fn load_csv(path: &Path, has_header: bool) -> Result<InteractionLog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), has_header)
}

/// Parses rows, stably sorts them by timestamp, shifts time so the earliest
/// event is at zero, and remaps ids densely in first-appearance order.
pub fn read_csv<R: Read>(input: R, has_header: bool) -> Result<InteractionLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    struct Raw {
        user: String,
        item: String,
        timestamp: f64,
        state_label: i64,
        features: Vec<f64>,
    }

    let mut rows: Vec<Raw> = Vec::new();
    let mut feature_dim: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if has_header && idx == 0 {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected at least 4 columns, found {}", record.len()),
            });
        }
        let timestamp: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("timestamp {:?} is not numeric", &record[2]),
        })?;
        if !timestamp.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {:?} is not finite", &record[2]),
            });
        }
        let state_label = parse_label(&record[3]).ok_or_else(|| Error::Parse {
            line,
            message: format!("state label {:?} is not an integer", &record[3]),
        })?;
        let features = record
            .iter()
            .skip(4)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("feature {f:?} is not numeric"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        match feature_dim {
            None => feature_dim = Some(features.len()),
            Some(w) if w != features.len() => {
                return Err(Error::Schema {
                    line,
                    expected: w,
                    found: features.len(),
                })
            }
            _ => {}
        }
        rows.push(Raw {
            user: record[0].to_string(),
            item: record[1].to_string(),
            timestamp,
            state_label,
            features,
        });
    }

    // Vec::sort_by is stable, so equal timestamps keep file order.
    rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let origin = rows.first().map_or(0.0, |r| r.timestamp);

    let mut user_ids: HashMap<String, usize> = HashMap::new();
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    let mut user_labels = Vec::new();
    let mut item_labels = Vec::new();
    let mut interactions = Vec::with_capacity(rows.len());
    for row in rows {
        let user = *user_ids.entry(row.user.clone()).or_insert_with(|| {
            user_labels.push(row.user.clone());
            user_labels.len() - 1
        });
        let item = *item_ids.entry(row.item.clone()).or_insert_with(|| {
            item_labels.push(row.item.clone());
            item_labels.len() - 1
        });
        interactions.push(Interaction {
            user,
            item,
            timestamp: row.timestamp - origin,
            features: row.features,
            state_label: row.state_label,
        });
    }
    InteractionLog::with_labels(
        interactions,
        feature_dim.unwrap_or(0),
        user_labels,
        item_labels,
    )
}

fn parse_label(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        let f = s.parse::<f64>().ok()?;
        (f.fract() == 0.0 && f.is_finite()).then_some(f as i64)
    })
}

/// Splits by time order: the first `ceil(train_fraction * len)` interactions
/// train, the rest test. Both halves keep the full id spaces.
pub fn chronological_split(
    log: &InteractionLog,
    train_fraction: f64,
) -> Result<(InteractionLog, InteractionLog)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = log.len();
    // Guard against 16/17 * 17 landing a hair above 16.
    let raw = train_fraction * n as f64;
    let rounded = raw.round();
    let cut = if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    };
    let cut = cut.min(n);
    Ok((log.slice(0..cut), log.slice(cut..n)))
}

fn item_counts(log: &InteractionLog, user: usize) -> Result<HashMap<usize, usize>> {
    let mut counts = HashMap::new();
    for it in log.interactions().iter().filter(|it| it.user == user) {
        *counts.entry(it.item).or_insert(0) += 1;
    }
    if counts.is_empty() {
        return Err(Error::UndefinedEntropy(user));
    }
    Ok(counts)
}

fn entropy_of(counts: &HashMap<usize, usize>) -> f64 {
    let total: usize = counts.values().sum();
    let total = total as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let q = c as f64 / total;
            -q * q.ln()
        })
        .sum();
    h.max(0.0)
}

fn top_ratio_of(counts: &HashMap<usize, usize>) -> f64 {
    let total: usize = counts.values().sum();
    let top = counts.values().copied().max().unwrap_or(0);
    top as f64 / total as f64
}

/// Shannon entropy (nats) of the item distribution in `user`'s history.
pub fn user_history_entropy(log: &InteractionLog, user: usize) -> Result<f64> {
    Ok(entropy_of(&item_counts(log, user)?))
}

/// Share of `user`'s interactions that go to their most frequent item.
pub fn top_item_ratio(log: &InteractionLog, user: usize) -> Result<f64> {
    Ok(top_ratio_of(&item_counts(log, user)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserStats {
    pub user: usize,
    pub label: String,
    pub interactions: usize,
    pub unique_items: usize,
    pub entropy: f64,
    pub top_item_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub active_users: usize,
    pub interactions_per_user: f64,
    pub unique_items_per_user: f64,
    /// Natural-log entropy.
    pub avg_user_entropy: f64,
    pub avg_user_entropy_bits: f64,
    pub avg_top_item_ratio: f64,
    #[serde(skip)]
    pub per_user: Vec<UserStats>,
}

/// Aggregates the per-user metrics, averaging only over users that appear.
pub fn summary_stats(log: &InteractionLog) -> Result<DatasetStats> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut per_user_counts: Vec<HashMap<usize, usize>> = vec![HashMap::new(); log.num_users()];
    for it in log.interactions() {
        *per_user_counts[it.user].entry(it.item).or_insert(0) += 1;
    }
    let per_user: Vec<UserStats> = per_user_counts
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_empty())
        .map(|(user, counts)| UserStats {
            user,
            label: log.user_label(user).to_string(),
            interactions: counts.values().sum(),
            unique_items: counts.len(),
            entropy: entropy_of(counts),
            top_item_ratio: top_ratio_of(counts),
        })
        .collect();
    let n = per_user.len() as f64;
    let mean = |f: &dyn Fn(&UserStats) -> f64| per_user.iter().map(f).sum::<f64>() / n;
    let avg_entropy = mean(&|s| s.entropy);
    Ok(DatasetStats {
        num_users: log.num_users(),
        num_items: log.num_items(),
        num_interactions: log.len(),
        active_users: per_user.len(),
        interactions_per_user: mean(&|s| s.interactions as f64),
        unique_items_per_user: mean(&|s| s.unique_items as f64),
        avg_user_entropy: avg_entropy,
        avg_user_entropy_bits: avg_entropy / std::f64::consts::LN_2,
        avg_top_item_ratio: mean(&|s| s.top_item_ratio),
        per_user,
    })
}

impl DatasetStats {
    /// One row per active user.
    pub fn write_per_user_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_user {
            w.serialize(row).map_err(csv_io)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(pairs: &[(usize, usize)], users: usize, items: usize) -> InteractionLog {
        let its = pairs
            .iter()
            .enumerate()
            .map(|(t, &(u, i))| Interaction::new(u, i, t as f64))
            .collect();
        InteractionLog::new(its, users, items, 0).unwrap()
    }

    #[test]
    fn remaps_ids_and_shifts_time() {
        let log = read_csv("a,x,5.0,0\nb,x,7.0,0\n".as_bytes(), false).unwrap();
        assert_eq!(log.num_users(), 2);
        assert_eq!(log.num_items(), 1);
        assert_eq!(log.user_label(0), "a");
        assert_eq!(log.user_label(1), "b");
        let ts: Vec<f64> = log.interactions().iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, vec![0.0, 2.0]);
        assert_eq!(log.interactions()[1].user, 1);
        assert_eq!(log.interactions()[1].item, 0);
    }

    #[test]
    fn header_only_file_is_empty_log() {
        let log = read_csv("user_id,item_id,timestamp,state_label\n".as_bytes(), true).unwrap();
        assert!(log.is_empty());
        assert_eq!(log.feature_dim(), 0);
    }

    #[test]
    fn unsorted_rows_are_stably_sorted() {
        let log = read_csv("a,x,3,0\nb,y,1,0\nc,z,1,0\n".as_bytes(), false).unwrap();
        let labels: Vec<&str> = log
            .interactions()
            .iter()
            .map(|i| log.user_label(i.user))
            .collect();
        assert_eq!(labels, vec!["b", "c", "a"]);
    }

    #[test]
    fn features_are_parsed() {
        let log = read_csv("a,x,0,1,0.5,-1\nb,y,1,0,2,3\n".as_bytes(), false).unwrap();
        assert_eq!(log.feature_dim(), 2);
        assert_eq!(log.interactions()[0].features, vec![0.5, -1.0]);
        assert_eq!(log.interactions()[0].state_label, 1);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = read_csv("h,h,h,h\na,x,1,0\nb,y\n".as_bytes(), true).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = read_csv("a,x,soon,0\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = read_csv("a,x,1,0,0.1\nb,y,2,0\n".as_bytes(), false).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Schema {
                    line: 2,
                    expected: 1,
                    found: 0
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn split_follows_ceiling_rule() {
        let log17 = log_of(&[(0, 0); 17], 1, 1);
        let (tr, te) = chronological_split(&log17, 16.0 / 17.0).unwrap();
        assert_eq!((tr.len(), te.len()), (16, 1));

        let log10 = log_of(&[(0, 0); 10], 1, 1);
        let (tr, te) = chronological_split(&log10, 0.5).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));

        let log1 = log_of(&[(0, 0)], 1, 1);
        let (tr, te) = chronological_split(&log1, 0.9).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 0));
        assert_eq!(te.num_users(), 1);

        assert!(chronological_split(&log1, 0.0).is_err());
        assert!(chronological_split(&log1, 1.0).is_err());
    }

    #[test]
    fn entropy_and_top_ratio_examples() {
        let log = log_of(
            &[(0, 0), (0, 0), (0, 1), (0, 1), (1, 0), (1, 0), (1, 0)],
            3,
            2,
        );
        assert!((user_history_entropy(&log, 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(user_history_entropy(&log, 1).unwrap(), 0.0);
        assert!(matches!(
            user_history_entropy(&log, 2),
            Err(Error::UndefinedEntropy(2))
        ));

        let log = log_of(&[(0, 0), (0, 0), (0, 1), (1, 1)], 2, 2);
        assert!((top_item_ratio(&log, 0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(top_item_ratio(&log, 1).unwrap(), 1.0);
    }

    #[test]
    fn summary_examples() {
        let single = log_of(&[(0, 0)], 1, 1);
        let s = summary_stats(&single).unwrap();
        assert_eq!(s.interactions_per_user, 1.0);
        assert_eq!(s.unique_items_per_user, 1.0);

        let two = log_of(&[(0, 0), (0, 1), (1, 0)], 2, 2);
        let s = summary_stats(&two).unwrap();
        assert_eq!(s.interactions_per_user, 1.5);
        assert_eq!(s.unique_items_per_user, 1.5);

        let empty = InteractionLog::new(vec![], 1, 1, 0).unwrap();
        assert!(matches!(summary_stats(&empty), Err(Error::EmptyLog)));
    }

    #[test]
    fn summary_skips_absent_users() {
        let log = log_of(&[(0, 0), (0, 0)], 5, 1);
        let s = summary_stats(&log).unwrap();
        assert_eq!(s.active_users, 1);
        assert_eq!(s.interactions_per_user, 2.0);
    }
}
