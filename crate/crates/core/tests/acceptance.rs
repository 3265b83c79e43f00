//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 4 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempo_embed::evaluation::{
    mrr, recall_at_k, run_type1_sweep, run_type2_convergence, run_type4_comparison, MetricsReport,
    Type1Sweep, Type2Convergence, Type4Comparison,
};
use tempo_embed::graphdata::{load_csv, summary_stats, Interaction, InteractionLog};
use tempo_embed::losses::{batch_loss, LossConfig, LossKind};
use tempo_embed::synthgen::{self, Type4Params};
use tempo_embed::tbatcher::{brute_force_batches, build_batches};
use tempo_embed::trainer::{gradient_check_toy, TrainConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_log(rng: &mut ChaCha8Rng) -> InteractionLog {
    let users = rng.gen_range(1..=20);
    let items = rng.gen_range(1..=20);
    let n = rng.gen_range(0..=200);
    let its = (0..n)
        .map(|t| Interaction::new(rng.gen_range(0..users), rng.gen_range(0..items), t as f64))
        .collect();
    InteractionLog::new(its, users, items, 0).expect("valid random log")
}

fn c1_batching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logs: Vec<InteractionLog> = (0..1000).map(|_| random_log(&mut rng)).collect();
    let start = Instant::now();
    let mismatches = logs
        .iter()
        .filter(|log| brute_force_batches(log).expect("within oracle scale") != build_batches(log))
        .count();
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!(
            "1000 logs, {mismatches} mismatches, {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_type1_structure() -> Outcome {
    let mut cases = 0;
    let mut violations = 0;
    for &k in &[2usize, 10, 100, 1000, 4000, 10_000] {
        for &p in &[0.0, 0.3, 0.55, 0.6, 2.0 / 3.0, 0.8, 1.0] {
            for seed in 0..3 {
                let log = synthgen::gen_type1(k, p, seed).expect("valid type-1 spec");
                let sizes = build_batches(&log).containing_batch_sizes();
                for (it, &size) in log.interactions().iter().zip(&sizes) {
                    if it.user != synthgen::TYPE1_USER_3 {
                        continue;
                    }
                    let expected = if it.item == synthgen::TYPE1_ITEM_2 {
                        1
                    } else {
                        2
                    };
                    if size != expected {
                        violations += 1;
                    }
                }
                cases += 1;
            }
        }
    }
    check(
        violations == 0,
        format!("{cases} networks, {violations} violations"),
    )
}

fn c3_decision_boundary() -> Outcome {
    let sweep = Type1Sweep {
        k: 4000,
        p_grid: vec![0.30, 0.55, 0.60, 0.80],
        n_seeds: 5,
        losses: LossKind::TRAINABLE.to_vec(),
        train: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
    };
    let start = Instant::now();
    let (_, summary) = match run_type1_sweep(&sweep, None) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("sweep failed: {e}")),
    };
    let elapsed = start.elapsed();
    let mut ok = elapsed <= Duration::from_secs(600);
    let mut parts = Vec::new();
    for s in &summary {
        let good = match (s.p, s.loss) {
            (p, LossKind::TBatch) if p == 0.55 || p == 0.60 => s.mean_accuracy <= (1.0 - p) + 0.05,
            (p, _) if p == 0.55 || p == 0.60 => s.mean_accuracy >= p - 0.05,
            (p, _) => (s.mean_accuracy - p.max(1.0 - p)).abs() <= 0.05,
        };
        ok &= good;
        parts.push(format!(
            "p={} {}={:.3}{}",
            s.p,
            s.loss,
            s.mean_accuracy,
            if good { "" } else { "!" }
        ));
    }
    check(
        ok,
        format!("{}; {:.0} s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn c4_loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut worst_a = 0.0_f64;
    let mut worst_b = 0.0_f64;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=8);
        let cfg = LossConfig {
            lambda_u: 0.0,
            lambda_i: 0.0,
            d,
            num_users: rng.gen_range(1..=50),
            num_items: rng.gen_range(1..=50),
        };
        let pair = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
            (
                (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
        };
        // (a) a size-1 batch
        let single = vec![pair(&mut rng)];
        let tb = batch_loss(LossKind::TBatch, &cfg, &single, &[], &[])
            .unwrap()
            .total;
        let is = batch_loss(LossKind::ItemSum, &cfg, &single, &[], &[])
            .unwrap()
            .total;
        let fs = batch_loss(LossKind::FullSum, &cfg, &single, &[], &[])
            .unwrap()
            .total;
        worst_a = worst_a.max(rel(tb, is)).max(rel(fs, d as f64 * is));
        if tb != is {
            worst_a = worst_a.max(1.0);
        }
        // (b) duplicating a batch
        let n = rng.gen_range(1..=6);
        let batch: Vec<_> = (0..n).map(|_| pair(&mut rng)).collect();
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        for kind in LossKind::TRAINABLE {
            let once = batch_loss(kind, &cfg, &batch, &[], &[])
                .unwrap()
                .prediction_term;
            let twice = batch_loss(kind, &cfg, &doubled, &[], &[])
                .unwrap()
                .prediction_term;
            let expected = if kind == LossKind::TBatch {
                once
            } else {
                2.0 * once
            };
            worst_b = worst_b.max(rel(twice, expected));
        }
    }
    check(
        worst_a <= 1e-12 && worst_b <= 1e-12,
        format!("1000 inputs, worst relative error (a) {worst_a:.1e}, (b) {worst_b:.1e}"),
    )
}

fn c5_gradients() -> Outcome {
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for seed in [5, 6, 7] {
        match gradient_check_toy(seed, 4) {
            Ok(rows) => {
                for (kind, err) in rows {
                    worst = worst.max(err);
                    if seed == 5 {
                        parts.push(format!("{kind} {err:.1e}"));
                    }
                }
            }
            Err(e) => return Outcome::Fail(format!("gradient check failed: {e}")),
        }
    }
    check(
        worst < 1e-4,
        format!("max relative error {worst:.1e} ({})", parts.join(", ")),
    )
}

fn c6_type2_convergence() -> Outcome {
    let exp = Type2Convergence {
        n_pairs: 5,
        repetitions: 200,
        n_seeds: 5,
        losses: LossKind::TRAINABLE.to_vec(),
        train: TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
    };
    let start = Instant::now();
    let (_, summary) = match run_type2_convergence(&exp, None) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("experiment failed: {e}")),
    };
    let elapsed = start.elapsed();
    let epochs = |kind: LossKind| {
        summary
            .iter()
            .find(|s| s.loss == kind)
            .and_then(|s| s.mean_epochs_to_perfect)
    };
    let (fs, is, tb) = (
        epochs(LossKind::FullSum),
        epochs(LossKind::ItemSum),
        epochs(LossKind::TBatch),
    );
    let fmt = |x: Option<f64>| x.map_or("never".to_string(), |v| format!("{v:.1}"));
    let ok = match (fs, is, tb) {
        (Some(f), Some(i), Some(t)) => f <= i && i <= t,
        _ => false,
    } && elapsed <= Duration::from_secs(600);
    check(
        ok,
        format!(
            "mean epochs to perfect: full-sum {}, item-sum {}, tbatch {}; {:.0} s",
            fmt(fs),
            fmt(is),
            fmt(tb),
            elapsed.as_secs_f64()
        ),
    )
}

fn c7_type4_improvement() -> Outcome {
    let exp = Type4Comparison {
        params: Type4Params::default(),
        train_sizes: vec![8000],
        n_samples: 10,
        losses: vec![LossKind::TBatch, LossKind::ItemSum],
        train: TrainConfig::default(),
    };
    let start = Instant::now();
    let (_, summary) = match run_type4_comparison(&exp, None) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("experiment failed: {e}")),
    };
    let elapsed = start.elapsed();
    let row = |kind: LossKind| {
        summary
            .iter()
            .find(|s| s.loss == kind)
            .expect("row per loss")
    };
    let (tb, is) = (row(LossKind::TBatch), row(LossKind::ItemSum));
    let gain = is.mrr_change_pct.unwrap_or(f64::NAN);
    let ok = is.mrr > tb.mrr
        && is.recall_at_10 > tb.recall_at_10
        && gain > 5.0
        && elapsed <= Duration::from_secs(3600);
    check(
        ok,
        format!(
            "MRR tbatch {:.4} item-sum {:.4} ({gain:+.2}%), R@10 tbatch {:.4} item-sum {:.4}; {:.0} s",
            tb.mrr,
            is.mrr,
            tb.recall_at_10,
            is.recall_at_10,
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_dataset_statistics() -> Outcome {
    let Some(dir) = std::env::var_os("TEMPO_EMBED_DATA_DIR") else {
        return Outcome::Skip("TEMPO_EMBED_DATA_DIR unset; Myket dataset not present".into());
    };
    let path = PathBuf::from(dir).join("myket.csv");
    if !path.exists() {
        return Outcome::Skip(format!("{} not present", path.display()));
    }
    let stats = match load_csv(&path, true).and_then(|log| summary_stats(&log)) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(format!("could not load {}: {e}", path.display())),
    };
    let hard = stats.num_users == 10_000
        && stats.num_items == 7_988
        && stats.num_interactions == 694_121
        && (stats.interactions_per_user - 69.4).abs() <= 0.1
        && (stats.unique_items_per_user - 54.6).abs() <= 0.1
        && (stats.avg_top_item_ratio - 0.095).abs() <= 0.005;
    let soft = (stats.avg_user_entropy - 3.718).abs() <= 0.05;
    check(
        hard,
        format!(
            "|U|={} |I|={} |S|={} per-user {:.2} unique {:.2} top {:.4} entropy {:.3} nats{}",
            stats.num_users,
            stats.num_items,
            stats.num_interactions,
            stats.interactions_per_user,
            stats.unique_items_per_user,
            stats.avg_top_item_ratio,
            stats.avg_user_entropy,
            if soft {
                ""
            } else {
                " (soft entropy check off)"
            }
        ),
    )
}

fn c9_metric_units() -> Outcome {
    let a = mrr(&[1, 2, 4]);
    let b = recall_at_k(&[1, 10, 11], 10);
    let perfect = MetricsReport::from_ranks(vec![1; 7]);
    let ok = a == (1.0 + 0.5 + 0.25) / 3.0
        && b == 2.0 / 3.0
        && perfect.mrr == 1.0
        && perfect.recall_at_10 == 1.0;
    check(
        ok,
        format!(
            "MRR[1,2,4]={a:.4}, R@10[1,10,11]={b:.4}, perfect {}/{}",
            perfect.mrr, perfect.recall_at_10
        ),
    )
}

const CRITERIA: &[Criterion] = &[
    (1, "batching oracle equivalence", c1_batching_oracle),
    (2, "type-1 batch structure", c2_type1_structure),
    (3, "decision boundary reproduction", c3_decision_boundary),
    (4, "loss identities", c4_loss_identities),
    (5, "gradient correctness", c5_gradients),
    (6, "type-2 convergence ordering", c6_type2_convergence),
    (7, "type-4 directional improvement", c7_type4_improvement),
    (8, "dataset statistics", c8_dataset_statistics),
    (9, "metric units", c9_metric_units),
];

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for &(id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|_| Outcome::Fail("panicked".into()));
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} [{tag}] {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
