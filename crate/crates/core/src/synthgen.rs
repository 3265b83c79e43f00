//! Synthetic interaction networks and the closed-form decision rule for the
//! two-user network.
//!
//! Node labels follow one convention across generators where it matters:
//! users carry odd labels (`1`, `3`, ...) and items even labels (`2`, `4`,
//! ...), so "edge (1, 4)" means user `1` with item `4`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Interaction, InteractionLog};
use crate::losses::LossKind;
use crate::seed;

/// Item index of label `2` in a type-1 log.
pub const TYPE1_ITEM_2: usize = 0;
/// Item index of label `4` in a type-1 log.
pub const TYPE1_ITEM_4: usize = 1;
/// User index of label `1` in type-1 and type-2 logs.
pub const USER_1: usize = 0;
/// User index of label `3` in a type-1 log.
pub const TYPE1_USER_3: usize = 1;

fn odd_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| (2 * i + 1).to_string()).collect()
}

fn even_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| (2 * i + 2).to_string()).collect()
}

/// Two users, two items, `k / 2` rounds of `(1, 2)` followed by `(3, 4)` with
/// probability `p`, otherwise `(3, 2)`. Timestamps are `0..k`.
pub fn gen_type1(k: usize, p: f64, seed: u64) -> Result<InteractionLog> {
    if !k.is_multiple_of(2) {
        return Err(Error::Argument(format!("k must be even, got {k}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("p must lie in [0, 1], got {p}")));
    }
    let mut rng = seed::stream(seed, "synthgen.type1");
    let mut its = Vec::with_capacity(k);
    for round in 0..k / 2 {
        let t = (2 * round) as f64;
        its.push(Interaction::new(USER_1, TYPE1_ITEM_2, t));
        let r: f64 = rng.gen();
        let item = if r < p { TYPE1_ITEM_4 } else { TYPE1_ITEM_2 };
        its.push(Interaction::new(TYPE1_USER_3, item, t + 1.0));
    }
    InteractionLog::with_labels(its, 0, odd_labels(2), even_labels(2))
}

/// Repeats the base sequence `(1, 2), (1, 4), (3, 4), (5, 6), ...` — user 1's
/// two edges followed by one edge per remaining user/item pair.
///
/// The process is deterministic; `seed` is accepted for interface symmetry.
pub fn gen_type2(n_pairs: usize, repetitions: usize, _seed: u64) -> Result<InteractionLog> {
    if n_pairs < 2 {
        return Err(Error::Argument(format!(
            "type 2 needs at least 2 pairs, got {n_pairs}"
        )));
    }
    if repetitions == 0 {
        return Err(Error::Argument(
            "type 2 needs at least one repetition".into(),
        ));
    }
    let mut base = vec![(USER_1, 0), (USER_1, 1)];
    base.extend((1..n_pairs).map(|u| (u, u)));
    let its = (0..repetitions)
        .flat_map(|_| base.iter().copied())
        .enumerate()
        .map(|(t, (u, j))| Interaction::new(u, j, t as f64))
        .collect();
    InteractionLog::with_labels(its, 0, odd_labels(n_pairs), even_labels(n_pairs))
}

/// Interaction indices of user 1's first (`(1, 2)`) and second (`(1, 4)`) edge.
pub fn type2_edge_indices(log: &InteractionLog) -> (Vec<usize>, Vec<usize>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (idx, it) in log.interactions().iter().enumerate() {
        match (it.user, it.item) {
            (USER_1, 0) => first.push(idx),
            (USER_1, 1) => second.push(idx),
            _ => {}
        }
    }
    (first, second)
}

/// The branching structure behind the type-3 walks: levels of 1, 2, 4 and 4
/// items, root first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovTree {
    children: Vec<Vec<usize>>,
}

impl MarkovTree {
    pub fn standard() -> MarkovTree {
        let mut children = vec![Vec::new(); 11];
        children[0] = vec![1, 2];
        children[1] = vec![3, 4];
        children[2] = vec![5, 6];
        // Third level (3..=6) to leaves (7..=10): node 3+k feeds leaves k and
        // k+1 (mod 4), so every leaf has two parents.
        for k in 0..4 {
            children[3 + k] = vec![7 + k, 7 + (k + 1) % 4];
        }
        MarkovTree { children }
    }

    pub fn num_items(&self) -> usize {
        self.children.len()
    }

    pub fn children(&self, item: usize) -> &[usize] {
        &self.children[item]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn depth(&self) -> usize {
        4
    }
}

/// Every user walks the [`MarkovTree`] from root to leaf, picking children
/// uniformly. Users advance in lockstep: step `s` of every user happens
/// before step `s + 1` of any user, in a freshly shuffled user order per step.
pub fn gen_type3(n_users: usize, seed: u64) -> Result<InteractionLog> {
    if n_users == 0 {
        return Err(Error::Argument("type 3 needs at least one user".into()));
    }
    let tree = MarkovTree::standard();
    let mut walk_rng = seed::stream(seed, "synthgen.type3.walk");
    let mut order_rng = seed::stream(seed, "synthgen.type3.order");
    let paths: Vec<Vec<usize>> = (0..n_users)
        .map(|_| {
            let mut node = tree.root();
            let mut path = vec![node];
            while path.len() < tree.depth() {
                node = *tree
                    .children(node)
                    .choose(&mut walk_rng)
                    .expect("inner node");
                path.push(node);
            }
            path
        })
        .collect();
    let mut its = Vec::with_capacity(n_users * tree.depth());
    let mut users: Vec<usize> = (0..n_users).collect();
    // `paths` is indexed by user, then by step.
    #[allow(clippy::needless_range_loop)]
    for step in 0..tree.depth() {
        users.shuffle(&mut order_rng);
        for &u in &users {
            let t = its.len() as f64;
            its.push(Interaction::new(u, paths[u][step], t));
        }
    }
    let user_labels = (1..=n_users).map(|u| format!("u{u}")).collect();
    let item_labels = (1..=tree.num_items()).map(|j| j.to_string()).collect();
    InteractionLog::with_labels(its, 0, user_labels, item_labels)
}

/// Directed item graph where every node has the same out-degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationGraph {
    out: Vec<Vec<usize>>,
}

impl RecommendationGraph {
    pub fn num_nodes(&self) -> usize {
        self.out.len()
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.out[from].contains(&to)
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.out.len()];
        for targets in &self.out {
            for &t in targets {
                deg[t] += 1;
            }
        }
        deg
    }
}

/// k-out preferential attachment: the first `k_out + 1` items form a complete
/// directed graph; each later item links to `k_out` distinct earlier items
/// drawn with probability proportional to in-degree + 1.
pub fn build_recommendation_graph(
    n_items: usize,
    k_out: usize,
    seed: u64,
) -> Result<RecommendationGraph> {
    if n_items <= k_out {
        return Err(Error::Argument(format!(
            "need more items than the out-degree ({n_items} <= {k_out})"
        )));
    }
    let mut rng = seed::stream(seed, "synthgen.recommendation_graph");
    let core = k_out + 1;
    let mut out: Vec<Vec<usize>> = (0..core)
        .map(|i| (0..core).filter(|&j| j != i).collect())
        .collect();
    let mut in_deg = vec![0usize; n_items];
    for targets in &out {
        for &t in targets {
            in_deg[t] += 1;
        }
    }
    for node in core..n_items {
        let mut chosen: Vec<usize> = Vec::with_capacity(k_out);
        while chosen.len() < k_out {
            let total: usize = (0..node)
                .filter(|c| !chosen.contains(c))
                .map(|c| in_deg[c] + 1)
                .sum();
            let mut pick = rng.gen_range(0..total);
            let target = (0..node)
                .filter(|c| !chosen.contains(c))
                .find(|&c| {
                    let w = in_deg[c] + 1;
                    if pick < w {
                        true
                    } else {
                        pick -= w;
                        false
                    }
                })
                .expect("weights cover the draw");
            chosen.push(target);
        }
        for &t in &chosen {
            in_deg[t] += 1;
        }
        out.push(chosen);
    }
    Ok(RecommendationGraph { out })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type4Params {
    pub n_users: usize,
    pub n_items: usize,
    pub k_out: usize,
    pub p_jump: f64,
    pub arrival_rate: f64,
    pub n_interactions: usize,
}

impl Default for Type4Params {
    /// 100 users, 100 items, out-degree 10, jump probability 1/4, and 8500
    /// interactions (8000 after a 16:1 split).
    fn default() -> Self {
        Type4Params {
            n_users: 100,
            n_items: 100,
            k_out: 10,
            p_jump: 0.25,
            arrival_rate: 1.0,
            n_interactions: 8500,
        }
    }
}

/// Random users walking a [`RecommendationGraph`]: with probability `p_jump`
/// (or on a user's first interaction) the item is uniform, otherwise it is a
/// uniform out-neighbor of the user's previous item. Inter-arrival times are
/// exponential.
pub fn gen_type4(params: &Type4Params, seed: u64) -> Result<(InteractionLog, RecommendationGraph)> {
    if params.n_users == 0 || params.n_interactions == 0 {
        return Err(Error::Argument(
            "type 4 needs users and interactions".into(),
        ));
    }
    if !(0.0..=1.0).contains(&params.p_jump) {
        return Err(Error::Argument(format!(
            "p_jump must lie in [0, 1], got {}",
            params.p_jump
        )));
    }
    if !(params.arrival_rate > 0.0 && params.arrival_rate.is_finite()) {
        return Err(Error::Argument(format!(
            "arrival rate must be positive, got {}",
            params.arrival_rate
        )));
    }
    let exp = Exp::new(params.arrival_rate).expect("validated rate");
    let graph = build_recommendation_graph(params.n_items, params.k_out, seed)?;
    let mut rng = seed::stream(seed, "synthgen.type4.walk");
    let mut last: Vec<Option<usize>> = vec![None; params.n_users];
    let mut t = 0.0_f64;
    let mut its = Vec::with_capacity(params.n_interactions);
    for _ in 0..params.n_interactions {
        let gap: f64 = exp.sample(&mut rng);
        let next = t + gap;
        t = if next > t { next } else { t.next_up() };
        let user = rng.gen_range(0..params.n_users);
        let jump: f64 = rng.gen();
        let item = match last[user] {
            Some(prev) if jump >= params.p_jump => *graph
                .out_neighbors(prev)
                .choose(&mut rng)
                .expect("k_out > 0"),
            _ => rng.gen_range(0..params.n_items),
        };
        last[user] = Some(item);
        its.push(Interaction::new(user, item, t));
    }
    let log = InteractionLog::new(its, params.n_users, params.n_items, 0)?;
    Ok((log, graph))
}

/// Parameters of one synthetic generator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SynthSpec {
    Type1 {
        k: usize,
        p: f64,
        seed: u64,
    },
    Type2 {
        n_pairs: usize,
        repetitions: usize,
        seed: u64,
    },
    Type3 {
        n_users: usize,
        seed: u64,
    },
    Type4 {
        params: Type4Params,
        seed: u64,
    },
}

impl SynthSpec {
    pub fn generate(&self) -> Result<InteractionLog> {
        match *self {
            SynthSpec::Type1 { k, p, seed } => gen_type1(k, p, seed),
            SynthSpec::Type2 {
                n_pairs,
                repetitions,
                seed,
            } => gen_type2(n_pairs, repetitions, seed),
            SynthSpec::Type3 { n_users, seed } => gen_type3(n_users, seed),
            SynthSpec::Type4 { params, seed } => gen_type4(&params, seed).map(|(log, _)| log),
        }
    }
}

/// Item (index into a type-1 log) that minimizes `kind`'s loss for user 3.
///
/// Without batch normalization the minimizer is the majority item, so the
/// boundary is `p = 1/2`. Under `tbatch`, `(3, 4)` edges share their batch
/// and count half, so item 4 only wins once `p/2 > 1 − p`, i.e. `p > 2/3`.
pub fn optimal_choice(p: f64, kind: LossKind) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("p must lie in [0, 1], got {p}")));
    }
    let item_4 = match kind {
        LossKind::TBatch => p >= 2.0 / 3.0,
        LossKind::ItemSum | LossKind::FullSum | LossKind::UnbatchedReference => p > 0.5,
    };
    Ok(if item_4 { TYPE1_ITEM_4 } else { TYPE1_ITEM_2 })
}

/// Expected user-3 accuracy of always predicting `optimal_choice(p, kind)`.
pub fn choice_accuracy(p: f64, kind: LossKind) -> Result<f64> {
    Ok(if optimal_choice(p, kind)? == TYPE1_ITEM_4 {
        p
    } else {
        1.0 - p
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type1_degenerate_probabilities() {
        let log = gen_type1(20, 0.0, 1).unwrap();
        assert!(log.interactions().iter().all(|i| i.item == TYPE1_ITEM_2));
        let log = gen_type1(20, 1.0, 1).unwrap();
        for pair in log.interactions().chunks(2) {
            assert_eq!((pair[0].user, pair[0].item), (USER_1, TYPE1_ITEM_2));
            assert_eq!((pair[1].user, pair[1].item), (TYPE1_USER_3, TYPE1_ITEM_4));
        }
        assert_eq!(log.user_label(TYPE1_USER_3), "3");
        assert_eq!(log.item_label(TYPE1_ITEM_4), "4");
        let ts: Vec<f64> = log.interactions().iter().map(|i| i.timestamp).collect();
        assert_eq!(ts, (0..20).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn type1_rejects_odd_k() {
        assert!(matches!(gen_type1(7, 0.5, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn type1_binomial_concentration() {
        let log = gen_type1(10_000, 0.5, 42).unwrap();
        let count = log
            .interactions()
            .iter()
            .filter(|i| i.item == TYPE1_ITEM_4)
            .count() as f64;
        // Binomial(5000, 0.5): σ = √1250.
        assert!((count - 2500.0).abs() <= 3.0 * 1250f64.sqrt(), "{count}");
    }

    #[test]
    fn type2_counts() {
        let log = gen_type2(5, 1, 0).unwrap();
        assert_eq!(log.len(), 6);
        assert_eq!(log.num_users() + log.num_items(), 10);
        let log2 = gen_type2(5, 2, 0).unwrap();
        assert_eq!(log2.len(), 12);
        assert_eq!(log2.num_users(), log.num_users());
        assert!(gen_type2(1, 3, 0).is_err());
        assert!(gen_type2(5, 0, 0).is_err());
        let (first, second) = type2_edge_indices(&log2);
        assert_eq!(first, vec![0, 6]);
        assert_eq!(second, vec![1, 7]);
    }

    #[test]
    fn type3_paths_follow_the_tree() {
        let tree = MarkovTree::standard();
        let log = gen_type3(50, 3).unwrap();
        assert_eq!(log.len(), 200);
        for u in 0..50 {
            let h = log.user_history(u);
            assert_eq!(h.len(), 4);
            assert_eq!(h[0], tree.root());
            for w in h.windows(2) {
                assert!(tree.children(w[0]).contains(&w[1]));
            }
        }
        let ts: Vec<f64> = log.interactions().iter().map(|i| i.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn markov_tree_shape() {
        let tree = MarkovTree::standard();
        assert_eq!(tree.num_items(), 11);
        let mut parents = [0; 11];
        for j in 0..11 {
            for &c in tree.children(j) {
                parents[c] += 1;
            }
        }
        assert_eq!(&parents[7..], &[2, 2, 2, 2]);
    }

    #[test]
    fn recommendation_graph_out_degree() {
        let g = build_recommendation_graph(200, 10, 9).unwrap();
        for n in 0..g.num_nodes() {
            let out = g.out_neighbors(n);
            assert_eq!(out.len(), 10);
            assert!(!out.contains(&n));
            let mut s = out.to_vec();
            s.sort_unstable();
            s.dedup();
            assert_eq!(s.len(), 10);
        }
        assert!(build_recommendation_graph(10, 10, 0).is_err());
    }

    #[test]
    fn optimal_choice_regions() {
        assert_eq!(optimal_choice(0.6, LossKind::TBatch).unwrap(), TYPE1_ITEM_2);
        assert_eq!(
            optimal_choice(0.6, LossKind::ItemSum).unwrap(),
            TYPE1_ITEM_4
        );
        for kind in LossKind::TRAINABLE {
            assert_eq!(optimal_choice(0.3, kind).unwrap(), TYPE1_ITEM_2);
            assert_eq!(optimal_choice(0.8, kind).unwrap(), TYPE1_ITEM_4);
        }
        assert!((choice_accuracy(0.6, LossKind::TBatch).unwrap() - 0.4).abs() < 1e-15);
        assert!((choice_accuracy(0.6, LossKind::ItemSum).unwrap() - 0.6).abs() < 1e-15);
        assert!(optimal_choice(1.5, LossKind::TBatch).is_err());
    }
}
