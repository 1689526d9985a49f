//! Full-ranking top-K evaluation and planted-graph quality scores.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datahub::{InteractionDataset, Pair};
use crate::error::{Error, Result};
use crate::graphs::top_k_indices;
use crate::numerics::Matrix;

/// Top-`k` items per user by score with train positives masked; ties go to
/// the smaller item index.
pub fn rank_all(scores: &Matrix, ds: &InteractionDataset, k: usize) -> Result<Vec<Vec<usize>>> {
    if scores.shape() != (ds.num_users(), ds.num_items()) {
        return Err(Error::dim("rank_all", scores.shape(), (ds.num_users(), ds.num_items())));
    }
    Ok((0..ds.num_users())
        .into_par_iter()
        .map(|u| {
            let mut row = scores.row(u).to_vec();
            for &i in ds.train_items(u) {
                row[i] = f64::NEG_INFINITY;
            }
            let available = ds.num_items() - ds.train_items(u).len();
            top_k_indices(&row, k.min(available))
        })
        .collect())
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn user_recall(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-gain NDCG over the first `k` ranks.
pub fn user_ndcg(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

fn mean_over_users(rankings: &[Vec<usize>], relevant: &[Vec<usize>], f: impl Fn(&[usize], &[usize]) -> f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (ranked, rel) in rankings.iter().zip(relevant) {
        if rel.is_empty() {
            continue;
        }
        total += f(ranked, rel);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Mean Recall@k over users with at least one relevant item.
pub fn recall_at_k(rankings: &[Vec<usize>], relevant: &[Vec<usize>], k: usize) -> f64 {
    mean_over_users(rankings, relevant, |r, rel| user_recall(r, rel, k))
}

pub fn ndcg_at_k(rankings: &[Vec<usize>], relevant: &[Vec<usize>], k: usize) -> f64 {
    mean_over_users(rankings, relevant, |r, rel| user_ndcg(r, rel, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(with = "cutoff_keys")]
    pub recall: BTreeMap<usize, f64>,
    #[serde(with = "cutoff_keys")]
    pub ndcg: BTreeMap<usize, f64>,
    /// Users with at least one relevant item.
    pub users: usize,
}

/// Cutoffs travel as string keys. Tagged report records buffer map keys as
/// strings, so integer keys would not deserialize back.
mod cutoff_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("bad cutoff {k:?}")))
            })
            .collect()
    }
}

impl MetricReport {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Ranks every user once at the largest cutoff and scores `split`.
pub fn evaluate(scores: &Matrix, ds: &InteractionDataset, split: &[Pair], ks: &[usize]) -> Result<MetricReport> {
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if max_k == 0 {
        return Err(Error::Config("at least one positive cutoff K is required".into()));
    }
    let rankings = rank_all(scores, ds, max_k)?;
    let relevant = ds.by_user(split);
    let users = relevant.iter().filter(|r| !r.is_empty()).count();
    let mut report = MetricReport {
        recall: BTreeMap::new(),
        ndcg: BTreeMap::new(),
        users,
    };
    for &k in ks {
        report.recall.insert(k, recall_at_k(&rankings, &relevant, k));
        report.ndcg.insert(k, ndcg_at_k(&rankings, &relevant, k));
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgePrecision {
    pub precision: f64,
    pub edges: usize,
    /// Set when the graph has no off-diagonal edge and precision is 1 by
    /// convention.
    pub vacuous: bool,
}

/// Fraction of off-diagonal nonzero entries joining items of one cluster.
pub fn graph_edge_precision(graph: &Matrix, labels: &[usize]) -> Result<EdgePrecision> {
    let n = labels.len();
    if graph.shape() != (n, n) {
        return Err(Error::dim("graph_edge_precision", graph.shape(), (n, n)));
    }
    let (mut edges, mut same) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i != j && graph.get(i, j) != 0.0 {
                edges += 1;
                same += usize::from(labels[i] == labels[j]);
            }
        }
    }
    Ok(if edges == 0 {
        EdgePrecision {
            precision: 1.0,
            edges,
            vacuous: true,
        }
    } else {
        EdgePrecision {
            precision: same as f64 / edges as f64,
            edges,
            vacuous: false,
        }
    })
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the score of `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}
