//! Train/test splitting and full-ranking Recall@K / NDCG@K evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, InteractionLog};
use crate::model::PropagatedEmbeddings;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("test fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("temporal split needs timestamps for behavior `{0}`")]
    MissingTimestamps(String),
    #[error("embeddings cover {emb_users}x{emb_items} but data is {data_users}x{data_items}")]
    DimensionMismatch { emb_users: usize, emb_items: usize, data_users: usize, data_items: usize },
    #[error("cutoff list is empty or contains 0")]
    InvalidCutoffs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Random,
    Temporal,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SplitMode::Random),
            "temporal" => Ok(SplitMode::Temporal),
            other => Err(format!("unknown split mode `{other}` (expected random or temporal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { mode: SplitMode::Random, test_fraction: 0.2, seed: 0 }
    }
}

/// Holds out `floor(test_fraction * n)` of each user's distinct interactions
/// per behavior, chosen at random or as the latest by timestamp.
///
/// A held-out (user, item) pair leaves the training data under every
/// behavior, and appears in the test log of each behavior that links it, so
/// no test item is hidden by the training mask. Users left without any
/// training interaction are dropped from the test logs.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), EvalError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(EvalError::InvalidFraction(spec.test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut held: HashSet<(u32, u32)> = HashSet::new();
    for log in &data.logs {
        let mut per_user: BTreeMap<u32, BTreeMap<u32, i64>> = BTreeMap::new();
        match (spec.mode, &log.timestamps) {
            (SplitMode::Temporal, None) => return Err(EvalError::MissingTimestamps(log.behavior.clone())),
            (SplitMode::Temporal, Some(ts)) => {
                for (&(u, i), &t) in log.pairs.iter().zip(ts) {
                    let e = per_user.entry(u).or_default().entry(i).or_insert(t);
                    *e = (*e).max(t);
                }
            }
            (SplitMode::Random, _) => {
                for &(u, i) in &log.pairs {
                    per_user.entry(u).or_default().insert(i, 0);
                }
            }
        }
        for (u, items) in per_user {
            let n_test = (spec.test_fraction * items.len() as f64).floor() as usize;
            let mut items: Vec<(u32, i64)> = items.into_iter().collect();
            match spec.mode {
                SplitMode::Random => items.shuffle(&mut rng),
                SplitMode::Temporal => items.sort_by_key(|&(i, t)| (std::cmp::Reverse(t), std::cmp::Reverse(i))),
            }
            held.extend(items.iter().take(n_test).map(|&(i, _)| (u, i)));
        }
    }

    let mut train_logs = Vec::with_capacity(data.logs.len());
    let mut test_pairs: Vec<Vec<(u32, u32)>> = Vec::with_capacity(data.logs.len());
    for log in &data.logs {
        let mut pairs = Vec::new();
        let mut stamps = log.timestamps.as_ref().map(|_| Vec::new());
        let mut test = Vec::new();
        for (k, &p) in log.pairs.iter().enumerate() {
            if held.contains(&p) {
                test.push(p);
            } else {
                pairs.push(p);
                if let (Some(out), Some(ts)) = (stamps.as_mut(), &log.timestamps) {
                    out.push(ts[k]);
                }
            }
        }
        test.sort_unstable();
        test.dedup();
        train_logs.push(InteractionLog { behavior: log.behavior.clone(), pairs, timestamps: stamps });
        test_pairs.push(test);
    }

    let mut has_train = vec![false; data.n_users];
    for log in &train_logs {
        for &(u, _) in &log.pairs {
            has_train[u as usize] = true;
        }
    }
    let test_logs = data
        .logs
        .iter()
        .zip(test_pairs)
        .map(|(log, pairs)| {
            InteractionLog::new(
                log.behavior.clone(),
                pairs.into_iter().filter(|&(u, _)| has_train[u as usize]).collect(),
            )
        })
        .collect();
    Ok((
        Dataset { n_users: data.n_users, n_items: data.n_items, logs: train_logs },
        Dataset { n_users: data.n_users, n_items: data.n_items, logs: test_logs },
    ))
}

/// Fraction of test items found in the first `k` ranked items; `None` when
/// there are no test items.
pub fn recall_at_k(ranked: &[u32], test: &HashSet<u32>, k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| test.contains(i)).count();
    Some(hits as f64 / test.len() as f64)
}

/// Binary-relevance NDCG over the first `k` positions; `None` when there are
/// no test items.
pub fn ndcg_at_k(ranked: &[u32], test: &HashSet<u32>, k: usize) -> Option<f64> {
    if test.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(p, _)| 1.0 / (p as f64 + 2.0).log2())
        .sum();
    let idcg: f64 = (0..test.len().min(k)).map(|p| 1.0 / (p as f64 + 2.0).log2()).sum();
    Some(dcg / idcg)
}

/// Metric values keyed by cutoff.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMetrics {
    pub behavior: String,
    /// Users with a non-empty test set for this behavior.
    pub users: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub dataset: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub per_behavior: Vec<BehaviorMetrics>,
    /// Behaviors without any test user; excluded from the mean.
    pub absent: Vec<String>,
    pub mean: MetricSet,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn mean_ndcg(&self, k: usize) -> Option<f64> {
        self.mean.ndcg.get(&k).copied()
    }

    pub fn mean_recall(&self, k: usize) -> Option<f64> {
        self.mean.recall.get(&k).copied()
    }

    pub fn behavior(&self, name: &str) -> Option<&BehaviorMetrics> {
        self.per_behavior.iter().find(|b| b.behavior == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// `behavior<TAB>metric<TAB>k<TAB>value` rows preceded by `#` metadata lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dataset\t{}", self.metadata.dataset);
        let _ = writeln!(out, "# config_hash\t{}", self.metadata.config_hash);
        let _ = writeln!(out, "# seed\t{}", self.metadata.seed);
        if let Some(ts) = &self.metadata.timestamp {
            let _ = writeln!(out, "# timestamp\t{ts}");
        }
        out.push_str("behavior\tmetric\tk\tvalue\n");
        let rows = self.per_behavior.iter().map(|b| (b.behavior.as_str(), &b.metrics)).chain([("mean", &self.mean)]);
        for (name, m) in rows {
            for (&k, v) in &m.recall {
                let _ = writeln!(out, "{name}\trecall\t{k}\t{v}");
            }
            for (&k, v) in &m.ndcg {
                let _ = writeln!(out, "{name}\tndcg\t{k}\t{v}");
            }
        }
        out
    }

    /// Fixed-width table with one row per behavior and a closing mean row.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12}", "behavior");
        for k in &self.ks {
            let _ = write!(out, "{:>12}{:>12}", format!("Recall@{k}"), format!("NDCG@{k}"));
        }
        out.push('\n');
        let rows = self.per_behavior.iter().map(|b| (b.behavior.as_str(), &b.metrics)).chain([("Mean", &self.mean)]);
        for (name, m) in rows {
            let _ = write!(out, "{name:<12}");
            for k in &self.ks {
                let cell = |v: Option<&f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
                let _ = write!(out, "{:>12}{:>12}", cell(m.recall.get(k)), cell(m.ndcg.get(k)));
            }
            out.push('\n');
        }
        out
    }
}

/// Ranks every item outside the user's training items (all behaviors) and
/// averages Recall@K and NDCG@K per behavior over users with test items.
pub fn evaluate(
    emb: &PropagatedEmbeddings,
    train: &Dataset,
    test: &Dataset,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::InvalidCutoffs);
    }
    if emb.n_users() != train.n_users || emb.n_items() != train.n_items {
        return Err(EvalError::DimensionMismatch {
            emb_users: emb.n_users(),
            emb_items: emb.n_items(),
            data_users: train.n_users,
            data_items: train.n_items,
        });
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let max_k = *ks.last().expect("non-empty");

    let mask = train.user_items();
    let behaviors: Vec<&str> = test.behaviors().collect();
    let mut tests: Vec<Vec<HashSet<u32>>> = vec![vec![HashSet::new(); behaviors.len()]; test.n_users];
    for (b, log) in test.logs.iter().enumerate() {
        for &(u, i) in &log.pairs {
            tests[u as usize][b].insert(i);
        }
    }

    // per user, per behavior: (recall per k, ndcg per k)
    type UserRow = Vec<Option<(Vec<f64>, Vec<f64>)>>;
    let rows: Vec<UserRow> = (0..test.n_users)
        .into_par_iter()
        .map(|u| {
            if mask[u].is_empty() || tests[u].iter().all(HashSet::is_empty) {
                return vec![None; behaviors.len()];
            }
            let ranked = emb.top_k(u, max_k, &mask[u]);
            tests[u]
                .iter()
                .map(|t| {
                    if t.is_empty() {
                        return None;
                    }
                    let r = ks.iter().map(|&k| recall_at_k(&ranked, t, k).expect("non-empty")).collect();
                    let n = ks.iter().map(|&k| ndcg_at_k(&ranked, t, k).expect("non-empty")).collect();
                    Some((r, n))
                })
                .collect()
        })
        .collect();

    let mut per_behavior = Vec::new();
    let mut absent = Vec::new();
    for (b, &name) in behaviors.iter().enumerate() {
        let mut users = 0usize;
        let mut recall = vec![0.0; ks.len()];
        let mut ndcg = vec![0.0; ks.len()];
        for row in &rows {
            if let Some((r, n)) = &row[b] {
                users += 1;
                for j in 0..ks.len() {
                    recall[j] += r[j];
                    ndcg[j] += n[j];
                }
            }
        }
        if users == 0 {
            log::warn!("behavior `{name}` has no test users; excluded from the mean");
            absent.push(name.to_string());
            continue;
        }
        let avg = |v: Vec<f64>| ks.iter().copied().zip(v.into_iter().map(|x| x / users as f64)).collect();
        per_behavior.push(BehaviorMetrics {
            behavior: name.to_string(),
            users,
            metrics: MetricSet { recall: avg(recall), ndcg: avg(ndcg) },
        });
    }

    let mut mean = MetricSet::default();
    if !per_behavior.is_empty() {
        let n = per_behavior.len() as f64;
        for &k in &ks {
            mean.recall.insert(k, per_behavior.iter().map(|b| b.metrics.recall[&k]).sum::<f64>() / n);
            mean.ndcg.insert(k, per_behavior.iter().map(|b| b.metrics.ndcg[&k]).sum::<f64>() / n);
        }
    }
    Ok(EvalReport { ks, per_behavior, absent, mean, metadata: ReportMetadata::default() })
}
