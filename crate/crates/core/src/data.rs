//! Per-behavior interaction logs and min-interaction filtering.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("{behavior}: pair ({user}, {item}) outside index space {n_users}x{n_items}")]
    IndexOutOfRange { behavior: String, user: u32, item: u32, n_users: usize, n_items: usize },
    #[error("behavior `{0}` has more than one log")]
    DuplicateBehaviorLog(String),
    #[error("no interactions survive filtering at min_count {0}")]
    AllFiltered(usize),
    #[error("{0}: timestamps length does not match pairs")]
    TimestampLength(String),
}

/// Interactions of one behavior. Duplicate pairs are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub behavior: String,
    pub pairs: Vec<(u32, u32)>,
    /// One timestamp per pair when the source provides them.
    pub timestamps: Option<Vec<i64>>,
}

impl InteractionLog {
    pub fn new(behavior: impl Into<String>, pairs: Vec<(u32, u32)>) -> Self {
        InteractionLog { behavior: behavior.into(), pairs, timestamps: None }
    }

    pub fn with_timestamps(behavior: impl Into<String>, pairs: Vec<(u32, u32)>, timestamps: Vec<i64>) -> Self {
        InteractionLog { behavior: behavior.into(), pairs, timestamps: Some(timestamps) }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Distinct pairs in ascending order.
    pub fn distinct_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = self.pairs.clone();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// Logs of all behaviors over one user/item index space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    pub logs: Vec<InteractionLog>,
}

impl Dataset {
    pub fn new(n_users: usize, n_items: usize, logs: Vec<InteractionLog>) -> Result<Self, DataError> {
        let d = Dataset { n_users, n_items, logs };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for log in &self.logs {
            if !seen.insert(log.behavior.as_str()) {
                return Err(DataError::DuplicateBehaviorLog(log.behavior.clone()));
            }
            if let Some(ts) = &log.timestamps {
                if ts.len() != log.pairs.len() {
                    return Err(DataError::TimestampLength(log.behavior.clone()));
                }
            }
            for &(u, i) in &log.pairs {
                if u as usize >= self.n_users || i as usize >= self.n_items {
                    return Err(DataError::IndexOutOfRange {
                        behavior: log.behavior.clone(),
                        user: u,
                        item: i,
                        n_users: self.n_users,
                        n_items: self.n_items,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn log(&self, behavior: &str) -> Option<&InteractionLog> {
        self.logs.iter().find(|l| l.behavior == behavior)
    }

    pub fn behaviors(&self) -> impl Iterator<Item = &str> {
        self.logs.iter().map(|l| l.behavior.as_str())
    }

    /// Number of distinct (behavior, user, item) interactions.
    pub fn interaction_count(&self) -> usize {
        self.logs.iter().map(|l| l.distinct_pairs().len()).sum()
    }

    /// Sorted, deduplicated items each user touched under any behavior.
    pub fn user_items(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.n_users];
        for log in &self.logs {
            for &(u, i) in &log.pairs {
                out[u as usize].push(i);
            }
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }
}

/// Old-to-new index tables produced by [`filter_min_interactions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Remap {
    pub users: Vec<Option<u32>>,
    pub items: Vec<Option<u32>>,
}

impl Remap {
    pub fn identity(n_users: usize, n_items: usize) -> Self {
        Remap { users: (0..n_users as u32).map(Some).collect(), items: (0..n_items as u32).map(Some).collect() }
    }

    /// Surviving old indices, in new-index order.
    pub fn kept_users(&self) -> Vec<u32> {
        kept(&self.users)
    }

    pub fn kept_items(&self) -> Vec<u32> {
        kept(&self.items)
    }
}

fn kept(table: &[Option<u32>]) -> Vec<u32> {
    let mut out = vec![0; table.iter().flatten().count()];
    for (old, new) in table.iter().enumerate() {
        if let Some(new) = new {
            out[*new as usize] = old as u32;
        }
    }
    out
}

/// Removes users and items with fewer than `min_count` distinct interactions
/// (summed over behaviors), repeating until no count drops below the
/// threshold, then compacts indices.
pub fn filter_min_interactions(data: &Dataset, min_count: usize) -> Result<(Dataset, Remap), DataError> {
    if min_count == 0 {
        return Ok((data.clone(), Remap::identity(data.n_users, data.n_items)));
    }
    let distinct: Vec<Vec<(u32, u32)>> = data.logs.iter().map(InteractionLog::distinct_pairs).collect();
    let mut user_alive = vec![true; data.n_users];
    let mut item_alive = vec![true; data.n_items];
    loop {
        let mut user_count = vec![0usize; data.n_users];
        let mut item_count = vec![0usize; data.n_items];
        for pairs in &distinct {
            for &(u, i) in pairs {
                if user_alive[u as usize] && item_alive[i as usize] {
                    user_count[u as usize] += 1;
                    item_count[i as usize] += 1;
                }
            }
        }
        let mut changed = false;
        for (alive, &count) in user_alive.iter_mut().zip(&user_count).chain(item_alive.iter_mut().zip(&item_count)) {
            if *alive && count < min_count {
                *alive = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let compact = |alive: &[bool]| -> Vec<Option<u32>> {
        let mut next = 0u32;
        alive
            .iter()
            .map(|&a| {
                a.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let remap = Remap { users: compact(&user_alive), items: compact(&item_alive) };
    let n_users = remap.users.iter().flatten().count();
    let n_items = remap.items.iter().flatten().count();

    let logs: Vec<InteractionLog> = data
        .logs
        .iter()
        .map(|log| {
            let mut pairs = Vec::new();
            let mut stamps = log.timestamps.as_ref().map(|_| Vec::new());
            for (k, &(u, i)) in log.pairs.iter().enumerate() {
                if let (Some(nu), Some(ni)) = (remap.users[u as usize], remap.items[i as usize]) {
                    pairs.push((nu, ni));
                    if let (Some(out), Some(ts)) = (stamps.as_mut(), log.timestamps.as_ref()) {
                        out.push(ts[k]);
                    }
                }
            }
            InteractionLog { behavior: log.behavior.clone(), pairs, timestamps: stamps }
        })
        .collect();
    if logs.iter().all(InteractionLog::is_empty) {
        return Err(DataError::AllFiltered(min_count));
    }
    Ok((Dataset { n_users, n_items, logs }, remap))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Removes one offending node per pass until nothing changes.
    fn naive_filter(data: &Dataset, min_count: usize) -> (Vec<bool>, Vec<bool>) {
        let mut users = vec![true; data.n_users];
        let mut items = vec![true; data.n_items];
        let pairs: HashSet<(usize, u32, u32)> =
            data.logs.iter().enumerate().flat_map(|(b, l)| l.pairs.iter().map(move |&(u, i)| (b, u, i))).collect();
        'outer: loop {
            for u in 0..data.n_users {
                let c = pairs.iter().filter(|&&(_, pu, pi)| pu as usize == u && items[pi as usize]).count();
                if users[u] && c < min_count {
                    users[u] = false;
                    continue 'outer;
                }
            }
            for i in 0..data.n_items {
                let c = pairs.iter().filter(|&&(_, pu, pi)| pi as usize == i && users[pu as usize]).count();
                if items[i] && c < min_count {
                    items[i] = false;
                    continue 'outer;
                }
            }
            return (users, items);
        }
    }

    fn five_users() -> Dataset {
        let click = vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 2), (3, 3), (4, 0), (4, 4), (1, 4)];
        let buy = vec![(0, 0), (1, 1), (2, 3), (4, 4)];
        Dataset::new(5, 5, vec![InteractionLog::new("click", click), InteractionLog::new("buy", buy)]).unwrap()
    }

    #[test]
    fn zero_threshold_is_identity() {
        let d = five_users();
        let (out, remap) = filter_min_interactions(&d, 0).unwrap();
        assert_eq!(out, d);
        assert_eq!(remap, Remap::identity(5, 5));
    }

    #[test]
    fn sparse_user_removed_and_items_rechecked() {
        // users 0..11 click items 0..11; user 11 clicks 0, 1, 2 and 11; item 11
        // also has users 0..9 (exclusive), so it holds exactly 10 until user 11 leaves
        let mut click = vec![];
        for u in 0..11 {
            for i in 0..11 {
                click.push((u, i));
            }
        }
        for i in [0, 1, 2, 11] {
            click.push((11, i));
        }
        for u in 0..9 {
            click.push((u, 11));
        }
        let d = Dataset::new(12, 12, vec![InteractionLog::new("click", click)]).unwrap();
        let (out, remap) = filter_min_interactions(&d, 10).unwrap();
        assert_eq!(remap.users[11], None);
        assert_eq!(remap.items[11], None);
        assert!(remap.users[..11].iter().all(Option::is_some));
        assert_eq!((out.n_users, out.n_items), (11, 11));
        assert_eq!(out.interaction_count(), 121);
    }

    #[test]
    fn fixpoint_matches_naive_filter() {
        let d = five_users();
        let (users, items) = naive_filter(&d, 2);
        let (_, remap) = filter_min_interactions(&d, 2).unwrap();
        assert_eq!(remap.users.iter().map(Option::is_some).collect::<Vec<_>>(), users);
        assert_eq!(remap.items.iter().map(Option::is_some).collect::<Vec<_>>(), items);
    }

    #[test]
    fn everything_filtered() {
        let d = five_users();
        assert_eq!(filter_min_interactions(&d, 100), Err(DataError::AllFiltered(100)));
    }

    #[test]
    fn validation_errors() {
        let bad = Dataset::new(1, 1, vec![InteractionLog::new("click", vec![(0, 1)])]);
        assert!(matches!(bad, Err(DataError::IndexOutOfRange { .. })));
        let dup = Dataset::new(1, 1, vec![InteractionLog::new("a", vec![]), InteractionLog::new("a", vec![])]);
        assert_eq!(dup, Err(DataError::DuplicateBehaviorLog("a".into())));
    }

    #[test]
    fn remap_kept_lists() {
        let r = Remap { users: vec![None, Some(0), Some(1)], items: vec![Some(0)] };
        assert_eq!(r.kept_users(), vec![1, 2]);
        assert_eq!(r.kept_items(), vec![0]);
    }

    proptest::proptest! {
        #[test]
        fn filter_agrees_with_naive(
            pairs in proptest::collection::vec((0u32..6, 0u32..6, 0usize..2), 0..40),
            min_count in 0usize..4,
        ) {
            let mut logs = vec![InteractionLog::new("a", vec![]), InteractionLog::new("b", vec![])];
            for (u, i, b) in pairs {
                logs[b].pairs.push((u, i));
            }
            let d = Dataset::new(6, 6, logs).unwrap();
            let (users, items) = naive_filter(&d, min_count);
            match filter_min_interactions(&d, min_count) {
                Ok((_, remap)) => {
                    if min_count > 0 {
                        proptest::prop_assert_eq!(remap.users.iter().map(Option::is_some).collect::<Vec<_>>(), users);
                        proptest::prop_assert_eq!(remap.items.iter().map(Option::is_some).collect::<Vec<_>>(), items);
                    }
                }
                Err(DataError::AllFiltered(_)) => {
                    // no pair may have both endpoints alive
                    let alive = d.logs.iter().flat_map(|l| &l.pairs)
                        .any(|&(u, i)| users[u as usize] && items[i as usize]);
                    proptest::prop_assert!(!alive);
                }
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
