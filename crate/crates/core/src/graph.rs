//! Behavior-combination graph and the rank-weighted partial order graph.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::order::{BehaviorOrder, Combination, CombinationRank, OrderError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error("combination {{{0}}} has no rank")]
    UnrankedCombination(String),
    #[error("tau must be finite and non-negative, got {0}")]
    InvalidTau(f64),
    #[error("edges are not sorted by (user, item) or contain duplicates")]
    UnsortedEdges,
    #[error("edge ({user}, {item}) outside index space {n_users}x{n_items}")]
    EdgeOutOfRange { user: u32, item: u32, n_users: usize, n_items: usize },
}

/// Union of all behaviors per (user, item) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationGraph {
    pub n_users: usize,
    pub n_items: usize,
    pub edges: BTreeMap<(u32, u32), Combination>,
}

impl CombinationGraph {
    /// Merges per-behavior logs; repeated events collapse to one membership.
    pub fn from_dataset(order: &BehaviorOrder, data: &Dataset) -> Result<Self, GraphError> {
        data.validate()?;
        let mut edges: BTreeMap<(u32, u32), Combination> = BTreeMap::new();
        for log in &data.logs {
            let b = order.index_of(&log.behavior)?;
            for &pair in &log.pairs {
                let c = edges.entry(pair).or_default();
                *c = c.with(b);
            }
        }
        Ok(CombinationGraph { n_users: data.n_users, n_items: data.n_items, edges })
    }

    /// Number of edges per distinct combination.
    pub fn combination_counts(&self) -> BTreeMap<Combination, usize> {
        let mut counts = BTreeMap::new();
        for &c in self.edges.values() {
            *counts.entry(c).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub user: u32,
    pub item: u32,
    pub combination: Combination,
    pub rank: u32,
    pub weight: f64,
}

/// Weighted bipartite user-item graph. Edges are sorted by (user, item).
#[derive(Debug, Clone, PartialEq)]
pub struct PogGraph {
    n_users: usize,
    n_items: usize,
    tau: f64,
    edges: Vec<Edge>,
    user_wdeg: Vec<f64>,
    item_wdeg: Vec<f64>,
    /// `user_offsets[u]..user_offsets[u + 1]` indexes the edges of user `u`.
    user_offsets: Vec<usize>,
    /// Edge indices grouped by item, users ascending within an item.
    item_offsets: Vec<usize>,
    item_edges: Vec<usize>,
    pools: BTreeMap<u32, Vec<usize>>,
}

impl PogGraph {
    /// Weights each combination edge by `rank^tau`.
    pub fn build(cg: &CombinationGraph, ranks: &CombinationRank, tau: f64) -> Result<Self, GraphError> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(GraphError::InvalidTau(tau));
        }
        let mut edges = Vec::with_capacity(cg.edges.len());
        for (&(user, item), &combination) in &cg.edges {
            let rank = ranks
                .rank(combination)
                .ok_or_else(|| GraphError::UnrankedCombination(ranks.order().display(combination)))?;
            edges.push(Edge { user, item, combination, rank, weight: edge_weight(rank, tau) });
        }
        Self::from_edges(cg.n_users, cg.n_items, tau, edges)
    }

    /// Assembles a graph from edges already sorted by (user, item).
    pub fn from_edges(n_users: usize, n_items: usize, tau: f64, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(GraphError::InvalidTau(tau));
        }
        for e in &edges {
            if e.user as usize >= n_users || e.item as usize >= n_items {
                return Err(GraphError::EdgeOutOfRange { user: e.user, item: e.item, n_users, n_items });
            }
        }
        if edges.windows(2).any(|w| (w[0].user, w[0].item) >= (w[1].user, w[1].item)) {
            return Err(GraphError::UnsortedEdges);
        }

        let mut user_wdeg = vec![0.0; n_users];
        let mut item_wdeg = vec![0.0; n_items];
        let mut user_offsets = vec![0usize; n_users + 1];
        let mut item_offsets = vec![0usize; n_items + 1];
        let mut pools: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (k, e) in edges.iter().enumerate() {
            user_wdeg[e.user as usize] += e.weight;
            item_wdeg[e.item as usize] += e.weight;
            user_offsets[e.user as usize + 1] += 1;
            item_offsets[e.item as usize + 1] += 1;
            pools.entry(e.rank).or_default().push(k);
        }
        for k in 0..n_users {
            user_offsets[k + 1] += user_offsets[k];
        }
        for k in 0..n_items {
            item_offsets[k + 1] += item_offsets[k];
        }
        let mut fill = item_offsets.clone();
        let mut item_edges = vec![0usize; edges.len()];
        for (k, e) in edges.iter().enumerate() {
            let slot = &mut fill[e.item as usize];
            item_edges[*slot] = k;
            *slot += 1;
        }

        Ok(PogGraph {
            n_users,
            n_items,
            tau,
            edges,
            user_wdeg,
            item_wdeg,
            user_offsets,
            item_offsets,
            item_edges,
            pools,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn user_wdeg(&self) -> &[f64] {
        &self.user_wdeg
    }

    pub fn item_wdeg(&self) -> &[f64] {
        &self.item_wdeg
    }

    /// Edges incident to `user`, items ascending.
    pub fn user_edges(&self, user: usize) -> &[Edge] {
        &self.edges[self.user_edge_range(user)]
    }

    /// Positions in [`PogGraph::edges`] of the edges incident to `user`.
    pub fn user_edge_range(&self, user: usize) -> std::ops::Range<usize> {
        self.user_offsets[user]..self.user_offsets[user + 1]
    }

    /// Indices into [`PogGraph::edges`] of the edges incident to `item`.
    pub fn item_edge_indices(&self, item: usize) -> &[usize] {
        &self.item_edges[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn has_edge(&self, user: usize, item: u32) -> bool {
        self.user_edges(user).binary_search_by_key(&item, |e| e.item).is_ok()
    }

    /// Edge indices keyed by combination rank.
    pub fn pools(&self) -> &BTreeMap<u32, Vec<usize>> {
        &self.pools
    }

    /// Positive (user, item) pairs of the pool at `rank`.
    pub fn pool_pairs(&self, rank: u32) -> Vec<(u32, u32)> {
        self.pools
            .get(&rank)
            .map(|ix| ix.iter().map(|&k| (self.edges[k].user, self.edges[k].item)).collect())
            .unwrap_or_default()
    }
}

/// `rank^tau`, with `tau == 0` giving exactly 1.
pub fn edge_weight(rank: u32, tau: f64) -> f64 {
    if tau == 0.0 {
        1.0
    } else {
        f64::from(rank).powf(tau)
    }
}
