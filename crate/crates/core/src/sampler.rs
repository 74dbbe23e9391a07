//! Training-triple sampling.
//!
//! A draw picks a stratum from a multinomial, a positive (user, item) pair
//! uniformly inside the stratum, and a negative item uniformly among the items
//! the user never touched under any behavior. Under the partial-order scheme a
//! stratum is a combination pool and its probability is proportional to
//! `rank^gamma * pool_size`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::PogGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("no stratum has positive probability")]
    NoMass,
    #[error("multi-task weights cover {got} behaviors, graph combinations need {need}")]
    WeightCount { got: usize, need: usize },
    #[error("invalid weight {0}")]
    InvalidWeight(f64),
    #[error("every user interacted with every item; no negatives available")]
    NoNegativeAvailable,
}

/// How strata and their probabilities are formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum SamplerMode {
    /// One stratum per combination rank, probability `rank^gamma * count`.
    #[default]
    PartialOrder,
    /// Every edge equally likely.
    Uniform,
    /// One stratum per behavior, probability `alpha_k * |R_k|`; weights are
    /// indexed by behavior index.
    MultiTask(Vec<f64>),
}

/// Categorical distribution over strata with a prefix-sum table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationDistribution {
    /// Stratum key: combination rank, or behavior index in multi-task mode.
    pub keys: Vec<u32>,
    pub counts: Vec<usize>,
    pub probs: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub gamma: f64,
}

impl CombinationDistribution {
    /// `p_h = rank_h^gamma * count_h / sum_j rank_j^gamma * count_j`, over
    /// ranks with a non-empty pool.
    pub fn from_counts(ranks: &[u32], counts: &[usize], gamma: f64) -> Result<Self, SamplerError> {
        let mass: Vec<f64> = ranks
            .iter()
            .zip(counts)
            .map(|(&r, &c)| if c == 0 { 0.0 } else { f64::from(r).powf(gamma) * c as f64 })
            .collect();
        Self::from_mass(ranks.to_vec(), counts.to_vec(), mass, gamma)
    }

    pub fn from_graph(g: &PogGraph, gamma: f64) -> Result<Self, SamplerError> {
        if g.n_edges() == 0 {
            return Err(SamplerError::EmptyGraph);
        }
        let ranks: Vec<u32> = g.pools().keys().copied().collect();
        let counts: Vec<usize> = g.pools().values().map(Vec::len).collect();
        Self::from_counts(&ranks, &counts, gamma)
    }

    fn from_mass(keys: Vec<u32>, counts: Vec<usize>, mass: Vec<f64>, gamma: f64) -> Result<Self, SamplerError> {
        if let Some(&bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(SamplerError::InvalidWeight(bad));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(SamplerError::NoMass);
        }
        let probs: Vec<f64> = mass.iter().map(|m| m / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // last positive-mass entry closes the table at exactly 1
        if let Some(last) = probs.iter().rposition(|&p| p > 0.0) {
            for c in &mut cumulative[last..] {
                *c = 1.0;
            }
        }
        Ok(CombinationDistribution { keys, counts, probs, cumulative, gamma })
    }

    pub fn prob_of(&self, key: u32) -> f64 {
        self.keys.iter().position(|&k| k == key).map_or(0.0, |p| self.probs[p])
    }

    /// Stratum position for a uniform draw `x` in `[0, 1)`.
    pub fn locate(&self, x: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.locate(rng.random::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainTriple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Draws training triples from one graph.
#[derive(Debug, Clone)]
pub struct Sampler<'g> {
    graph: &'g PogGraph,
    dist: CombinationDistribution,
    /// Edge indices of each stratum, aligned with `dist.keys`.
    strata: Vec<Vec<usize>>,
    excluded_users: Vec<u32>,
}

impl<'g> Sampler<'g> {
    pub fn new(graph: &'g PogGraph, mode: &SamplerMode, gamma: f64) -> Result<Self, SamplerError> {
        if graph.n_edges() == 0 {
            return Err(SamplerError::EmptyGraph);
        }
        let saturated: Vec<u32> = (0..graph.n_users())
            .filter(|&u| graph.user_degree(u) > 0 && graph.user_degree(u) >= graph.n_items())
            .map(|u| u as u32)
            .collect();
        for u in &saturated {
            log::warn!("user {u} interacted with every item and is excluded from sampling");
        }
        let usable = |k: &usize| saturated.binary_search(&graph.edges()[*k].user).is_err();

        let (keys, strata, mass): (Vec<u32>, Vec<Vec<usize>>, Vec<f64>) = match mode {
            SamplerMode::PartialOrder | SamplerMode::Uniform => {
                let gamma = if matches!(mode, SamplerMode::Uniform) { 0.0 } else { gamma };
                let mut keys = Vec::new();
                let mut strata = Vec::new();
                let mut mass = Vec::new();
                for (&rank, pool) in graph.pools() {
                    let pool: Vec<usize> = pool.iter().copied().filter(usable).collect();
                    mass.push(if pool.is_empty() { 0.0 } else { f64::from(rank).powf(gamma) * pool.len() as f64 });
                    keys.push(rank);
                    strata.push(pool);
                }
                (keys, strata, mass)
            }
            SamplerMode::MultiTask(weights) => {
                let need =
                    graph.edges().iter().map(|e| 64 - e.combination.0.leading_zeros() as usize).max().unwrap_or(0);
                if weights.len() < need {
                    return Err(SamplerError::WeightCount { got: weights.len(), need });
                }
                let mut strata = vec![Vec::new(); weights.len()];
                for (k, e) in graph.edges().iter().enumerate() {
                    if usable(&k) {
                        for b in e.combination.members() {
                            strata[b].push(k);
                        }
                    }
                }
                let mass = weights.iter().zip(&strata).map(|(&w, s)| w * s.len() as f64).collect();
                ((0..weights.len() as u32).collect(), strata, mass)
            }
        };
        if strata.iter().all(Vec::is_empty) {
            return Err(SamplerError::NoNegativeAvailable);
        }
        let counts = strata.iter().map(Vec::len).collect();
        let gamma = if matches!(mode, SamplerMode::PartialOrder) { gamma } else { 0.0 };
        let dist = CombinationDistribution::from_mass(keys, counts, mass, gamma)?;
        Ok(Sampler { graph, dist, strata, excluded_users: saturated })
    }

    pub fn distribution(&self) -> &CombinationDistribution {
        &self.dist
    }

    pub fn excluded_users(&self) -> &[u32] {
        &self.excluded_users
    }

    /// Uniform item outside the user's training items, found by ranking into
    /// the complement of the sorted positive list.
    pub fn negative<R: Rng + ?Sized>(&self, user: u32, rng: &mut R) -> u32 {
        let positives = self.graph.user_edges(user as usize);
        let free = self.graph.n_items() - positives.len();
        let mut j = rng.random_range(0..free) as u32;
        for e in positives {
            if e.item <= j {
                j += 1;
            } else {
                break;
            }
        }
        j
    }

    /// One triple together with the stratum position it came from.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, TrainTriple) {
        let h = self.dist.sample(rng);
        let stratum = &self.strata[h];
        let e = &self.graph.edges()[stratum[rng.random_range(0..stratum.len())]];
        let neg = self.negative(e.user, rng);
        debug_assert!(!self.graph.has_edge(e.user as usize, neg));
        (h, TrainTriple { user: e.user, pos: e.item, neg })
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<TrainTriple> {
        (0..batch_size).map(|_| self.draw(rng).1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::order::Combination;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(n_users: usize, n_items: usize, edges: &[(u32, u32, u32)]) -> PogGraph {
        let mut edges: Vec<Edge> = edges
            .iter()
            .map(|&(user, item, rank)| Edge { user, item, combination: Combination(rank as u64), rank, weight: 1.0 })
            .collect();
        edges.sort_by_key(|e| (e.user, e.item));
        PogGraph::from_edges(n_users, n_items, 0.0, edges).unwrap()
    }

    #[test]
    fn hand_evaluated_probabilities() {
        let d = CombinationDistribution::from_counts(&[1, 2], &[10, 5], 1.0).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);
        let d = CombinationDistribution::from_counts(&[1, 4, 7], &[6, 3, 1], 0.0).unwrap();
        assert_eq!(d.probs, vec![0.6, 0.3, 0.1]);
        let d = CombinationDistribution::from_counts(&[3], &[8], 1.4).unwrap();
        assert_eq!(d.probs, vec![1.0]);
        assert_eq!(*d.cumulative.last().unwrap(), 1.0);
    }

    #[test]
    fn empty_pools_get_zero_probability() {
        let d = CombinationDistribution::from_counts(&[1, 2, 3], &[4, 0, 4], 1.0).unwrap();
        assert_eq!(d.probs[1], 0.0);
        assert!(d.probs[0] > 0.0 && d.probs[2] > 0.0);
        for x in [0.0, 0.1, 0.2499, 0.25, 0.9999] {
            assert_ne!(d.locate(x), 1);
        }
        assert_eq!(CombinationDistribution::from_counts(&[1], &[0], 1.0), Err(SamplerError::NoMass));
    }

    #[test]
    fn empty_graph() {
        let g = PogGraph::from_edges(1, 1, 1.0, vec![]).unwrap();
        assert_eq!(CombinationDistribution::from_graph(&g, 1.0), Err(SamplerError::EmptyGraph));
        assert!(matches!(Sampler::new(&g, &SamplerMode::PartialOrder, 1.0), Err(SamplerError::EmptyGraph)));
    }

    #[test]
    fn forced_triple() {
        // user 0 touches every item except 7; (0,5) alone forms the rank-2 pool
        let mut edges: Vec<(u32, u32, u32)> = (0..8).filter(|&i| i != 7 && i != 5).map(|i| (0, i, 1)).collect();
        edges.push((0, 5, 2));
        let g = graph(1, 8, &edges);
        let mut counts = [0usize; 2];
        let s = Sampler::new(&g, &SamplerMode::PartialOrder, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (h, t) = s.draw(&mut rng);
            counts[h] += 1;
            assert_eq!(t.neg, 7);
            if h == 1 {
                assert_eq!((t.user, t.pos), (0, 5));
            }
        }
        assert!(counts[1] > 0);
    }

    #[test]
    fn single_pair_single_negative() {
        let g = graph(1, 2, &[(0, 0, 1)]);
        let s = Sampler::new(&g, &SamplerMode::PartialOrder, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.sample_batch(50, &mut rng).iter().all(|t| *t == TrainTriple { user: 0, pos: 0, neg: 1 }));
    }

    #[test]
    fn saturated_users_are_excluded() {
        let g = graph(2, 2, &[(0, 0, 1), (0, 1, 1), (1, 0, 2)]);
        let s = Sampler::new(&g, &SamplerMode::PartialOrder, 1.0).unwrap();
        assert_eq!(s.excluded_users(), &[0]);
        assert_eq!(s.distribution().probs, vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.sample_batch(20, &mut rng).iter().all(|t| t.user == 1 && t.neg == 1));

        let full = graph(1, 1, &[(0, 0, 1)]);
        assert!(matches!(Sampler::new(&full, &SamplerMode::PartialOrder, 1.0), Err(SamplerError::NoNegativeAvailable)));
    }

    #[test]
    fn seeded_batches_repeat() {
        let g = graph(3, 6, &[(0, 0, 1), (0, 1, 3), (1, 2, 1), (2, 3, 2), (2, 4, 3)]);
        let s = Sampler::new(&g, &SamplerMode::PartialOrder, 1.3).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            assert_eq!(s.sample_batch(16, &mut a), s.sample_batch(16, &mut b));
        }
    }

    #[test]
    fn uniform_mode_ignores_rank() {
        let g = graph(2, 6, &[(0, 0, 1), (0, 1, 3), (1, 2, 3), (1, 3, 3)]);
        let s = Sampler::new(&g, &SamplerMode::Uniform, 5.0).unwrap();
        assert_eq!(s.distribution().probs, vec![0.25, 0.75]);
    }

    #[test]
    fn multi_task_strata() {
        // combination bits double as behavior sets: 1={b0}, 3={b0,b1}, 2={b1}
        let g = graph(2, 6, &[(0, 0, 1), (0, 1, 3), (1, 2, 2)]);
        let s = Sampler::new(&g, &SamplerMode::MultiTask(vec![1.0, 3.0]), 0.0).unwrap();
        // |R_0| = 2, |R_1| = 2
        assert_eq!(s.distribution().probs, vec![0.25, 0.75]);
        assert!(matches!(
            Sampler::new(&g, &SamplerMode::MultiTask(vec![1.0]), 0.0),
            Err(SamplerError::WeightCount { .. })
        ));
    }

    #[test]
    fn gamma_raises_top_pool() {
        let counts = [40, 25, 10, 3];
        let ranks = [1, 2, 5, 7];
        let mut last = 0.0;
        for step in 0..20 {
            let gamma = step as f64 * 0.2;
            let p = CombinationDistribution::from_counts(&ranks, &counts, gamma).unwrap().probs[3];
            assert!(p > last);
            last = p;
        }
    }

    proptest::proptest! {
        #[test]
        fn negatives_never_collide(
            edges in proptest::collection::btree_set((0u32..4, 0u32..10), 1..30),
            seed in 0u64..500,
        ) {
            let list: Vec<(u32, u32, u32)> = edges.iter().map(|&(u, i)| (u, i, 1 + (u + i) % 3)).collect();
            let g = graph(4, 10, &list);
            if let Ok(s) = Sampler::new(&g, &SamplerMode::PartialOrder, 1.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for t in s.sample_batch(64, &mut rng) {
                    proptest::prop_assert!(g.has_edge(t.user as usize, t.pos));
                    proptest::prop_assert!(!g.has_edge(t.user as usize, t.neg));
                    proptest::prop_assert!((t.neg as usize) < g.n_items());
                }
            }
        }
    }
}
