//! Embedding tables, weighted graph propagation and scoring.
//!
//! Propagation is linear and parameter free. One layer sends every user the
//! weighted sum of its items' embeddings and vice versa, each edge scaled by
//! `w_ui / (sqrt(deg_u) * sqrt(deg_i))` where `deg` is the weighted degree.
//! The output is the mean of layers `0..=L`. The normalized operator is
//! symmetric, so the same routine maps output gradients back to the layer-0
//! tables.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::PogGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: model is {model_users}x{model_items}, graph is {graph_users}x{graph_items}")]
    DimensionMismatch { model_users: usize, model_items: usize, graph_users: usize, graph_items: usize },
    #[error("propagation produced a non-finite value")]
    NonFiniteValue,
    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
}

/// Dense row-major matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Matrix { rows, dim, data: vec![0.0; rows * dim] }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "matrix data length");
        Matrix { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Layer-0 user and item embeddings plus propagation depth.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub users: Matrix,
    pub items: Matrix,
    pub layers: usize,
}

impl EmbeddingModel {
    /// Draws every entry from `Normal(0, sigma^2)`.
    pub fn init(
        n_users: usize,
        n_items: usize,
        dim: usize,
        layers: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if n_users == 0 || n_items == 0 || dim == 0 {
            return Err(ModelError::InvalidDimension(format!("users={n_users} items={n_items} dim={dim}")));
        }
        let normal =
            Normal::new(0.0, sigma).map_err(|_| ModelError::InvalidDimension(format!("init sigma {sigma}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |rows: usize| Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| normal.sample(&mut rng)).collect());
        let users = draw(n_users);
        let items = draw(n_items);
        Ok(EmbeddingModel { users, items, layers })
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn propagate(&self, g: &PogGraph) -> Result<PropagatedEmbeddings, ModelError> {
        let p = Propagator::new(g, self.layers);
        p.check(self)?;
        let (users, items) = p.apply(&self.users, &self.items);
        if !users.is_finite() || !items.is_finite() {
            return Err(ModelError::NonFiniteValue);
        }
        Ok(PropagatedEmbeddings { users, items })
    }
}

/// Final (layer-averaged) user and item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedEmbeddings {
    pub users: Matrix,
    pub items: Matrix,
}

impl PropagatedEmbeddings {
    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn score(&self, user: usize, item: usize) -> Result<f64, ModelError> {
        if user >= self.n_users() {
            return Err(ModelError::IndexOutOfRange { index: user, size: self.n_users() });
        }
        if item >= self.n_items() {
            return Err(ModelError::IndexOutOfRange { index: item, size: self.n_items() });
        }
        Ok(dot(self.users.row(user), self.items.row(item)))
    }

    /// Scores of `user` against every item.
    pub fn scores(&self, user: usize) -> Vec<f64> {
        let u = self.users.row(user);
        (0..self.n_items()).map(|i| dot(u, self.items.row(i))).collect()
    }

    /// Top `k` unmasked items for `user`; `mask` must be sorted ascending.
    pub fn top_k(&self, user: usize, k: usize, mask: &[u32]) -> Vec<u32> {
        top_k(&self.scores(user), k, mask)
    }
}

/// Highest-scoring `k` items outside `mask` (sorted ascending), ordered by
/// descending score with ties going to the lower index.
pub fn top_k(scores: &[f64], k: usize, mask: &[u32]) -> Vec<u32> {
    let mut candidates: Vec<u32> = (0..scores.len() as u32).filter(|i| mask.binary_search(i).is_err()).collect();
    let by_rank = |a: &u32, b: &u32| -> Ordering { scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b)) };
    if k == 0 {
        return Vec::new();
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_rank);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(by_rank);
    candidates
}

/// Precomputed normalized edge coefficients for one graph.
#[derive(Debug, Clone)]
pub struct Propagator<'g> {
    graph: &'g PogGraph,
    coef: Vec<f64>,
    layers: usize,
}

impl<'g> Propagator<'g> {
    pub fn new(graph: &'g PogGraph, layers: usize) -> Self {
        let coef = graph
            .edges()
            .iter()
            .map(|e| {
                let du = graph.user_wdeg()[e.user as usize];
                let di = graph.item_wdeg()[e.item as usize];
                if e.weight == 0.0 {
                    0.0
                } else {
                    e.weight / (du.sqrt() * di.sqrt())
                }
            })
            .collect();
        Propagator { graph, coef, layers }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Normalized coefficient of each edge, in edge order.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn check(&self, model: &EmbeddingModel) -> Result<(), ModelError> {
        if model.n_users() != self.graph.n_users() || model.n_items() != self.graph.n_items() {
            return Err(ModelError::DimensionMismatch {
                model_users: model.n_users(),
                model_items: model.n_items(),
                graph_users: self.graph.n_users(),
                graph_items: self.graph.n_items(),
            });
        }
        Ok(())
    }

    /// One layer of message passing. Each output row is accumulated from its
    /// own incident edges in canonical order, so the result does not depend on
    /// thread scheduling.
    pub fn step(&self, users: &Matrix, items: &Matrix) -> (Matrix, Matrix) {
        let dim = users.dim();
        let g = self.graph;
        let mut next_users = Matrix::zeros(users.rows(), dim);
        next_users.as_mut_slice().par_chunks_mut(dim.max(1)).enumerate().for_each(|(u, out)| {
            for k in g.user_edge_range(u) {
                let c = self.coef[k];
                for (o, x) in out.iter_mut().zip(items.row(g.edges()[k].item as usize)) {
                    *o += c * x;
                }
            }
        });
        let mut next_items = Matrix::zeros(items.rows(), dim);
        next_items.as_mut_slice().par_chunks_mut(dim.max(1)).enumerate().for_each(|(i, out)| {
            for &k in g.item_edge_indices(i) {
                let c = self.coef[k];
                let u = g.edges()[k].user as usize;
                for (o, x) in out.iter_mut().zip(users.row(u)) {
                    *o += c * x;
                }
            }
        });
        (next_users, next_items)
    }

    /// Mean of layers `0..=L` starting from the given tables.
    pub fn apply(&self, users: &Matrix, items: &Matrix) -> (Matrix, Matrix) {
        let mut sum_u = users.clone();
        let mut sum_i = items.clone();
        let mut cur_u = users.clone();
        let mut cur_i = items.clone();
        for _ in 0..self.layers {
            let (nu, ni) = self.step(&cur_u, &cur_i);
            sum_u.add_assign(&nu);
            sum_i.add_assign(&ni);
            cur_u = nu;
            cur_i = ni;
        }
        let inv = 1.0 / (self.layers as f64 + 1.0);
        sum_u.scale(inv);
        sum_i.scale(inv);
        (sum_u, sum_i)
    }

    /// Same result as [`Propagator::apply`], computed by multiplying the stacked
    /// `(M + N)`-row embedding matrix with the sparse symmetric operator
    /// `D^-1/2 A D^-1/2` assembled from the weighted adjacency `A`.
    pub fn apply_matrix_form(&self, users: &Matrix, items: &Matrix) -> (Matrix, Matrix) {
        let m = users.rows();
        let n = items.rows();
        let dim = users.dim();
        let adjacency = SparseMatrix::stacked_adjacency(self.graph);
        let degree: Vec<f64> = adjacency.row_sums();
        let normalized = adjacency.scale_symmetric(&degree);

        let mut stacked = Matrix::zeros(m + n, dim);
        stacked.as_mut_slice()[..m * dim].copy_from_slice(users.as_slice());
        stacked.as_mut_slice()[m * dim..].copy_from_slice(items.as_slice());
        let mut sum = stacked.clone();
        let mut cur = stacked;
        for _ in 0..self.layers {
            cur = normalized.mul_dense(&cur);
            sum.add_assign(&cur);
        }
        sum.scale(1.0 / (self.layers as f64 + 1.0));
        let (u, i) = sum.as_slice().split_at(m * dim);
        (Matrix::from_vec(m, dim, u.to_vec()), Matrix::from_vec(n, dim, i.to_vec()))
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
struct SparseMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// `[[0, R], [R^T, 0]]` over users `0..M` followed by items `M..M+N`.
    fn stacked_adjacency(g: &PogGraph) -> Self {
        let m = g.n_users();
        let n = m + g.n_items();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * g.n_edges());
        for e in g.edges() {
            triplets.push((e.user as usize, m + e.item as usize, e.weight));
            triplets.push((m + e.item as usize, e.user as usize, e.weight));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; n + 1];
        for t in &triplets {
            offsets[t.0 + 1] += 1;
        }
        for r in 0..n {
            offsets[r + 1] += offsets[r];
        }
        SparseMatrix {
            n,
            offsets,
            cols: triplets.iter().map(|t| t.1).collect(),
            vals: triplets.iter().map(|t| t.2).collect(),
        }
    }

    fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.vals[self.offsets[r]..self.offsets[r + 1]].iter().sum()).collect()
    }

    fn scale_symmetric(&self, degree: &[f64]) -> Self {
        let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        let mut vals = self.vals.clone();
        for r in 0..self.n {
            for k in self.offsets[r]..self.offsets[r + 1] {
                vals[k] *= inv_sqrt[r] * inv_sqrt[self.cols[k]];
            }
        }
        SparseMatrix { vals, ..self.clone() }
    }

    fn mul_dense(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n, x.dim());
        for r in 0..self.n {
            for k in self.offsets[r]..self.offsets[r + 1] {
                let v = self.vals[k];
                let src = x.row(self.cols[k]).to_vec();
                for (o, s) in out.row_mut(r).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }
}
