//! Multi-behavior collaborative filtering on a single weighted graph.
//!
//! Behaviors (click, favor, buy, ...) are arranged in levels of increasing
//! importance. Every user–item pair becomes one edge whose weight grows with
//! the rank of the behavior combination observed on it; a light graph
//! convolution learns one embedding per user and item, trained with a
//! ranking loss that samples high-rank pairs more often.
//!
//! ```
//! use pogcn::order::{BehaviorOrder, CombinationRank};
//!
//! let order = BehaviorOrder::new(&[vec!["click"], vec!["favor"], vec!["buy"]])?;
//! let ranks = CombinationRank::over_all_subsets(&order)?;
//! assert_eq!(ranks.rank_of_names(&["favor", "buy"])?, Some(6));
//! # Ok::<(), pogcn::order::OrderError>(())
//! ```
//!
//! The guide in `book/` walks through each stage; its code blocks run as
//! doc-tests of this crate.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod order;
pub mod sampler;
pub mod synthetic;
pub mod train;

pub use error::Error;

// The book chapters, checked by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/behavior-order.md")]
    mod behavior_order {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
