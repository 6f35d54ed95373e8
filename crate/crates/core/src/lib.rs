//! Multi-graph convolution collaborative filtering.
//!
//! Learns user and item embeddings from implicit feedback by combining a
//! two-sided graph convolution over the interaction graph, a one-hop
//! convolution over user/user and item/item similarity graphs, and a skip
//! projection of each node's own embedding. Includes a BPR matrix
//! factorisation baseline, a deterministic training loop with early
//! stopping, and Recall/NDCG evaluation.
//!
//! ```
//! use mgccf::evaluation::top_k;
//!
//! assert_eq!(top_k(&[0.2, 0.7, 0.5], &[], 2), vec![1, 2]);
//! ```
//!
//! The guide under `book/` walks through each stage.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graphs;
pub mod model;
pub mod numerics;
pub mod run;
pub mod trainer;

mod binio;

pub use error::{Error, Result};

// Book chapters compiled as doctests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
