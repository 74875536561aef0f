//! Generic (category-free) image segmentation driven by per-pixel embedding
//! fields.
//!
//! The pipeline has two stages. Seed regions are grown from a distance
//! transform of the boundary map and merged with a learned edge classifier;
//! every pixel then gets a posterior over the seeds from a Gaussian
//! embedding model and a geodesic boundary-crossing cost, and a fully
//! connected CRF smooths the result.

pub mod bench;
pub mod crf;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geodesic;
pub mod grid;
pub mod io;
pub mod merge;
pub mod pipeline;
pub mod pnm;
pub mod rep;
pub mod seeds;
pub mod synth;
pub mod tensor;
pub mod unary;

pub use error::{Error, Result};
pub use tensor::{embedding_from_colors, ColorImage, EmbeddingField, LabelMap, ScalarField};

// The guide's snippets run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/seeds.md")]
    mod seeds {}
    #[doc = include_str!("../../../book/src/unaries.md")]
    mod unaries {}
    #[doc = include_str!("../../../book/src/crf.md")]
    mod crf {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
