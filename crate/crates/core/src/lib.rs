//! Normalizing flows with Student-t, Laplace and Gaussian base distributions.
//!
//! Start with [`FlowModel`] and [`ModelSpec`], train with
//! [`trainer::train`], and look at [`robust`] for why the base matters. The
//! guide in `book/` covers the same ground with runnable examples.

pub mod base;
pub mod codec;
pub mod data;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod rng;
pub mod robust;
pub mod special;
pub mod svg;
pub mod trainer;

pub use base::{BaseDistribution, BaseKind};
pub use data::Dataset;
pub use error::{Error, Result};
pub use flow::{FlowModel, Layer, ModelSpec, Shape, Tape};
pub use rng::RngState;

// The guide's snippets run as doc-tests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/base-distributions.md")]
    mod base_distributions {}
    #[doc = include_str!("../../../book/src/robustness.md")]
    mod robustness {}
    #[doc = include_str!("../../../book/src/flows.md")]
    mod flows {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
