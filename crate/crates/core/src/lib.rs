//! Robustness evaluation for visual SLAM under camera degradation.
//!
//! Load a sequence with [`dataset`], describe degradations in an experiment
//! config ([`config`]), write perturbed copies with [`pipeline`], run SLAM
//! systems through [`slam`] and [`evaluation`], and score them with
//! [`metrics`]. [`features`] inspects front-end tracking and [`boundary`]
//! bisects for the parameter value at which a system starts failing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod config;
pub mod dataset;
pub mod effects;
pub mod engine;
pub mod evaluation;
pub mod error;
pub mod features;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod raster;
pub mod report;
pub mod seed;
pub mod slam;
pub mod trajectory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/perturbations.md")]
    mod perturbations {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/boundary.md")]
    mod boundary {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
