//! Sector classification laboratory for unerupted maxillary canines.
//!
//! The crate is split along the lines of the workflow it supports:
//!
//! - [`geometry`] builds sector boundaries from incisor landmarks and assigns
//!   a canine point to the 5-, 4- or 3-sector systems.
//! - [`agreement`] computes Cohen's and Fleiss' kappa, confidence intervals,
//!   between-group z-tests and the four agreement tables of a rating study.
//! - [`metrics`] evaluates multiclass predictions from a confusion matrix.
//! - [`distill`] trains a multimodal teacher and an image-only student by
//!   knowledge distillation on synthetic, geometry-driven data.
//! - [`study`] runs the two-phase rating protocol with an append-only log.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature disabled every path runs sequentially and produces identical
//! output.

pub mod agreement;
pub mod distill;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod rng;
pub mod study;

pub use exec::Execution;
pub use geometry::{LabelSpace, SectorLabel};
