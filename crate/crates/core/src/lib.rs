//! Cross-region taxi demand forecasting core.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (an allocator is required). Parsing of public
//! datasets, file formats and the command line live in the `demandgraph`
//! companion crate.
//!
//! The pipeline runs trip records through a hexagonal grid into a
//! cells x slots [`demand::DemandTensor`], turns that into per-slot
//! [`graph::RegionGraph`] samples, and trains a [`model::ModelParams`]
//! whose region-agnostic latent drives demand prediction in regions the
//! model has never seen.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
pub mod demand;
pub mod error;
pub mod eval;
pub mod geo;
pub mod graph;
pub mod grid;
pub mod math;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod synth;
pub mod time;
pub mod train;
pub mod trip;

pub use error::{Error, Result};
