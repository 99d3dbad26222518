//! Differentially private training toolkit for candlestick-pattern
//! classification.
//!
//! The pipeline runs end to end:
//!
//! 1. [`market`] synthesizes rule-based OHLC windows for eight reversal
//!    patterns (or ingests real bars from CSV).
//! 2. [`gaf`] encodes each window as a stack of Gramian Angular Field planes.
//! 3. [`nn`] trains a two-convolution CNN on those tensors, exposing exact
//!    per-example gradients.
//! 4. [`dpsgd`] and [`pate`] are the two private training routes, and
//!    [`accountant`] turns their mechanism invocations into `(ε, δ)`
//!    guarantees through Rényi DP.
//! 5. [`experiment`] wires everything into reproducible sweeps and reports.
//!
//! Data-parallel loops go through [`par::Exec`]; with the default `parallel`
//! feature they run on rayon, otherwise sequentially. Results are identical
//! either way.

pub mod accountant;
pub mod dpsgd;
pub mod error;
pub mod experiment;
pub mod gaf;
pub mod market;
pub mod nn;
pub mod par;
pub mod pate;
pub mod rng;

pub use error::{Error, Result};
