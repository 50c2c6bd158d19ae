//! Two-player training for multi-label classification from partial labels.
//!
//! A differentiable classifier (the network player) and per-entry soft pseudo
//! labels (the pseudo-label player) alternately minimize their own losses
//! until neither side can improve unilaterally; a confidence-aware scheduler
//! weights each unobserved-label loss term by pseudo-label confidence and
//! training progress.
//!
//! Module map:
//! - [`numerics`] — stable cross-entropy and the latent-to-probability maps
//! - [`pseudo`] — the pseudo-label player: latent store, augmented loss, updates
//! - [`scheduler`] — the confidence-aware weight for unobserved loss terms
//! - [`classifier`] — linear / one-hidden-layer models with manual backprop
//! - [`losses`] — the network player's objective and the baseline loss catalog
//! - [`data`] — synthetic dataset generation, partial-label masking, file I/O
//! - [`trainer`] — the alternating training loop and its diagnostics
//! - [`evaluation`] — average precision, mAP, pseudo-label quality, trace export
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix `f64`, which is what the CLI and the test suite use.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod classifier;
pub mod data;
pub mod evaluation;
pub mod losses;
pub mod matrix;
pub mod numerics;
pub mod pseudo;
pub mod rng;
pub mod scheduler;
pub mod trainer;

mod error;

pub use error::{Error, Result};

/// Scalar type the library is generic over: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting an `f64` literal into the working scalar type.
#[inline]
pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 constant representable in scalar type")
}

/// Default concrete scalar used by the CLI and most tests.
pub type Scalar = f64;

pub type Mapping = numerics::MappingSpec<Scalar>;
pub type Lambda = pseudo::LambdaSchedule<Scalar>;
pub type Store = pseudo::PseudoLabelStore<Scalar>;
pub type Model = classifier::ClassifierModel<Scalar>;
pub type Dataset = data::PartialDataset<Scalar>;
pub type Config = trainer::TrainConfig<Scalar>;
pub type Trace = trainer::TraceRecord<Scalar>;
