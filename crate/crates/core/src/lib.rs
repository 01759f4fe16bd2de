//! Inference engine for CNNs evaluated over SIMD-packed, leveled slot
//! vectors.
//!
//! The crate is organised bottom-up:
//!
//! - [`simd`]: the slot-vector backend contract and a cleartext simulator
//!   that tracks multiplicative depth.
//! - [`packing`]: channel-major tensor layout, kernel vectors and masks.
//! - [`layers`]: convolution, padding, striding, pooling, dense and
//!   Chebyshev ReLU layers written against the backend.
//! - [`keyplan`]: rotation-key derivation, block residency planning and
//!   trace verification.
//! - [`model`]: model specs, weight loading, bootstrap placement, the
//!   simulated runtime and the plaintext reference oracle.

pub mod error;
pub mod keyplan;
pub mod layers;
pub mod model;
pub mod packing;
pub mod simd;

pub use error::{Error, Result};
