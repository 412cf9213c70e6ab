//! Repeater-chain simulator comparing sequential (swap-and-wait) and
//! simultaneous (SWAP-ASAP) entanglement swapping over a fixed link layer.
//!
//! The physics layer is generic over the scalar type; everything above it
//! runs in `f64`, and the aliases below pin the generic types to that.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffer;
pub mod error;
pub mod link;
pub mod network;
pub mod physics;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};

/// Physical constants in double precision.
pub type Constants = physics::PhysicsConstants<f64>;
/// Werner parameter in double precision.
pub type Werner = physics::WernerParam<f64>;
/// Distillation outcome in double precision.
pub type Distillation = physics::Distilled<f64>;
