//! Core of a secret-shared inference engine for linear-layer-heavy models.
//!
//! Everything in this crate is pure computation over `alloc`: fixed-point
//! ring tensors, additive (n-party) and masked (three-party) sharing, a
//! trusted-dealer offline phase, the online protocols (Beaver matmul, masked
//! three-party matmul, probabilistic truncation), low-rank weight
//! factorization, execution planning, event scheduling, and a deterministic
//! discrete-event network simulator.
//!
//! IO lives in the companion `lrmpc` crate. The `std` feature only adds an
//! in-process channel transport so that party runtimes can be driven from
//! threads.
//!
//! ## Modules
//!
//! * [`ring`]: ring `Z_{2^l}` tensors, fixed-point encoding, matmul, im2col.
//! * [`oracle`]: double-precision reference forward pass.
//! * [`sharing`]: additive and masked sharing, seeded shared randomness.
//! * [`dealer`]: offline material and offline cost accounting.
//! * [`protocols`]: online protocols executed by one party.
//! * [`lowrank`]: SVD factorization, rank selection, multiplication counts.
//! * [`plan`], [`schedule`], [`sim`], [`runtime`]: the engine.
//! * [`net`] and [`wire`]: transport abstraction and frame format.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x < y)` is how NaN gets rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dealer;
pub mod error;
pub mod lowrank;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod plan;
pub mod prf;
pub mod protocols;
pub mod ring;
pub mod runtime;
pub mod schedule;
pub mod sharing;
pub mod sim;
pub mod wire;

#[cfg(any(test, feature = "std"))]
pub mod channel;

pub use error::{Error, Result};
pub use ring::{FixedPointConfig, RealTensor, Ring, RingTensor};
pub use sharing::{AdditiveShare, PartyId, SeedSet, Share, TrioShare};
