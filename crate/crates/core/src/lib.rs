//! Discrete operators, time steppers, resolvent solvers and diagnostics for
//! subsonic potential flow over a half plane coupled to a clamped-free beam
//! with inextensible (quasilinear) stiffness.
//!
//! The crate is `no_std` with `alloc`. Everything is expressed on plain
//! `f64` slices; the companion `flowbeam` crate carries file formats and
//! the command line.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod beam;
pub mod coupled;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod flow;
pub mod initial;
pub mod linalg;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
