//! Koopman spectral analysis of neural-network training.
//!
//! Training is treated as a discrete dynamical system on weight space. The
//! crate trains small networks while logging snapshots ([`nn`]), extracts
//! Koopman eigenvalues and modes with DMD ([`dmd`]), diagnoses convergence
//! ([`monitor`]), prunes from the mode reconstruction ([`pruning`]), derives
//! multiscale model depth from signal spectra ([`scales`], [`hsvr`]) and
//! trains with negative-Sobolev losses ([`sobolev`]).

pub mod datasets;
pub mod dmd;
pub mod error;
pub mod hsvr;
pub mod monitor;
pub mod nn;
pub mod numerics;
pub mod pruning;
pub mod scales;
pub mod sobolev;

pub use error::{Error, Result};
