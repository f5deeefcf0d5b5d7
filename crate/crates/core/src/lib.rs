//! Stability analysis of switched linear differential systems given as
//! banks of polynomial kernel representations with gluing conditions.
//!
//! The crate builds minimal state maps and realizations for each mode,
//! reduces gluing conditions to re-initialisation maps, and searches for
//! multiple quadratic Lyapunov functions through linear matrix
//! inequalities or through positive-realness arguments for two-mode
//! systems with nested state spaces. Simulation by exact matrix
//! exponentials audits the resulting certificates.

pub mod error;
pub mod config;
pub mod linalg;
pub mod mlf;
pub mod posreal;
pub mod model;
pub mod polymat;
pub mod qdf;
pub mod sdp;
pub mod sim;
pub mod statespace;

pub use error::{Error, Result};
