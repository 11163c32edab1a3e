//! Recombined-fingerprint P2P distribution simulator with segment-wise
//! anti-collusion codes and encrypted-domain traitor tracing.

pub mod attacks;
pub mod bits;
pub mod code;
pub mod config;
pub mod crypto;
pub mod error;
pub mod experiment;
pub mod fingerprint;
pub mod simnet;
pub mod tracing;

pub use error::{Error, Result};
