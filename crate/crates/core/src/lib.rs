//! Protocol engine and simulator for trust-aware sharing of undisclosed
//! vulnerabilities: rotating access tokens, MAC-bound tracing tokens, a
//! hash-chained continuous log, a self-destructing leak guard and a
//! beta-expectation trust model.

pub mod authority;
pub mod cli;
pub mod error;
pub mod guard;
pub mod ledger;
pub mod model;
pub mod plot;
pub mod sim;
pub mod token;
pub mod trust;

pub use error::{Error, Result};
