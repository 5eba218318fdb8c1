//! Deep echo state Q-network (DEQN) agents and a dynamic spectrum sharing
//! simulator to train them in.
//!
//! The crate is layered bottom-up:
//!
//! * [`channel`] synthesizes time-correlated link gains for the network geometry.
//! * [`phy`] holds the SINR, energy-detector and CQI arithmetic.
//! * [`env`] is the multi-user sense/transmit environment with warning signals.
//! * [`esn`] is the stacked reservoir with a trainable linear readout.
//! * [`agent`] is the double-Q training loop with hidden-state-caching replay.
//! * [`baselines`] are non-recurrent comparison policies.
//! * [`toy`] holds small reference environments and the value-iteration oracle.
//! * [`harness`] runs experiments and writes metrics.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Per-channel and per-user loops index several parallel vectors at once.
#![allow(clippy::needless_range_loop)]
// Policies hold their RNG inline; there are only a handful per run.
#![allow(clippy::large_enum_variant)]

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod env;
pub mod error;
pub mod esn;
pub mod harness;
pub mod phy;
pub mod seed;
pub mod toy;

pub use error::{Error, Result};
