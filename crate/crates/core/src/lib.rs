//! Mission analysis for satellite-to-ground decoy-state BB84: pass geometry,
//! optical link budget, detection statistics, finite-key length, pass
//! optimisation and trusted-node key relay.

pub mod channel;
pub mod error;
pub mod finite_key;
pub mod link_budget;
pub mod monte_carlo;
pub mod optimizer;
pub mod orbit;
pub mod relay;

pub use error::{Error, Result};
