//! Beta(2-α, α) coalescent simulation, order-`r` branch lengths and their
//! stable fluctuation limits.

pub mod cli;
pub mod error;
pub mod experiment;
pub mod lengths;
pub mod rates;
pub mod rng;
pub mod simulator;
pub mod stable;
pub mod stats;

pub use error::{Error, Result};
pub use rates::{AlphaModel, RateTable};
pub use rng::SeedRoot;
