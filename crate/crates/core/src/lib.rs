pub mod converter;
pub mod error;
pub mod link;
pub mod photonics;
pub mod rng;
pub mod spin;
pub mod stats;
pub mod tradespace;

pub use error::{Error, Result};
