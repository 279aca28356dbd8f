//! Simulation and fluid-model analysis of redundancy-`d` systems in which
//! every server runs processor sharing and replicas are cancelled as soon as
//! the first one completes.

pub mod dist;
pub mod engine;
pub mod experiments;
pub mod fluid;
pub mod output;
pub mod parse;
pub mod stability;
pub mod error;
pub mod stats;
pub mod virtual_queues;

pub use error::{Error, Result};
