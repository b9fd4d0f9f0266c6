//! Graph policy gradients: decentralized swarm control policies built from
//! graph convolutions, trained with REINFORCE on a shared team reward, and
//! deployed unchanged on larger swarms.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod graph;
pub mod plot;
pub mod policy;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
