//! One-shot architecture search over weight-sharing supernets.
//!
//! Stage I jointly trains the shared weights of a maximal network and a
//! product-of-categoricals distribution over sub-architectures, alternating
//! between exploiting the learned distribution and exploring uniformly under
//! an entropy-driven Bernoulli gate. Stage II searches the trained supernet
//! for the best architecture under a cost constraint without fine-tuning:
//! every candidate is scored with weights sliced directly out of the
//! supernet.

pub mod cost;
pub mod distribution;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod search;
pub mod space;
pub mod supernet;
pub mod trainer;

pub use error::{Error, Result};
