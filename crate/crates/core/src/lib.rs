//! Neural-network frame classification toolkit.
//!
//! Dense, convolutional and locally-untied feed-forward networks with
//! hand-written backpropagation; classical-momentum and Nesterov training
//! with dropout, early stopping and early realignment; prior-scaled scoring;
//! and coding-property analysis of hidden layers.

pub mod analysis;
pub mod data;
pub mod error;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
pub use network::{InitScheme, InputLayout, LayerSpec, LocalSpec, Mode, Network};
pub use numerics::{Rng, Tensor};
