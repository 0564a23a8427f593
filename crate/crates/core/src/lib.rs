//! Sparse MLP training with magnitude-attention dynamic pruning.
//!
//! Weights are pruned to a gradually increasing global sparsity. Every `F`
//! iterations the binary mask and a continuous magnitude attention are
//! recomputed; the attention scales kept weights in the forward pass and all
//! weights' updates in the backward pass, so pruned weights keep moving at a
//! reduced rate and can re-enter the network. After a chosen iteration the
//! structure freezes and only the surviving weights train.

pub mod data;
pub mod error;
pub mod experiment;
mod io;
pub mod model;
pub mod optim;
pub mod prune;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use io::write_atomic;
pub use tape::{Tape, Var};
pub use tensor::{Precision, Scalar, Tensor};
