//! Key-value memory network captioning engine.
//!
//! Every input frame becomes a memory slot holding a key (visual summary) and a
//! value (semantic embedding). At each decoding step the keys are addressed to
//! produce an attention distribution, the values are read with those weights,
//! and an LSTM decoder consumes the read to emit the next token. Three key
//! addressing modes are provided: decoder-state only, previous key read, and a
//! recurrent Memory-LSTM over the previous key read.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. File formats,
//! checkpoints and the command-line surface live in the `kvmn` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod search;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, NodeId, Tensor};
