//! Link-level MIMO-OFDM simulation for channels whose delay spread exceeds
//! the cyclic prefix, with linear, exhaustive and unfolded-network equalizers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod equalizers;
pub mod error;
pub mod harness;
pub mod interference;
pub mod linalg;
pub mod modem;
pub mod receiver;
pub mod unfolded;

pub use error::{Error, Result};
