//! Neural machine translation with syntax-aware encoders.
//!
//! The crate implements an attention-based GRU encoder-decoder and three
//! source-side variants that read a linearized constituency parse alongside
//! the words: a parallel label RNN, a hierarchical label-to-word RNN, and a
//! mixed encoder over an interleaved label/word sequence. Everything runs on
//! a small dense `f64` autodiff engine in [`tensor`]; no GPU or BLAS.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod toy;
pub mod train;
pub mod tree;

pub use error::{Error, Result};

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::main_entry()
}
