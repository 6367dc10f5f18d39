//! Patch-size-1 spectral transformer ("AFNO-lite").
//!
//! `forward`: patch embedding plus positional encoding, `n_blocks` spectral
//! mixing blocks, final layer norm, linear head, un-patching. Each block is
//!
//! ```text
//! z = x + Re(IFFT2(shrink(W2 . act(W1 . FFT2(norm1(x)) + b1) + b2)))
//! y = z + MLP(norm2(z))
//! ```
//!
//! with `W1`, `W2` complex and block-diagonal over the embedding, shared by
//! all frequencies. `gradients` is a hand-written reverse pass over the same
//! graph.

mod checkpoint;
mod config;
mod layers;
mod model;
mod spectral;
mod state;

use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, AFN_MAGIC};
pub use config::{Activation, ModelConfig};
pub use layers::{gelu, softshrink};
pub use model::{afno_block, batch_loss, decode, forward, gradients, kink_pattern, patch_embed, spectral_mix};
pub use spectral::Fft2;
pub use state::{BlockParams, ModelState};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected} values, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite activation {}", match .block { Some(b) => format!("in block {b}"), None => "in output head".to_string() })]
    NonFinite { block: Option<usize> },
    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scalar training objective on one `(prediction, target)` pair.
pub trait Objective<T> {
    /// Loss value and its gradient with respect to the prediction.
    fn value_and_grad(&self, pred: &[T], target: &[T]) -> (T, Vec<T>);
}
