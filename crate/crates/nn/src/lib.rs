//! Minimal differentiable substrate: a reverse-mode tape over a fixed op set,
//! dense and GRU layers, Gumbel-Softmax, Adam and finite-difference checks.
//!
//! All arithmetic is `f64` and single-threaded, so identical inputs produce
//! bit-identical forward and backward results.

pub mod checkpoint;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod gumbel;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{read_checkpoint, take_set, write_checkpoint};
pub use error::{NnError, Result};
pub use gradcheck::finite_diff_check;
pub use gumbel::{
    categorical_log_prob, gumbel_softmax, gumbel_softmax_sample, gumbel_softmax_with_noise,
    relaxed_log_density, sample_gumbel,
};
pub use layers::{gru_step, linear_forward, Activation, Binding, Dense, GruCell, GruState, Mlp};
pub use params::{adam_update, adam_update_with, soft_update, AdamConfig, AdamMoments, ParameterSet, SetId};
pub use tape::{Gradients, Tape, Var};
pub use tensor::TensorBuffer;
