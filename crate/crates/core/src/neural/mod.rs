//! Small dense numerical core: row-major matrices, dense layers,
//! activations, the GRU cell with its exact backward pass, Adam,
//! initialization, finite-difference checking and a checkpoint container.
//!
//! Everything is `f64` and single-threaded per call so that results are
//! bit-reproducible.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod init;
pub mod layers;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use gru::{gru_backward, gru_forward, CandidateInput, GruCache, GruParams};
pub use init::{glorot_uniform, init_weights};
pub use layers::{dense_backward, dense_forward, relu, relu_backward, sigmoid, tanh, DenseParams};
pub use tensor::{Matrix, NamedTensor, Parameters};
