//! Tensors, the differentiation tape, optimizer, RNG streams, and
//! checkpoint I/O shared by every model in the crate.

pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{forward_backward, grad_check, GradReport, FD_STEP};
pub use params::{AdamConfig, ParamEntry, ParamSet};
pub use rng::Rng;
pub use tape::{Tape, Var, NORM_FLOOR};
pub use tensor::{gemm, Tensor};
