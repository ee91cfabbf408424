//! Reverse-mode automatic differentiation over dense tensors.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod store;
pub mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use optim::Sgd;
pub use store::{ParameterStore, Tensor};
pub use tape::{Gradients, Tape, Var};
