//! Dense networks, reverse-mode differentiation and optimization.

pub mod checkpoint;
mod grad;
pub mod net;
pub mod optim;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use grad::grad_params;
pub use net::{Activation, DenseNet, NetVars, TapeTrace, Trace};
pub use optim::{Adam, LrSchedule};
pub use tape::{Grads, Tape, Var};
