//! Minimal f64 neural-network toolkit: conv/linear kernels, a define-by-run
//! autodiff tape, layers, Adam, and checkpoint serialization. Deterministic
//! by construction: same seed, same bits.

pub mod adam;
pub mod layers;
pub mod ops;
pub mod serial;
pub mod tape;

pub use adam::Adam;
pub use layers::{Activation, ConvLayer, ConvSpec, ConvStack, LinearLayer, StackBinding};
pub use serial::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use tape::{Arr, Grads, Tape, Var};
