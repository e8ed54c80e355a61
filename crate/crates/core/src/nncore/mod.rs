//! Feedforward encoder/projector machinery: explicit forward and backward
//! passes, optimizers, schedules, and the EMA teacher update.

mod checkpoint;
mod mlp;
mod model;
mod optim;
mod schedule;

pub use checkpoint::{CheckpointFile, NamedArray};
pub use mlp::{Activation, Dense, ForwardCache, Gradients, Layer, LayerSpec, Mlp};
pub use model::{ema_update, BranchMode, ModelPair, Network, NetworkCache, NetworkOutput};
pub use optim::{OptimizerKind, OptimizerState};
pub use schedule::Schedule;
