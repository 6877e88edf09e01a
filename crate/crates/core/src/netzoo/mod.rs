//! Network variants for fingertip and palm regression.
//!
//! Every variant is a [`Graph`] over the layer primitives. Convolutions use
//! same padding and are followed by ReLU; pooling is non-overlapping 2×2; the
//! regression head is `FC(1024)-ReLU-FC(1024)-ReLU-FC(out)`.

mod arch;
mod checkpoint;
mod graph;

pub use arch::{build, ArchId, BuildOptions, Network, Stream};
pub use checkpoint::{Checkpoint, TrainMeta};
pub use graph::{Graph, GraphBuilder, Node, ParamId, Slot, SlotId, TraceRow};
