//! Network description, construction, forward/backward passes, the
//! architecture summary, and model files.

mod network;
mod serialize;
mod spec;
mod summary;

pub use network::{
    build_paper_network, ForwardOutput, Gradients, Layer, NamedLayer, Network, SampleCache,
    StepOutcome,
};
pub use serialize::{
    checkpoint_bytes, checkpoint_from_bytes, export_frozen, load_checkpoint, load_frozen,
    save_checkpoint, FileKind, FrozenModel, FORMAT_VERSION, MAGIC,
};
pub use spec::{ArchConfig, ConvBlock, LayerKind, LayerSpec, NetworkSpec};
pub use summary::{summarize, Summary, SummaryRow};
