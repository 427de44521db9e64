//! Dense feedforward networks with hand-written differentiation.

mod adam;
mod checkpoint;
mod mlp;
mod params;
mod spec;

pub use adam::{adam_update, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_meta, save_checkpoint, sidecar_path,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use mlp::ForwardTrace;
pub use params::{LayerShape, ParamLayout, ParamVector};
pub use spec::{Activation, NetworkSpec};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter layout mismatch: expected {expected} values, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("metric requires at least one state")]
    EmptyStateSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
