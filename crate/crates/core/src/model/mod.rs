//! The U-Net: encoder blocks with max-pooling, decoder stages with
//! nearest-neighbour upsampling and skip concatenation, and a pointwise
//! two-channel softmax head.

mod arch;
pub mod checkpoint;
mod net;
pub mod verify;

pub use arch::ArchConfig;
pub use checkpoint::{load, load_expecting, save, Checkpoint};
pub use net::{
    Block, Composite, Decoder, ForwardCache, ModelGrads, ModelParams, TensorKind, TrainingMeta,
    NO_SPINDLE, SPINDLE,
};
