//! Convolutional encoders producing a global vector and a local feature map.

mod checkpoint;
mod geometry;
mod network;
mod spec;

pub use checkpoint::{
    check_zfs, checkpoint_bytes, load_checkpoint, load_checkpoint_bytes, read_meta, save_checkpoint, CheckpointMeta,
    Provenance, SEED_INIT,
};
pub use geometry::{receptive_field, FeatureGeometry};
pub use network::{
    batch_tensor, Encoder, EncoderOutput, FeatureBundle, FeatureSource, FrozenEncoder, ENCODE_BATCH,
};
pub use spec::{ConvSpec, EncoderSpec, Family, PoolSpec, Tap};
