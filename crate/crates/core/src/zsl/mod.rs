//! Zero-shot evaluation with a prototypical network over frozen features.

mod eval;
mod protonet;

pub use eval::{
    aggregate_local, evaluate_zsl, local_cells, local_means, pool_variant_eval, predict_from_scores, predict_zsl,
    AggregateMode, FeatureView, PoolEvalData, PoolVariant, ZslResult,
};
pub use protonet::{fit_protonet, squared_distances, ProtoConfig, ProtoHead, ProtoModel, Standardizer};
