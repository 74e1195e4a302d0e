//! Experiment configuration, the append-only results store, grids, reports
//! and figures.

mod config;
mod figures;
mod grid;
mod pipeline;
mod records;
mod report;

pub use config::{data_root, EncoderConfig, ExperimentConfig, DATA_ROOT_ENV, SYNTHETIC};
pub use figures::{bar_figure, scatter_figure};
pub use grid::{ExperimentGrid, GridCell};
pub use pipeline::{
    compositionality, encode_splits, eval_inputs, load_dataset, local_variants, locality, pool_comparison, random_encoder,
    split_part_maps, train_variant, zsl_global, EncodedSplits, RecordBuilder,
};
pub use records::{run_id, ResultsStore, RunRecord, CODE_VERSION};
pub use report::{
    cell_mean, local_metric, local_table, locality_pairs, model_name, parts_table, relative_improvements, tre_table,
    zsl_table, METRIC_PARTS_F1, METRIC_TRE_RATIO, METRIC_ZSL,
};
