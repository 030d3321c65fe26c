//! Neural localizer: portable weight archive, U-Net generator inference,
//! training-pair generation and map-to-table extraction.

pub mod archive;
pub mod dataset;
pub mod extract;
pub mod infer;

pub use archive::{load_weights, ArchiveError, Layer, LayerKind, WeightArchive};
pub use dataset::{
    export_dataset, make_pairs_from_localizations, make_pairs_simulated, mix_equal, DatasetError, DatasetManifest, PairSet,
    TrainingPair, UpsampleGrid,
};
pub use extract::extract_table;
pub use infer::{infer, infer_tiled, nn_localize_stack, nn_localize_stack_with_tile, InferError};
