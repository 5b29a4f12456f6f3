//! Clinical preprocessing, stratified splits, synthetic bags and file formats.

mod bag;
mod clinical;
mod manifest;
mod split;
mod synth;

pub use bag::{read_bag, write_bag, FeatureBag, BAG_VERSION};
pub use clinical::{
    default_indicators, encode_mutation, minmax_normalize, normalize_row, Indicator, IndicatorKind, MinMax,
};
pub use manifest::{CaseEntry, DatasetManifest, GeneratorEcho, SplitData, MANIFEST_FILE};
pub use split::{split_sizes, stratified_split, Split, SplitTable, MIN_CLASS_SIZE};
pub use synth::{generate_synthetic, write_dataset, GenConfig, FACTOR_A, FACTOR_B};
