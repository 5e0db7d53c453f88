//! Measurements over trained networks: activation-pattern census,
//! generated-feature accuracy, final accuracy summaries, forgetting
//! comparison, and feature export.

mod aps;
mod export;
mod summary;

pub use aps::{
    count_aps_dataset, count_aps_features, count_aps_generator, generated_feature_accuracy,
    APCensus, ActivationPattern, GeneratorCensusConfig, PatternSet,
};
pub use export::{
    encoder_feature_set, export_feature_set, generated_feature_set, merge_feature_sets,
};
pub use summary::{final_summary, forgetting_report, ForgettingRow, Summary};
