//! Raw data ingestion, curation, potency labeling and stratified splitting.

mod activity;
mod curation;
mod descriptors;
mod labels;
mod split;

pub use activity::{parse_activity_csv, pic50_from_potency, ActivityRecord, PotencyKind, PotencyUnit};
pub use curation::{
    resolve_duplicates, Compound, CurationAction, CurationEntry, CurationOptions, CurationReport, DedupKey,
};
pub use descriptors::{parse_descriptor_csv, DescriptorTable};
pub use labels::{
    assign_class, binarize, multiclass_labels, BinaryLabels, LabeledDataset, PotencyClass, BLOCKER, NON_BLOCKER,
};
pub use split::{stratified_kfold, stratified_kfold_labels, stratified_split, stratified_split_indices, KFolds};
