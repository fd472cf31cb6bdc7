//! Corpus ingestion, sampling and the synthetic desk-scale corpus.

mod ferplus;
mod label;
mod manifest;
mod record;
mod sampling;
mod synthetic;

pub use ferplus::{load_ferplus, resolve_votes, FerPlusData, VoteOutcome, FERPLUS_SIDE};
pub use label::{EmotionLabel, NUM_CLASSES};
pub use manifest::{
    export_png_tree, load_manifest, read_manifest, write_manifest, ManifestEntry, ManifestLoad,
    MissingPolicy,
};
pub use record::{DatasetSplit, ImageRecord, Source, SplitSet, SplitTag};
pub use sampling::{downsample_keep, downsample_per_class, join_training_sets};
pub use synthetic::{generate_synthetic, glyph_templates, SyntheticParams};
