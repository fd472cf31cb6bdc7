use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::label::{EmotionLabel, NUM_CLASSES};
use crate::error::Error;
use crate::pixels::PixelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    /// Accepts the manifest tags as well as the FER2013 usage names.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" | "Training" => Ok(SplitTag::Train),
            "val" | "PublicTest" => Ok(SplitTag::Val),
            "test" | "PrivateTest" => Ok(SplitTag::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split tag `{other}`"
            ))),
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ferplus,
    Affectnet,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Ferplus => "ferplus",
            Source::Affectnet => "affectnet",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub pixels: PixelGrid,
    pub label: EmotionLabel,
    pub split: SplitTag,
    pub source: Source,
}

/// An ordered collection of records with cached per-class counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    records: Vec<ImageRecord>,
    class_counts: [usize; NUM_CLASSES],
}

impl DatasetSplit {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        let mut class_counts = [0; NUM_CLASSES];
        for r in &records {
            class_counts[r.label.index()] += 1;
        }
        Self {
            records,
            class_counts,
        }
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        self.class_counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = EmotionLabel> + '_ {
        self.records.iter().map(|r| r.label)
    }
}

impl FromIterator<ImageRecord> for DatasetSplit {
    fn from_iter<T: IntoIterator<Item = ImageRecord>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Train/validation/test triple.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSet {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

impl SplitSet {
    pub fn from_records(records: Vec<ImageRecord>) -> Self {
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for r in records {
            match r.split {
                SplitTag::Train => train.push(r),
                SplitTag::Val => val.push(r),
                SplitTag::Test => test.push(r),
            }
        }
        Self {
            train: DatasetSplit::new(train),
            val: DatasetSplit::new(val),
            test: DatasetSplit::new(test),
        }
    }

    pub fn get(&self, tag: SplitTag) -> &DatasetSplit {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}
