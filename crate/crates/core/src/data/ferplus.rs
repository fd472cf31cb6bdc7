//! FER+ ingestion: the FER2013 pixel CSV paired row-by-row with the FER+
//! vote CSV.
//!
//! Pixel CSV columns: `emotion,pixels,Usage` (header row required). The
//! `emotion` column is ignored, `pixels` holds 2304 space-separated
//! grayscale values and `Usage` is one of `Training`, `PublicTest`,
//! `PrivateTest`.
//!
//! Vote CSV columns: `Usage,Image name` followed by ten vote counts. When
//! the header names the vote columns (as the upstream `fer2013new.csv`
//! does: `neutral,happiness,surprise,sadness,anger,disgust,fear,contempt,
//! unknown,NF`) they are matched by name. Otherwise the default order is
//! the eight emotions alphabetically, then `unknown`, then `NF`.

use std::path::Path;

use super::label::{EmotionLabel, NUM_CLASSES};
use super::record::{ImageRecord, Source, SplitSet, SplitTag};
use crate::error::{Error, Result};
use crate::pixels::PixelGrid;

pub const FERPLUS_SIDE: usize = 48;
const VOTE_COLUMNS: usize = NUM_CLASSES + 2;

#[derive(Debug, Clone, Default)]
pub struct FerPlusData {
    pub splits: SplitSet,
    /// Rows whose plurality fell on unknown / non-face.
    pub dropped: usize,
    /// Rows where two or more emotions shared the top vote.
    pub ties: usize,
}

impl FerPlusData {
    pub fn emitted(&self) -> usize {
        self.splits.train.len() + self.splits.val.len() + self.splits.test.len()
    }
}

/// What a vote row resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteOutcome {
    Label { label: EmotionLabel, tie: bool },
    Dropped,
}

/// Majority vote over the emotion columns. Rows whose best non-emotion
/// count (unknown / NF) reaches the best emotion count are dropped; ties
/// among emotions go to the lowest label index.
pub fn resolve_votes(emotions: &[u32; NUM_CLASSES], unknown: u32, non_face: u32) -> VoteOutcome {
    let best = *emotions.iter().max().expect("non-empty");
    if best == 0 || unknown.max(non_face) >= best {
        return VoteOutcome::Dropped;
    }
    let first = emotions
        .iter()
        .position(|&v| v == best)
        .expect("max exists");
    let tie = emotions.iter().filter(|&&v| v == best).count() > 1;
    VoteOutcome::Label {
        label: EmotionLabel::ALL[first],
        tie,
    }
}

/// Maps each of the ten vote columns to a slot: 0..8 emotions, 8 unknown, 9 NF.
fn vote_slots(header: &csv::StringRecord) -> [usize; VOTE_COLUMNS] {
    let default: [usize; VOTE_COLUMNS] = std::array::from_fn(|i| i);
    if header.len() < 2 + VOTE_COLUMNS {
        return default;
    }
    let mut slots = [usize::MAX; VOTE_COLUMNS];
    for (i, name) in header.iter().skip(2).take(VOTE_COLUMNS).enumerate() {
        let name = name.trim().to_ascii_lowercase();
        slots[i] = match name.as_str() {
            "unknown" => NUM_CLASSES,
            "nf" | "non-face" | "nonface" => NUM_CLASSES + 1,
            other => match other.parse::<EmotionLabel>() {
                Ok(l) => l.index(),
                Err(_) => return default,
            },
        };
    }
    let mut seen = slots;
    seen.sort_unstable();
    if seen != default {
        return default;
    }
    slots
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn parse_pixels(path: &Path, line: usize, text: &str) -> Result<PixelGrid> {
    let values = text
        .split_ascii_whitespace()
        .map(|t| t.parse::<u8>())
        .collect::<std::result::Result<Vec<u8>, _>>()
        .map_err(|e| malformed(path, line, format!("bad pixel value: {e}")))?;
    if values.len() != FERPLUS_SIDE * FERPLUS_SIDE {
        return Err(malformed(
            path,
            line,
            format!(
                "expected {} pixel values, found {}",
                FERPLUS_SIDE * FERPLUS_SIDE,
                values.len()
            ),
        ));
    }
    PixelGrid::new(FERPLUS_SIDE, FERPLUS_SIDE, 1, values)
}

/// Loads the FER+ corpus. Line numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn load_ferplus(pixel_csv: &Path, label_csv: &Path) -> Result<FerPlusData> {
    let mut pixels = reader(pixel_csv)?;
    let mut votes = reader(label_csv)?;
    let slots = vote_slots(votes.headers()?);

    let mut out = FerPlusData::default();
    let mut records = Vec::new();
    let mut pixel_rows = pixels.records();
    let mut vote_rows = votes.records();
    let mut line = 1;
    loop {
        line += 1;
        let (p, v) = match (pixel_rows.next(), vote_rows.next()) {
            (None, None) => break,
            (Some(_), None) => {
                return Err(malformed(
                    label_csv,
                    line,
                    "vote file has fewer rows than pixel file",
                ))
            }
            (None, Some(_)) => {
                return Err(malformed(
                    pixel_csv,
                    line,
                    "pixel file has fewer rows than vote file",
                ))
            }
            (Some(p), Some(v)) => (p?, v?),
        };

        if p.len() < 3 {
            return Err(malformed(pixel_csv, line, "expected emotion,pixels,Usage"));
        }
        let split: SplitTag = p[2]
            .parse()
            .map_err(|_| malformed(pixel_csv, line, format!("unknown usage `{}`", &p[2])))?;
        let grid = parse_pixels(pixel_csv, line, &p[1])?;

        if v.len() < 2 + VOTE_COLUMNS {
            return Err(malformed(
                label_csv,
                line,
                format!("expected {} vote columns", VOTE_COLUMNS),
            ));
        }
        let mut counts = [0u32; VOTE_COLUMNS];
        for (i, field) in v.iter().skip(2).take(VOTE_COLUMNS).enumerate() {
            counts[slots[i]] = field
                .trim()
                .parse()
                .map_err(|_| malformed(label_csv, line, format!("bad vote count `{field}`")))?;
        }
        let emotions: [u32; NUM_CLASSES] = counts[..NUM_CLASSES].try_into().expect("8 slots");
        match resolve_votes(&emotions, counts[NUM_CLASSES], counts[NUM_CLASSES + 1]) {
            VoteOutcome::Dropped => out.dropped += 1,
            VoteOutcome::Label { label, tie } => {
                out.ties += usize::from(tie);
                records.push(ImageRecord {
                    pixels: grid,
                    label,
                    split,
                    source: Source::Ferplus,
                });
            }
        }
    }
    out.splits = SplitSet::from_records(records);
    Ok(out)
}
