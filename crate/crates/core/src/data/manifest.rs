//! Path/label/split manifests (`relpath,label,split`, header row) over a
//! PNG or JPEG image tree.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::label::EmotionLabel;
use super::record::{DatasetSplit, ImageRecord, Source, SplitTag};
use crate::error::{Error, Result};
use crate::pixels::PixelGrid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub relpath: String,
    pub label: i64,
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Fail on the first unreadable image.
    #[default]
    Strict,
    /// Skip unreadable images and list them in the report.
    Skip,
}

#[derive(Debug, Clone, Default)]
pub struct ManifestLoad {
    pub split: DatasetSplit,
    pub skipped: Vec<(PathBuf, String)>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut entries = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestEntry>().enumerate() {
        let entry = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    if entries.is_empty() {
        w.write_record(["relpath", "label", "split"])?;
    }
    for e in entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn decode(path: &Path) -> Result<PixelGrid> {
    if !path.is_file() {
        return Err(Error::MissingImage(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    PixelGrid::from_dynamic_image(&img)
}

/// Loads every image listed in the manifest. Decoding runs in parallel;
/// record order always follows manifest order.
pub fn load_manifest(
    manifest: &Path,
    image_root: &Path,
    source: Source,
    policy: MissingPolicy,
) -> Result<ManifestLoad> {
    let entries = read_manifest(manifest)?;
    let mut parsed = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let label = EmotionLabel::try_from(e.label)?;
        let split: SplitTag = e.split.parse().map_err(|_| Error::MalformedRow {
            path: manifest.to_path_buf(),
            line: i + 2,
            message: format!("unknown split `{}`", e.split),
        })?;
        parsed.push((image_root.join(&e.relpath), label, split));
    }

    let decoded: Vec<_> = parsed.par_iter().map(|(path, _, _)| decode(path)).collect();

    let mut out = ManifestLoad::default();
    let mut records = Vec::with_capacity(parsed.len());
    for ((path, label, split), pixels) in parsed.into_iter().zip(decoded) {
        match pixels {
            Ok(pixels) => records.push(ImageRecord {
                pixels,
                label,
                split,
                source,
            }),
            Err(e) if policy == MissingPolicy::Skip => out.skipped.push((path, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    out.split = DatasetSplit::new(records);
    Ok(out)
}

/// Writes records as PNGs under `root/prefix/<split>/<label>/NNNNNN.png` and
/// returns the matching manifest entries (paths relative to `root`).
pub fn export_png_tree(
    records: &[ImageRecord],
    root: &Path,
    prefix: &str,
) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = records
        .iter()
        .enumerate()
        .map(|(i, r)| ManifestEntry {
            relpath: format!("{prefix}/{}/{}/{i:06}.png", r.split, r.label),
            label: r.label.index() as i64,
            split: r.split.to_string(),
        })
        .collect();
    records
        .par_iter()
        .zip(entries.par_iter())
        .try_for_each(|(r, e)| -> Result<()> {
            let path = root.join(&e.relpath);
            let parent = path.parent().expect("relpath has parents");
            std::fs::create_dir_all(parent).map_err(|err| Error::io(parent, err))?;
            r.pixels
                .to_dynamic_image()
                .save_with_format(&path, image::ImageFormat::Png)
                .map_err(|err| Error::ImageEncode(format!("{}: {err}", path.display())))
        })?;
    Ok(entries)
}
