//! Accuracy, confusion matrices and the results table.

use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{argmax, forward_one, Mode, ModelState, Preprocessing};
use crate::tensor::Tensor;
use crate::transforms::{build_pipeline, OcclusionMode, Pipeline};

/// Which part of the face a model saw in training or sees at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceMode {
    FullFaces,
    LowerHalf,
}

impl FaceMode {
    pub fn label(self) -> &'static str {
        match self {
            FaceMode::FullFaces => "full faces",
            FaceMode::LowerHalf => "lower-half faces",
        }
    }

    pub fn from_occlusion(o: &OcclusionMode) -> Self {
        if o.is_occluded() {
            FaceMode::LowerHalf
        } else {
            FaceMode::FullFaces
        }
    }
}

impl fmt::Display for FaceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub type Confusion = [[usize; NUM_CLASSES]; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub train_mode: FaceMode,
    pub test_mode: FaceMode,
    pub dataset: String,
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Confusion,
    pub n: usize,
}

impl EvalReport {
    pub fn from_predictions(
        model: &str,
        train_mode: FaceMode,
        test_mode: FaceMode,
        dataset: &str,
        truth: &[usize],
        predicted: &[usize],
    ) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptySplit);
        }
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
        Ok(Self {
            model: model.to_string(),
            train_mode,
            test_mode,
            dataset: dataset.to_string(),
            accuracy: correct as f64 / truth.len() as f64,
            confusion,
            n: truth.len(),
        })
    }

    /// Per-class recall averaged over classes that occur.
    pub fn macro_recall(&self) -> f64 {
        let recalls: Vec<f64> = self
            .confusion
            .iter()
            .enumerate()
            .filter_map(|(i, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }

    pub fn write_confusion_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["true\\pred".to_string()];
        header.extend(
            crate::data::EmotionLabel::ALL
                .iter()
                .map(|l| l.name().to_string()),
        );
        w.write_record(&header)?;
        for (i, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![crate::data::EmotionLabel::ALL[i].name().to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs every record through the deterministic pipeline and normalisation.
pub fn prepare_inputs(
    split: &DatasetSplit,
    pipeline: &Pipeline,
    prep: &Preprocessing,
) -> Vec<Tensor> {
    split
        .records()
        .par_iter()
        .map(|r| prep.apply(&pipeline.apply_eval(&r.pixels)))
        .collect()
}

/// Argmax class per prepared input, evaluation mode.
pub fn predict(state: &ModelState, inputs: &[Tensor]) -> Vec<usize> {
    inputs
        .par_iter()
        .map(|x| {
            argmax(
                &forward_one(state, x, Mode::Eval)
                    .expect("inputs prepared for this model")
                    .probs,
            )
        })
        .collect()
}

const PREDICT_CHUNK: usize = 256;

/// Channel means of a split after the deterministic pipeline, computed
/// without holding all prepared inputs at once. Sums are reduced in record
/// order, so the result does not depend on the thread count.
pub fn fit_preprocessing(split: &DatasetSplit, pipeline: &Pipeline, scale: f64) -> Preprocessing {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for chunk in split.records().chunks(PREDICT_CHUNK) {
        let partial: Vec<([f64; 3], usize)> = chunk
            .par_iter()
            .map(|r| {
                let t = pipeline.apply_eval(&r.pixels);
                let plane = t.shape()[1] * t.shape()[2];
                let mut s = [0.0; 3];
                for (c, v) in s.iter_mut().enumerate() {
                    *v = t.data()[c * plane..(c + 1) * plane].iter().sum();
                }
                (s, plane)
            })
            .collect();
        for (s, n) in partial {
            sum.iter_mut().zip(s).for_each(|(a, b)| *a += b);
            count += n;
        }
    }
    let channel_mean = if count == 0 {
        [0.0; 3]
    } else {
        sum.map(|s| s / count as f64)
    };
    Preprocessing {
        channel_mean,
        scale,
    }
}

/// Predictions for a whole split, preparing inputs chunk by chunk so that
/// memory stays bounded for large corpora.
pub fn predict_split(
    state: &ModelState,
    split: &DatasetSplit,
    pipeline: &Pipeline,
    prep: &Preprocessing,
) -> Vec<usize> {
    split
        .records()
        .chunks(PREDICT_CHUNK)
        .flat_map(|chunk| {
            chunk
                .par_iter()
                .map(|r| {
                    let x = prep.apply(&pipeline.apply_eval(&r.pixels));
                    argmax(
                        &forward_one(state, &x, Mode::Eval)
                            .expect("inputs prepared for this model")
                            .probs,
                    )
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Evaluates `state` on `split` with the given test-time occlusion. There is
/// no flip augmentation at test time.
pub fn evaluate(
    state: &ModelState,
    prep: &Preprocessing,
    split: &DatasetSplit,
    occlusion: OcclusionMode,
    model_name: &str,
    train_mode: FaceMode,
    dataset: &str,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let pipeline = build_pipeline(occlusion, false, state.descriptor().input_size);
    let predicted = predict_split(state, split, &pipeline, prep);
    let truth: Vec<usize> = split.labels().map(|l| l.index()).collect();
    EvalReport::from_predictions(
        model_name,
        train_mode,
        FaceMode::from_occlusion(&occlusion),
        dataset,
        &truth,
        &predicted,
    )
}

/// Accuracy difference `b - a` in percentage points.
pub fn improvement_summary(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    if a.dataset != b.dataset || a.test_mode != b.test_mode {
        return Err(Error::InvalidArgument(format!(
            "cannot compare {} / {} with {} / {}",
            a.dataset, a.test_mode, b.dataset, b.test_mode
        )));
    }
    Ok(100.0 * (b.accuracy - a.accuracy))
}

/// A literature baseline rendered verbatim, never recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub train_set: String,
    pub test_set: String,
    /// `(dataset, accuracy in percent)`; absent datasets render as `-`.
    pub accuracies: Vec<(String, f64)>,
}

fn reference(
    model: &str,
    train: FaceMode,
    test: FaceMode,
    affectnet: Option<f64>,
    ferplus: Option<f64>,
) -> ReferenceRow {
    let mut accuracies = Vec::new();
    if let Some(a) = affectnet {
        accuracies.push(("AffectNet".to_string(), a));
    }
    if let Some(f) = ferplus {
        accuracies.push(("FER+".to_string(), f));
    }
    ReferenceRow {
        model: model.into(),
        train_set: train.label().into(),
        test_set: test.label().into(),
        accuracies,
    }
}

/// Baseline accuracies for the results table, in percent.
pub fn default_references() -> Vec<ReferenceRow> {
    use FaceMode::*;
    vec![
        reference(
            "Bag-of-visual-words",
            FullFaces,
            FullFaces,
            Some(48.30),
            Some(80.65),
        ),
        reference("VGG-13", FullFaces, FullFaces, None, Some(84.99)),
        reference("AlexNet", FullFaces, FullFaces, Some(58.00), None),
        reference("VGG-f", FullFaces, FullFaces, Some(57.37), Some(85.05)),
        reference("VGG-face", FullFaces, FullFaces, Some(59.03), Some(84.79)),
        reference("VGG-f", FullFaces, LowerHalf, Some(41.58), Some(70.00)),
        reference("VGG-face", FullFaces, LowerHalf, Some(37.70), Some(68.89)),
        reference("VGG-f", LowerHalf, LowerHalf, Some(47.58), Some(78.23)),
        reference("VGG-face", LowerHalf, LowerHalf, Some(49.23), Some(82.28)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    /// `model,train_set,test_set,dataset,accuracy,n,is_reference`
    pub csv: String,
}

struct Row {
    model: String,
    train: String,
    test: String,
    cells: Vec<(String, f64)>,
    n: Vec<Option<usize>>,
    is_reference: bool,
}

fn format_percent(v: f64) -> String {
    format!("{v:.2}%")
}

/// Table with one row per (model, train set, test set) and one accuracy
/// column per dataset. Reference rows come first and are flagged.
pub fn render_results_table(reports: &[EvalReport], references: &[ReferenceRow]) -> RenderedTable {
    let mut rows: Vec<Row> = references
        .iter()
        .map(|r| Row {
            model: r.model.clone(),
            train: r.train_set.clone(),
            test: r.test_set.clone(),
            cells: r.accuracies.clone(),
            n: vec![None; r.accuracies.len()],
            is_reference: true,
        })
        .collect();
    for rep in reports {
        let key = (
            rep.model.as_str(),
            rep.train_mode.label(),
            rep.test_mode.label(),
        );
        let cell = (rep.dataset.clone(), 100.0 * rep.accuracy);
        match rows.iter_mut().find(|r| {
            !r.is_reference && (r.model.as_str(), r.train.as_str(), r.test.as_str()) == key
        }) {
            Some(r) => {
                r.cells.push(cell);
                r.n.push(Some(rep.n));
            }
            None => rows.push(Row {
                model: key.0.into(),
                train: key.1.into(),
                test: key.2.into(),
                cells: vec![cell],
                n: vec![Some(rep.n)],
                is_reference: false,
            }),
        }
    }

    let mut datasets: Vec<String> = Vec::new();
    for r in &rows {
        for (d, _) in &r.cells {
            if !datasets.contains(d) {
                datasets.push(d.clone());
            }
        }
    }

    let mut header = vec!["Model".to_string(), "Train set".into(), "Test set".into()];
    header.extend(datasets.iter().cloned());
    header.push(String::new());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.model.clone(), r.train.clone(), r.test.clone()];
            for d in &datasets {
                line.push(
                    r.cells
                        .iter()
                        .find(|(name, _)| name == d)
                        .map_or("-".into(), |(_, v)| format_percent(*v)),
                );
            }
            line.push(if r.is_reference {
                "reference".into()
            } else {
                String::new()
            });
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|l| l[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut text = String::new();
    let fmt_line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    writeln!(text, "{}", fmt_line(&header)).expect("string write");
    writeln!(
        text,
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-")
            .trim_end()
    )
    .expect("string write");
    for line in &body {
        writeln!(text, "{}", fmt_line(line)).expect("string write");
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model",
        "train_set",
        "test_set",
        "dataset",
        "accuracy",
        "n",
        "is_reference",
    ])
    .expect("in-memory csv");
    for r in &rows {
        for ((d, acc), n) in r.cells.iter().zip(&r.n) {
            w.write_record([
                r.model.as_str(),
                r.train.as_str(),
                r.test.as_str(),
                d.as_str(),
                &format!("{acc:.2}"),
                &n.map_or(String::new(), |n| n.to_string()),
                if r.is_reference { "true" } else { "false" },
            ])
            .expect("in-memory csv");
        }
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv");
    RenderedTable { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmotionLabel, ImageRecord, Source, SplitTag};
    use crate::pixels::PixelGrid;

    fn report(acc: f64, dataset: &str, test: FaceMode) -> EvalReport {
        EvalReport {
            model: "VGG-face".into(),
            train_mode: FaceMode::FullFaces,
            test_mode: test,
            dataset: dataset.into(),
            accuracy: acc,
            confusion: [[0; 8]; 8],
            n: 100,
        }
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth: Vec<usize> = (0..80).map(|i| i % 8).collect();
        let r = EvalReport::from_predictions(
            "m",
            FaceMode::FullFaces,
            FaceMode::FullFaces,
            "d",
            &truth,
            &truth,
        )
        .unwrap();
        assert_eq!(r.accuracy, 1.0);
        for i in 0..8 {
            assert_eq!(r.confusion[i][i], 10);
        }
        let constant = vec![3; 80];
        let r = EvalReport::from_predictions(
            "m",
            FaceMode::FullFaces,
            FaceMode::FullFaces,
            "d",
            &truth,
            &constant,
        )
        .unwrap();
        assert_eq!(r.accuracy, 0.125);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 80);
        assert!(EvalReport::from_predictions(
            "m",
            FaceMode::FullFaces,
            FaceMode::FullFaces,
            "d",
            &[],
            &[]
        )
        .is_err());
    }

    #[test]
    fn balanced_accuracy_equals_macro_recall() {
        let truth: Vec<usize> = (0..4000).map(|i| i / 500).collect();
        let pred: Vec<usize> = truth
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 7 < 3 { (t + i) % 8 } else { t })
            .collect();
        let r = EvalReport::from_predictions(
            "m",
            FaceMode::FullFaces,
            FaceMode::FullFaces,
            "AffectNet",
            &truth,
            &pred,
        )
        .unwrap();
        assert!((r.accuracy - r.macro_recall()).abs() < 1e-12);
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), 500, "row {i}");
        }
    }

    #[test]
    fn improvements() {
        let a = report(0.3770, "AffectNet", FaceMode::LowerHalf);
        let b = report(0.4923, "AffectNet", FaceMode::LowerHalf);
        assert!((improvement_summary(&a, &b).unwrap() - 11.53).abs() < 1e-9);
        let a = report(0.6889, "FER+", FaceMode::LowerHalf);
        let b = report(0.8228, "FER+", FaceMode::LowerHalf);
        assert!((improvement_summary(&a, &b).unwrap() - 13.39).abs() < 1e-9);
        assert_eq!(improvement_summary(&a, &a).unwrap(), 0.0);
        assert!(improvement_summary(&a, &report(0.5, "AffectNet", FaceMode::LowerHalf)).is_err());
    }

    #[test]
    fn references_only_table() {
        let t = render_results_table(&[], &default_references());
        let cells: Vec<Vec<&str>> = t
            .text
            .lines()
            .map(|l| l.split('|').map(str::trim).collect())
            .collect();
        assert_eq!(
            cells[0],
            ["Model", "Train set", "Test set", "AffectNet", "FER+", ""]
        );
        assert!(cells.contains(&vec![
            "VGG-face",
            "lower-half faces",
            "lower-half faces",
            "49.23%",
            "82.28%",
            "reference"
        ]));
        assert!(cells.contains(&vec![
            "VGG-13",
            "full faces",
            "full faces",
            "-",
            "84.99%",
            "reference"
        ]));
        assert!(t
            .csv
            .contains("VGG-face,full faces,full faces,AffectNet,59.03,,true"));
        assert!(t
            .csv
            .contains("VGG-face,full faces,full faces,FER+,84.79,,true"));
        assert!(t.text.contains("VGG-13"));
        assert_eq!(t.csv.lines().count(), 1 + 16);
        let empty = render_results_table(&[], &[]);
        assert_eq!(
            empty.csv,
            "model,train_set,test_set,dataset,accuracy,n,is_reference\n"
        );
    }

    #[test]
    fn computed_rows_merge_datasets() {
        let reps = [
            report(0.5, "AffectNet", FaceMode::FullFaces),
            report(0.8, "FER+", FaceMode::FullFaces),
        ];
        let t = render_results_table(&reps, &[]);
        assert_eq!(t.csv.lines().count(), 3);
        assert!(t
            .csv
            .contains("VGG-face,full faces,full faces,FER+,80.00,100,false"));
        assert_eq!(t.text.lines().count(), 3);
    }

    #[test]
    fn streaming_fit_matches_batch_fit() {
        let records: Vec<ImageRecord> = (0..300)
            .map(|i| ImageRecord {
                pixels: PixelGrid::new(
                    6,
                    5,
                    1,
                    (0..30).map(|p| ((p * 11 + i * 7) % 256) as u8).collect(),
                )
                .unwrap(),
                label: EmotionLabel::ALL[i % 8],
                split: SplitTag::Train,
                source: Source::Synthetic,
            })
            .collect();
        let split = DatasetSplit::new(records);
        let pipe = build_pipeline(OcclusionMode::NONE, false, 8);
        let a = fit_preprocessing(&split, &pipe, 0.5);
        let b = Preprocessing::fit(
            prepare_inputs(&split, &pipe, &Preprocessing::default()).iter(),
            0.5,
        );
        for c in 0..3 {
            assert!((a.channel_mean[c] - b.channel_mean[c]).abs() < 1e-9);
        }
        assert_eq!(a.scale, 0.5);
    }

    #[test]
    fn evaluate_rejects_empty_and_is_order_invariant() {
        let state =
            ModelState::random(crate::model::build_toy_descriptor(&[4, 8], 8).unwrap(), 1).unwrap();
        let prep = Preprocessing::default();
        assert!(evaluate(
            &state,
            &prep,
            &DatasetSplit::default(),
            OcclusionMode::NONE,
            "m",
            FaceMode::FullFaces,
            "d"
        )
        .is_err());
        let records: Vec<ImageRecord> = (0..24)
            .map(|i| ImageRecord {
                pixels: PixelGrid::new(
                    8,
                    8,
                    1,
                    (0..64).map(|p| ((p * 7 + i * 13) % 256) as u8).collect(),
                )
                .unwrap(),
                label: EmotionLabel::ALL[i % 8],
                split: SplitTag::Test,
                source: Source::Synthetic,
            })
            .collect();
        let fwd = DatasetSplit::new(records.clone());
        let rev = DatasetSplit::new(records.into_iter().rev().collect());
        let a = evaluate(
            &state,
            &prep,
            &fwd,
            OcclusionMode::upper_half(0),
            "m",
            FaceMode::FullFaces,
            "d",
        )
        .unwrap();
        let b = evaluate(
            &state,
            &prep,
            &rev,
            OcclusionMode::upper_half(0),
            "m",
            FaceMode::FullFaces,
            "d",
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test_mode, FaceMode::LowerHalf);
    }
}
