//! The five subcommands. Each takes a resolved configuration and writes
//! its outputs under the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use fer_occlusion::data::{
    downsample_keep, export_png_tree, generate_synthetic, load_ferplus, load_manifest,
    read_manifest, write_manifest, DatasetSplit, EmotionLabel, ImageRecord, ManifestEntry,
    MissingPolicy, Source, SplitTag, NUM_CLASSES,
};
use fer_occlusion::eval::{
    evaluate, fit_preprocessing, render_results_table, EvalReport, FaceMode, RenderedTable,
};
use fer_occlusion::explain::{explain_images, render_panel, write_sidecar};
use fer_occlusion::model::{load_pretrained_backbone, mix_seed, parse_name_map, ModelState};
use fer_occlusion::pixels::PixelGrid;
use fer_occlusion::train::{
    checkpoint_path, load_checkpoint, run_stage, run_two_stage, Checkpoint, RunContext, StageData,
};
use fer_occlusion::transforms::{build_pipeline, OcclusionMode};

use crate::config::{parse_cell, DataPlan, FerplusSplit, Resolved, ValSource};
use crate::error::CliError;

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("data").join("images")
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root
            .join("data")
            .join("manifests")
            .join(format!("{name}.csv"))
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("data").join("stats.csv")
    }

    pub fn checkpoint(&self, stage: usize) -> PathBuf {
        checkpoint_path(&self.root, stage)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn explain_dir(&self) -> PathBuf {
        self.root.join("explain")
    }
}

/// Test datasets: display name and manifest slug.
const DATASETS: [(&str, &str); 3] = [
    ("FER+", "ferplus"),
    ("AffectNet", "affectnet"),
    ("synthetic", "synthetic"),
];

fn test_manifest_name(slug: &str) -> String {
    format!("test_{slug}")
}

fn mkdirs(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))
}

fn class_counts(entries: &[ManifestEntry]) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for e in entries {
        c[e.label as usize] += 1;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    /// Manifest name and per-class counts, in the order written.
    pub manifests: Vec<(String, [usize; NUM_CLASSES])>,
    pub ferplus_dropped: usize,
}

impl PrepareSummary {
    pub fn total(&self, name: &str) -> Option<usize> {
        self.manifests
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.iter().sum())
    }
}

fn by_split(entries: &[ManifestEntry], split: SplitTag) -> Vec<ManifestEntry> {
    entries
        .iter()
        .filter(|e| e.split.parse::<SplitTag>().ok() == Some(split))
        .cloned()
        .collect()
}

fn records_of(split: &DatasetSplit) -> &[ImageRecord] {
    split.records()
}

/// Builds the train/val/test manifests and a per-class count summary.
pub fn cmd_prepare(r: &Resolved) -> Result<PrepareSummary, CliError> {
    let layout = Layout::new(&r.out_dir);
    let images = layout.images_dir();
    mkdirs(&images)?;
    mkdirs(layout.manifest("x").parent().expect("manifest dir"))?;

    let mut manifests: Vec<(String, Vec<ManifestEntry>)> = Vec::new();
    let mut dropped = 0;
    match &r.data {
        DataPlan::Synthetic(params) => {
            let set = generate_synthetic(params).map_err(CliError::input)?;
            let all: Vec<ImageRecord> = [&set.train, &set.val, &set.test]
                .into_iter()
                .flat_map(|s| records_of(s).iter().cloned())
                .collect();
            let entries = export_png_tree(&all, &images, "synthetic")?;
            manifests.push(("train".into(), by_split(&entries, SplitTag::Train)));
            manifests.push(("val".into(), by_split(&entries, SplitTag::Val)));
            manifests.push((
                test_manifest_name("synthetic"),
                by_split(&entries, SplitTag::Test),
            ));
        }
        DataPlan::Real { ferplus, affectnet } => {
            let mut train = Vec::new();
            let mut val = Vec::new();
            if let Some((pixels, labels)) = ferplus {
                let fp = load_ferplus(pixels, labels).map_err(CliError::input)?;
                dropped = fp.dropped;
                let all: Vec<ImageRecord> = [&fp.splits.train, &fp.splits.val, &fp.splits.test]
                    .into_iter()
                    .flat_map(|s| records_of(s).iter().cloned())
                    .collect();
                let entries = export_png_tree(&all, &images, "ferplus")?;
                train.extend(by_split(&entries, SplitTag::Train));
                let fp_val = by_split(&entries, SplitTag::Val);
                if r.config.data.val_source != ValSource::Affectnet {
                    val.extend(fp_val.iter().cloned());
                }
                let test = match r.config.eval.ferplus_split {
                    FerplusSplit::Test => by_split(&entries, SplitTag::Test),
                    FerplusSplit::Val => fp_val,
                };
                manifests.push((test_manifest_name("ferplus"), test));
            }
            if let Some((manifest, root)) = affectnet {
                let entries = read_manifest(manifest).map_err(CliError::input)?;
                let root = fs::canonicalize(root).map_err(CliError::input)?;
                let mut absolute: Vec<ManifestEntry> = entries
                    .into_iter()
                    .map(|mut e| {
                        e.relpath = root.join(&e.relpath).display().to_string();
                        e
                    })
                    .collect();
                for e in &absolute {
                    EmotionLabel::try_from(e.label).map_err(CliError::input)?;
                }
                let an_train = by_split(&absolute, SplitTag::Train);
                let labels: Vec<EmotionLabel> = an_train
                    .iter()
                    .map(|e| EmotionLabel::try_from(e.label).expect("checked above"))
                    .collect();
                let keep = downsample_keep(
                    &labels,
                    r.config.data.cap_per_class,
                    mix_seed(r.seed, 15000),
                );
                train.extend(
                    an_train
                        .into_iter()
                        .zip(keep)
                        .filter_map(|(e, k)| k.then_some(e)),
                );
                absolute = by_split(&absolute, SplitTag::Val);
                if r.config.data.val_source != ValSource::Ferplus {
                    val.extend(absolute.iter().cloned());
                }
                manifests.push((test_manifest_name("affectnet"), absolute));
            }
            manifests.insert(0, ("val".into(), val));
            manifests.insert(0, ("train".into(), train));
        }
    }

    let mut stats =
        csv::Writer::from_path(layout.stats()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut header = vec!["manifest".to_string()];
    header.extend(EmotionLabel::ALL.iter().map(|l| l.name().to_string()));
    header.push("total".into());
    stats
        .write_record(&header)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut summary = Vec::new();
    for (name, entries) in &manifests {
        write_manifest(&layout.manifest(name), entries)?;
        let counts = class_counts(entries);
        let mut row = vec![name.clone()];
        row.extend(counts.iter().map(|c| c.to_string()));
        row.push(entries.len().to_string());
        stats
            .write_record(&row)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        summary.push((name.clone(), counts));
    }
    stats.flush()?;
    Ok(PrepareSummary {
        manifests: summary,
        ferplus_dropped: dropped,
    })
}

fn source_of(r: &Resolved) -> Source {
    match r.data {
        DataPlan::Synthetic(_) => Source::Synthetic,
        DataPlan::Real { .. } => Source::Ferplus,
    }
}

fn load_prepared(r: &Resolved, name: &str) -> Result<DatasetSplit, CliError> {
    let layout = Layout::new(&r.out_dir);
    let path = layout.manifest(name);
    if !path.exists() {
        return Err(CliError::Input(format!(
            "manifest {} not found; run `prepare` first",
            path.display()
        )));
    }
    let policy: MissingPolicy = r.config.data.missing.into();
    let load = load_manifest(&path, &layout.images_dir(), source_of(r), policy)
        .map_err(CliError::input)?;
    for (p, why) in &load.skipped {
        eprintln!("skipped {}: {why}", p.display());
    }
    Ok(load.split)
}

/// Which stages `train` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelection {
    Both,
    FullOnly,
}

fn initial_model(r: &Resolved) -> Result<ModelState, CliError> {
    let mut state = ModelState::random(r.preset.descriptor.clone(), r.seed)?;
    if let Some(weights) = &r.config.model.pretrained {
        let map_path = r
            .config
            .model
            .name_map
            .as_ref()
            .ok_or_else(|| CliError::Input("model.pretrained needs model.name_map".into()))?;
        let text = fs::read_to_string(map_path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", map_path.display())))?;
        let map = parse_name_map(&text).map_err(CliError::input)?;
        let loaded =
            load_pretrained_backbone(&mut state, weights, &map).map_err(CliError::input)?;
        eprintln!("loaded {} pretrained tensors", loaded.len());
    }
    Ok(state)
}

/// Runs the configured stages and returns the checkpoint paths written.
pub fn cmd_train(r: &Resolved, selection: StageSelection) -> Result<Vec<PathBuf>, CliError> {
    let train = load_prepared(r, "train")?;
    let val = load_prepared(r, "val")?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Input(
            "training and validation manifests must not be empty".into(),
        ));
    }
    mkdirs(&r.out_dir)?;
    let size = r.preset.descriptor.input_size;
    let prep = fit_preprocessing(
        &train,
        &build_pipeline(OcclusionMode::NONE, false, size),
        r.preset.input_scale,
    );
    let initial = initial_model(r)?;
    let ctx = RunContext {
        preset: r.preset.name.to_string(),
        seed: r.seed,
        config_snapshot: r.snapshot.clone(),
        out_dir: Some(r.out_dir.clone()),
    };
    let data = StageData {
        train: &train,
        val: &val,
    };
    let layout = Layout::new(&r.out_dir);
    match selection {
        StageSelection::FullOnly => {
            run_stage(initial, data, &r.preset.stage1, &prep, &ctx, 1, None)?;
            Ok(vec![layout.checkpoint(1)])
        }
        StageSelection::Both => {
            run_two_stage(
                initial,
                &r.preset.stage1,
                &r.preset.stage2,
                data,
                &prep,
                &ctx,
            )?;
            Ok(vec![layout.checkpoint(1), layout.checkpoint(2)])
        }
    }
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    load_checkpoint(path).map_err(CliError::input)
}

fn mode_slug(m: FaceMode) -> &'static str {
    match m {
        FaceMode::FullFaces => "full",
        FaceMode::LowerHalf => "lower",
    }
}

/// Evaluates the requested `train/test` cells on every prepared test set.
/// `full` training uses the stage-1 checkpoint and `lower` the stage-2 one.
pub fn cmd_eval(r: &Resolved, cells: &[String]) -> Result<Vec<EvalReport>, CliError> {
    let layout = Layout::new(&r.out_dir);
    let parsed = cells
        .iter()
        .map(|c| parse_cell(c))
        .collect::<Result<Vec<_>, _>>()?;
    if parsed.is_empty() {
        return Err(CliError::Input("no evaluation cells requested".into()));
    }
    let mut checkpoints: [Option<Checkpoint>; 2] = [None, None];
    for &(train_lower, _) in &parsed {
        let slot = usize::from(train_lower);
        if checkpoints[slot].is_none() {
            checkpoints[slot] = Some(load_ckpt(&layout.checkpoint(slot + 1))?);
        }
    }
    let mut tests = Vec::new();
    for (name, slug) in DATASETS {
        let path = layout.manifest(&test_manifest_name(slug));
        if path.exists() {
            tests.push((name, slug, load_prepared(r, &test_manifest_name(slug))?));
        }
    }
    if tests.is_empty() {
        return Err(CliError::Input(
            "no test manifests found; run `prepare` first".into(),
        ));
    }

    let dir = layout.eval_dir();
    mkdirs(&dir)?;
    let model_name = r.preset.descriptor.name.clone();
    let mut reports = Vec::new();
    for &(train_lower, test_lower) in &parsed {
        let ckpt = checkpoints[usize::from(train_lower)]
            .as_ref()
            .expect("loaded above");
        let occlusion = if test_lower {
            r.preset.stage2.occlusion
        } else {
            OcclusionMode::NONE
        };
        let train_mode = if train_lower {
            FaceMode::LowerHalf
        } else {
            FaceMode::FullFaces
        };
        for (name, slug, split) in &tests {
            let report = evaluate(
                &ckpt.model,
                &ckpt.preprocessing,
                split,
                occlusion,
                &model_name,
                train_mode,
                name,
            )?;
            let stem = format!(
                "{}-{}_{slug}",
                mode_slug(train_mode),
                mode_slug(report.test_mode)
            );
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
            report.write_confusion_csv(&dir.join(format!("{stem}_confusion.csv")))?;
            reports.push(report);
        }
    }
    write_table(r, &reports)?;
    Ok(reports)
}

fn write_table(r: &Resolved, reports: &[EvalReport]) -> Result<RenderedTable, CliError> {
    let refs = if r.config.eval.include_references {
        r.config.eval.references.as_slice()
    } else {
        &[]
    };
    let table = render_results_table(reports, refs);
    let dir = Layout::new(&r.out_dir).eval_dir();
    mkdirs(&dir)?;
    fs::write(dir.join("results.txt"), &table.text)?;
    fs::write(dir.join("results.csv"), &table.csv)?;
    Ok(table)
}

/// Re-renders the combined table from the report files `eval` left behind.
pub fn cmd_report(r: &Resolved) -> Result<RenderedTable, CliError> {
    let dir = Layout::new(&r.out_dir).eval_dir();
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p)?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        reports.push(report);
    }
    write_table(r, &reports)
}

/// Grad-CAM panel plus JSON sidecar for the given image files.
pub fn cmd_explain(
    r: &Resolved,
    checkpoint: &Path,
    images: &[PathBuf],
    occlude: bool,
    output: Option<&Path>,
) -> Result<PathBuf, CliError> {
    if images.is_empty() {
        return Err(CliError::Input("explain needs at least one image".into()));
    }
    let ckpt = load_ckpt(checkpoint)?;
    let mut grids = Vec::with_capacity(images.len());
    for p in images {
        if !p.exists() {
            return Err(CliError::Input(format!("image {} not found", p.display())));
        }
        let img = image::open(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        grids.push(PixelGrid::from_dynamic_image(&img).map_err(CliError::input)?);
    }
    let occlusion = if occlude {
        r.preset.stage2.occlusion
    } else {
        OcclusionMode::NONE
    };
    let pipeline = build_pipeline(occlusion, false, ckpt.model.descriptor().input_size);
    let explanations = explain_images(&ckpt.model, &ckpt.preprocessing, &pipeline, &grids)?;

    // Panel columns show what the model saw, at the first image's size.
    let (h, w) = (grids[0].height(), grids[0].width());
    let shown: Vec<PixelGrid> = grids
        .iter()
        .map(|g| {
            let g = if occlusion.is_occluded() {
                fer_occlusion::transforms::occlude_upper_half(g, occlusion.fill)
            } else {
                g.clone()
            };
            fer_occlusion::transforms::resize(&g, h, w)
        })
        .collect();
    let heatmaps: Vec<_> = explanations.iter().map(|e| e.heatmap.clone()).collect();
    let labels: Vec<_> = explanations.iter().map(|e| e.predicted).collect();

    let out = match output {
        Some(p) => p.to_path_buf(),
        None => Layout::new(&r.out_dir).explain_dir().join("panel.png"),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdirs(parent)?;
    }
    render_panel(&shown, &heatmaps, &labels, &out)?;
    write_sidecar(&out.with_extension("json"), &explanations)?;
    Ok(out)
}
