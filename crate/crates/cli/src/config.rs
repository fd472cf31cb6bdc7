//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! Every section is optional. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fer_occlusion::data::{MissingPolicy, SyntheticParams};
use fer_occlusion::dsd::{build_sparsity_schedule, PhasePlan};
use fer_occlusion::eval::{default_references, ReferenceRow};
use fer_occlusion::train::{preset, Preset, PresetName, TrainStageConfig};
use fer_occlusion::transforms::OcclusionMode;

use crate::error::CliError;

pub const DATA_ROOT_ENV: &str = "FER_DATA_ROOT";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub stage1: StageOverrides,
    pub stage2: StageOverrides,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Base for relative data paths; falls back to `FER_DATA_ROOT`, then
    /// the working directory.
    pub root: Option<PathBuf>,
    pub ferplus_pixels: Option<PathBuf>,
    pub ferplus_labels: Option<PathBuf>,
    pub affectnet_manifest: Option<PathBuf>,
    pub affectnet_root: Option<PathBuf>,
    pub cap_per_class: usize,
    pub missing: MissingSetting,
    pub val_source: ValSource,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            ferplus_pixels: None,
            ferplus_labels: None,
            affectnet_manifest: None,
            affectnet_root: None,
            cap_per_class: 15000,
            missing: MissingSetting::Strict,
            val_source: ValSource::Ferplus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingSetting {
    Strict,
    Skip,
}

impl From<MissingSetting> for MissingPolicy {
    fn from(m: MissingSetting) -> Self {
        match m {
            MissingSetting::Strict => MissingPolicy::Strict,
            MissingSetting::Skip => MissingPolicy::Skip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValSource {
    Ferplus,
    Affectnet,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_per_class: usize,
    pub size: usize,
    pub lower_signal_weight: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_per_class: 100,
            size: 32,
            lower_signal_weight: 0.6,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// safetensors file with backbone weights.
    pub pretrained: Option<PathBuf>,
    /// `theirs -> ours` name map for `pretrained`.
    pub name_map: Option<PathBuf>,
    pub input_scale: Option<f64>,
}

/// Per-stage overrides of preset values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOverrides {
    pub epochs: Option<usize>,
    pub initial_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr_drop_factor: Option<f64>,
    pub plateau_patience: Option<usize>,
    pub min_lr: Option<f64>,
    pub sparsity_first: Option<f64>,
    pub sparsity_last: Option<f64>,
    pub dsd_rounds: Option<usize>,
    /// Train without any sparse phase.
    pub dense_only: Option<bool>,
    pub flip_augment: Option<bool>,
    pub occlusion_fill: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Cells as `train/test` with `full` or `lower`, e.g. `lower/lower`.
    pub cells: Vec<String>,
    pub ferplus_split: FerplusSplit,
    pub include_references: bool,
    pub references: Vec<ReferenceRow>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cells: ["full/full", "full/lower", "lower/lower", "lower/full"]
                .map(String::from)
                .to_vec(),
            ferplus_split: FerplusSplit::Test,
            include_references: true,
            references: default_references(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FerplusSplit {
    Test,
    Val,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
}

/// Where the training data comes from after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum DataPlan {
    Synthetic(SyntheticParams),
    Real {
        ferplus: Option<(PathBuf, PathBuf)>,
        affectnet: Option<(PathBuf, PathBuf)>,
    },
}

/// A validated configuration with presets and overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataPlan,
    /// Canonical text of the effective configuration, embedded in checkpoints.
    pub snapshot: String,
}

fn data_root(cfg: &DataConfig) -> PathBuf {
    cfg.root
        .clone()
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn existing(root: &Path, p: &Path, what: &str) -> Result<PathBuf, CliError> {
    let full = root.join(p);
    if full.exists() {
        Ok(full)
    } else {
        Err(CliError::Input(format!(
            "{what} not found: {}",
            full.display()
        )))
    }
}

fn apply_overrides(
    mut stage: TrainStageConfig,
    o: &StageOverrides,
    num_conv: usize,
) -> Result<TrainStageConfig, CliError> {
    let opt = &mut stage.optimizer;
    if let Some(v) = o.initial_lr {
        opt.initial_lr = v;
    }
    if let Some(v) = o.momentum {
        opt.momentum = v;
    }
    if let Some(v) = o.batch_size {
        opt.batch_size = v;
    }
    if let Some(v) = o.lr_drop_factor {
        opt.lr_drop_factor = v;
    }
    if let Some(v) = o.plateau_patience {
        opt.plateau_patience = v;
    }
    if o.min_lr.is_some() {
        opt.min_lr = o.min_lr;
    }
    if o.sparsity_first.is_some() || o.sparsity_last.is_some() {
        let rates = stage.sparsity.rates();
        let first = o
            .sparsity_first
            .unwrap_or(rates.get(1).copied().unwrap_or(0.0));
        let last = o
            .sparsity_last
            .unwrap_or(rates.last().copied().unwrap_or(0.0));
        stage.sparsity = build_sparsity_schedule(first, last, num_conv)
            .map_err(|e| CliError::Input(e.to_string()))?;
    }
    if let Some(e) = o.epochs {
        stage.epochs = e;
    }
    let rounds = o.dsd_rounds.unwrap_or(1);
    stage.phase_plan = if o.dense_only.unwrap_or(false) {
        PhasePlan::dense(stage.epochs)
    } else {
        PhasePlan::dsd(stage.epochs, rounds)
    };
    if let Some(f) = o.flip_augment {
        stage.flip_augment = f;
    }
    if let Some(fill) = o.occlusion_fill {
        if stage.occlusion.is_occluded() {
            stage.occlusion = OcclusionMode::upper_half(fill);
        }
    }
    stage
        .validate(num_conv)
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(stage)
}

impl RunConfig {
    /// Applies flags and preset values and checks that every referenced
    /// input exists.
    pub fn resolve(mut self, flags: &FlagOverrides) -> Result<Resolved, CliError> {
        if let Some(s) = flags.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &flags.preset {
            self.preset = Some(p.clone());
        }
        if let Some(o) = &flags.out {
            self.out_dir = Some(o.clone());
        }
        let seed = self.seed.unwrap_or(DEFAULT_SEED);
        let name: PresetName = self
            .preset
            .as_deref()
            .unwrap_or("toy")
            .parse()
            .map_err(|e: fer_occlusion::Error| CliError::Input(e.to_string()))?;
        let mut p = preset(name, seed);
        let num_conv = p.descriptor.num_conv();
        p.stage1 = apply_overrides(p.stage1, &self.stage1, num_conv)?;
        p.stage2 = apply_overrides(p.stage2, &self.stage2, num_conv)?;
        if let Some(s) = self.model.input_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(CliError::Input(format!(
                    "input_scale must be positive, got {s}"
                )));
            }
            p.input_scale = s;
        }

        let root = data_root(&self.data);
        let d = &self.data;
        let ferplus = match (&d.ferplus_pixels, &d.ferplus_labels) {
            (Some(px), Some(lb)) => Some((
                existing(&root, px, "FER+ pixel CSV")?,
                existing(&root, lb, "FER+ label CSV")?,
            )),
            (None, None) => None,
            _ => {
                return Err(CliError::Input(
                    "ferplus_pixels and ferplus_labels must be given together".into(),
                ))
            }
        };
        let affectnet = match &d.affectnet_manifest {
            Some(m) => {
                let manifest = existing(&root, m, "AffectNet manifest")?;
                let images = match &d.affectnet_root {
                    Some(r) => existing(&root, r, "AffectNet image root")?,
                    None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
                };
                Some((manifest, images))
            }
            None => None,
        };
        let data = if ferplus.is_none() && affectnet.is_none() {
            let s = &self.synthetic;
            DataPlan::Synthetic(SyntheticParams::new(
                s.num_per_class,
                s.size,
                s.size,
                s.lower_signal_weight,
                s.seed.unwrap_or(seed),
            ))
        } else {
            if d.val_source == ValSource::Ferplus && ferplus.is_none() {
                return Err(CliError::Input(
                    "val_source = \"ferplus\" needs FER+ inputs".into(),
                ));
            }
            if d.val_source == ValSource::Affectnet && affectnet.is_none() {
                return Err(CliError::Input(
                    "val_source = \"affectnet\" needs an AffectNet manifest".into(),
                ));
            }
            DataPlan::Real { ferplus, affectnet }
        };
        if d.cap_per_class == 0 {
            return Err(CliError::Input("cap_per_class must be positive".into()));
        }
        for cell in &self.eval.cells {
            parse_cell(cell)?;
        }

        let out_dir = self
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let mut canonical = self.clone();
        canonical.out_dir = None;
        canonical.seed = Some(seed);
        canonical.preset = Some(name.to_string());
        let snapshot = toml::to_string(&canonical).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Resolved {
            config: self,
            preset: p,
            seed,
            out_dir,
            data,
            snapshot,
        })
    }
}

/// `full` / `lower` on each side of a `train/test` cell.
pub fn parse_cell(cell: &str) -> Result<(bool, bool), CliError> {
    let side = |s: &str| match s.trim() {
        "full" => Ok(false),
        "lower" => Ok(true),
        other => Err(CliError::Input(format!(
            "unknown face mode `{other}` in cell `{cell}` (full, lower)"
        ))),
    };
    let (train, test) = cell
        .split_once('/')
        .ok_or_else(|| CliError::Input(format!("cell `{cell}` must look like `train/test`")))?;
    Ok((side(train)?, side(test)?))
}
