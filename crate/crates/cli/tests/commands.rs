use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fer_occlusion::data::{read_manifest, EmotionLabel, ManifestEntry};
use fer_occlusion::pixels::PixelGrid;
use fer_occlusion_cli::commands::{
    cmd_eval, cmd_explain, cmd_prepare, cmd_report, cmd_train, Layout, StageSelection,
};
use fer_occlusion_cli::config::{FlagOverrides, Resolved, RunConfig};
use fer_occlusion_cli::error::CliError;

const SMALL: &str = "
[synthetic]
num_per_class = 20
size = 16

[stage1]
epochs = 2

[stage2]
epochs = 2
";

fn resolve(text: &str, out: &Path) -> Resolved {
    RunConfig::parse(text)
        .unwrap()
        .resolve(&FlagOverrides {
            out: Some(out.to_path_buf()),
            ..Default::default()
        })
        .unwrap()
}

fn ferocc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ferocc"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn synthetic_prepare_writes_manifest_tree() {
    let dir = tempfile::tempdir().unwrap();
    let r = resolve(SMALL, dir.path());
    let summary = cmd_prepare(&r).unwrap();
    assert_eq!(summary.total("train"), Some(112));
    assert_eq!(summary.total("val"), Some(24));
    assert_eq!(summary.total("test_synthetic"), Some(24));
    let layout = Layout::new(dir.path());
    let entries = read_manifest(&layout.manifest("train")).unwrap();
    assert!(layout.images_dir().join(&entries[0].relpath).exists());
    let stats = std::fs::read_to_string(layout.stats()).unwrap();
    assert!(stats.starts_with("manifest,anger,contempt"));
    assert!(stats.contains("train,14,14,14,14,14,14,14,14,112"));
}

#[test]
fn full_only_train_then_single_cell_eval() {
    let dir = tempfile::tempdir().unwrap();
    let r = resolve(SMALL, dir.path());
    cmd_prepare(&r).unwrap();
    let written = cmd_train(&r, StageSelection::FullOnly).unwrap();
    assert_eq!(written, vec![dir.path().join("stage1.ckpt")]);
    assert!(!dir.path().join("stage2.ckpt").exists());
    assert!(dir.path().join("stage1_metrics.csv").exists());

    let reports = cmd_eval(&r, &["full/lower".to_string()]).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(dir.path().join("eval/full-lower_synthetic.json").exists());
    assert!(matches!(
        cmd_eval(&r, &["lower/lower".to_string()]),
        Err(CliError::Input(_))
    ));

    let table = cmd_report(&r).unwrap();
    assert!(table
        .csv
        .contains("toy,full faces,lower-half faces,synthetic,"));
    assert!(table.csv.contains(",true\n"));
}

#[test]
fn two_stage_eval_matrix_and_explain_panel() {
    let dir = tempfile::tempdir().unwrap();
    let r = resolve(SMALL, dir.path());
    cmd_prepare(&r).unwrap();
    assert_eq!(cmd_train(&r, StageSelection::Both).unwrap().len(), 2);
    let reports = cmd_eval(&r, &r.config.eval.cells).unwrap();
    assert_eq!(reports.len(), 4);
    let eval_dir = dir.path().join("eval");
    let json = std::fs::read_dir(&eval_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "json")
        })
        .count();
    assert_eq!(json, 4);
    let text = std::fs::read_to_string(eval_dir.join("results.txt")).unwrap();
    assert!(text.contains("reference"));

    let layout = Layout::new(dir.path());
    let entries = read_manifest(&layout.manifest("test_synthetic")).unwrap();
    let images: Vec<PathBuf> = entries
        .iter()
        .take(4)
        .map(|e| layout.images_dir().join(&e.relpath))
        .collect();
    let panel = cmd_explain(&r, &dir.path().join("stage2.ckpt"), &images, true, None).unwrap();
    let decoded = image::open(&panel).unwrap();
    assert_eq!(decoded.width(), 4 * 16);
    let sidecar = std::fs::read_to_string(panel.with_extension("json")).unwrap();
    assert_eq!(sidecar.matches("\"predicted\"").count(), 4);

    assert!(cmd_explain(&r, &dir.path().join("stage2.ckpt"), &[], true, None).is_err());
    let missing = cmd_explain(&r, &dir.path().join("nope.ckpt"), &images, true, None);
    assert!(matches!(missing, Err(CliError::Input(_))));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();

    let bad_config = dir.path().join("bad.toml");
    std::fs::write(&bad_config, "[stage1]\nepoch = 3\n").unwrap();
    let o = ferocc(&[
        "--config",
        bad_config.to_str().unwrap(),
        "--out",
        out,
        "prepare",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));

    let bad_path = dir.path().join("badpath.toml");
    std::fs::write(
        &bad_path,
        "[data]\nferplus_pixels = \"missing.csv\"\nferplus_labels = \"missing2.csv\"\n",
    )
    .unwrap();
    let o = ferocc(&[
        "--config",
        bad_path.to_str().unwrap(),
        "--out",
        out,
        "prepare",
    ]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(ferocc(&["--out", out, "train"]).status.code(), Some(2));
    assert_eq!(ferocc(&["--out", out, "eval"]).status.code(), Some(2));
    assert_eq!(
        ferocc(&["--preset", "alexnet", "--out", out, "prepare"])
            .status
            .code(),
        Some(2)
    );
    let o = ferocc(&[
        "--out",
        out,
        "explain",
        "--checkpoint",
        "nope.ckpt",
        "x.png",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let small = dir.path().join("small.toml");
    std::fs::write(&small, SMALL).unwrap();
    let o = ferocc(&["--config", small.to_str().unwrap(), "--out", out, "prepare"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("train: 112 images"));
}

#[test]
fn training_divergence_exits_with_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diverge.toml");
    std::fs::write(&cfg, format!("{SMALL}initial_lr = 1e200\n")).unwrap();
    let out = dir.path().join("run");
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(
        ferocc(&[&args[..], &["prepare"]].concat()).status.code(),
        Some(0)
    );
    let o = ferocc(&[&args[..], &["train"]].concat());
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("stage1.ckpt").exists());
}

fn write_png(path: &Path, value: u8) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    PixelGrid::filled(6, 6, 3, value)
        .unwrap()
        .to_dynamic_image()
        .save(path)
        .unwrap();
}

#[test]
fn real_sources_build_joint_training_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpora");
    std::fs::create_dir_all(&root).unwrap();

    // FER+: 5 train rows (one dropped as not-a-face), 2 val, 2 test.
    let px: Vec<String> = (0..2304).map(|i| (i % 200).to_string()).collect();
    let px = px.join(" ");
    let mut pixels = String::from("emotion,pixels,Usage\n");
    let mut labels = String::from("Usage,Image name,neutral,happiness,surprise,sadness,anger,disgust,fear,contempt,unknown,NF\n");
    let usages = ["Training"; 5]
        .into_iter()
        .chain(["PublicTest"; 2])
        .chain(["PrivateTest"; 2]);
    for (i, usage) in usages.enumerate() {
        pixels.push_str(&format!("0,{px},{usage}\n"));
        let votes = if i == 0 {
            "0,0,0,0,0,0,0,0,0,10"
        } else {
            "0,8,0,0,2,0,0,0,0,0"
        };
        labels.push_str(&format!("{usage},f{i}.png,{votes}\n"));
    }
    std::fs::write(root.join("fer2013.csv"), pixels).unwrap();
    std::fs::write(root.join("fer2013new.csv"), labels).unwrap();

    // AffectNet-style: 7 happiness + 2 anger train images, 3 val images.
    let mut entries = Vec::new();
    for i in 0..12 {
        let (label, split) = match i {
            0..=6 => (EmotionLabel::Happiness, "train"),
            7..=8 => (EmotionLabel::Anger, "train"),
            _ => (EmotionLabel::Fear, "val"),
        };
        let rel = format!("img/{i}.png");
        write_png(&root.join("affectnet").join(&rel), i as u8);
        entries.push(ManifestEntry {
            relpath: rel,
            label: label.index() as i64,
            split: split.into(),
        });
    }
    fer_occlusion::data::write_manifest(&root.join("affectnet").join("manifest.csv"), &entries)
        .unwrap();

    let config = format!(
        "[data]\nroot = \"{}\"\nferplus_pixels = \"fer2013.csv\"\nferplus_labels = \"fer2013new.csv\"\n\
         affectnet_manifest = \"affectnet/manifest.csv\"\ncap_per_class = 4\n",
        root.display()
    );
    let out = dir.path().join("run");
    let r = resolve(&config, &out);
    let summary = cmd_prepare(&r).unwrap();
    assert_eq!(summary.ferplus_dropped, 1);
    // 4 FER+ train + min(7,4) happiness + 2 anger
    assert_eq!(summary.total("train"), Some(4 + 4 + 2));
    assert_eq!(summary.total("val"), Some(2));
    assert_eq!(summary.total("test_ferplus"), Some(2));
    assert_eq!(summary.total("test_affectnet"), Some(3));

    let layout = Layout::new(&out);
    let train = read_manifest(&layout.manifest("train")).unwrap();
    assert!(train
        .iter()
        .all(|e| layout.images_dir().join(&e.relpath).exists()));
    let again = cmd_prepare(&r).unwrap();
    assert_eq!(again, summary);
    assert_eq!(read_manifest(&layout.manifest("train")).unwrap(), train);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let toy = RunConfig::load(&dir.join("toy.toml")).unwrap();
    assert!(toy.resolve(&FlagOverrides::default()).is_ok());
    let full = RunConfig::load(&dir.join("full-scale.example.toml")).unwrap();
    assert_eq!(full.preset.as_deref(), Some("vggface"));
}
