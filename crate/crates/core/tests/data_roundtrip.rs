use fer_occlusion::data::{
    downsample_per_class, export_png_tree, generate_synthetic, join_training_sets, load_manifest,
    read_manifest, write_manifest, MissingPolicy, Source, SyntheticParams,
};
use fer_occlusion::Error;

#[test]
fn png_tree_round_trips_through_manifest() {
    let set = generate_synthetic(&SyntheticParams::new(5, 12, 10, 0.5, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = export_png_tree(set.train.records(), dir.path(), "syn").unwrap();
    let manifest = dir.path().join("train.csv");
    write_manifest(&manifest, &entries).unwrap();
    assert_eq!(read_manifest(&manifest).unwrap(), entries);
    let loaded = load_manifest(
        &manifest,
        dir.path(),
        Source::Synthetic,
        MissingPolicy::Strict,
    )
    .unwrap();
    assert!(loaded.skipped.is_empty());
    assert_eq!(loaded.split, set.train);
}

#[test]
fn missing_images_follow_policy() {
    let set = generate_synthetic(&SyntheticParams::new(20, 8, 8, 0.5, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = export_png_tree(set.val.records(), dir.path(), "v").unwrap();
    std::fs::remove_file(dir.path().join(&entries[3].relpath)).unwrap();
    let manifest = dir.path().join("val.csv");
    write_manifest(&manifest, &entries).unwrap();

    let strict = load_manifest(
        &manifest,
        dir.path(),
        Source::Affectnet,
        MissingPolicy::Strict,
    );
    assert!(
        matches!(
            strict,
            Err(Error::MissingImage(_)) | Err(Error::ImageDecode { .. })
        ),
        "{strict:?}"
    );
    let lenient = load_manifest(
        &manifest,
        dir.path(),
        Source::Affectnet,
        MissingPolicy::Skip,
    )
    .unwrap();
    assert_eq!(lenient.skipped.len(), 1);
    assert_eq!(lenient.split.len(), entries.len() - 1);
}

#[test]
fn downsample_then_join_counts() {
    let set = generate_synthetic(&SyntheticParams::new(40, 8, 8, 0.5, 10)).unwrap();
    let capped = downsample_per_class(&set.train, 10, 1);
    assert_eq!(capped.class_counts(), [10; 8]);
    let joined = join_training_sets(&set.val, &capped);
    assert_eq!(joined.len(), set.val.len() + 80);
    assert_eq!(&joined.records()[..set.val.len()], set.val.records());
}
