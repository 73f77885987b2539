//! Directory loader against constructed fixtures.

use std::fs;
use std::path::Path;

use tinyseg_data::synth::{sample, SyntheticSpec};
use tinyseg_data::{dir, pnm};

fn write_fixture(root: &Path, stems: &[&str], split: &str) {
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("labels")).unwrap();
    fs::create_dir_all(root.join("splits")).unwrap();
    let spec = SyntheticSpec { size: (16, 16), ..SyntheticSpec::default() };
    for (i, stem) in stems.iter().enumerate() {
        let (img, labels) = sample(&spec, i).unwrap();
        pnm::write_ppm(&dir::image_path(root, stem), &img).unwrap();
        pnm::write_labels(&dir::label_path(root, stem), &labels).unwrap();
    }
    let list: String = stems.iter().map(|s| format!("{s}\n")).collect();
    fs::write(root.join("splits").join(format!("{split}.txt")), list).unwrap();
}

#[test]
fn three_pair_fixture_loads_in_list_order() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path(), &["frame_b", "frame_a", "frame_c"], "train");
    let spec = SyntheticSpec { size: (16, 16), ..SyntheticSpec::default() };
    let loaded = dir::load_split(tmp.path(), "train", spec.classes, 255).unwrap();
    assert_eq!(loaded.len(), 3);
    for (i, (img, labels)) in loaded.iter().enumerate() {
        let (want_img, want_labels) = sample(&spec, i).unwrap();
        assert_eq!(labels, &want_labels);
        // image bytes survive the 8-bit file format to within half a step
        for (a, b) in img.data().iter().zip(want_img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }
}

#[test]
fn missing_label_file_names_the_stem() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path(), &["ok", "broken"], "val");
    fs::remove_file(dir::label_path(tmp.path(), "broken")).unwrap();
    let err = dir::load_split(tmp.path(), "val", 3, 255).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("broken"), "{msg}");
    assert!(msg.contains("missing"), "{msg}");
}

#[test]
fn empty_root_is_an_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let loaded = dir::load_split(tmp.path(), "train", 3, 255).unwrap();
    assert!(loaded.is_empty());
}

#[test]
fn stems_with_path_elements_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir_all(tmp.path().join("splits")).unwrap();
    fs::write(tmp.path().join("splits/train.txt"), "fine\n../evil\n").unwrap();
    let err = dir::split_stems(tmp.path(), "train").unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn mismatched_image_and_label_sizes_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path(), &["pair"], "test");
    let small = SyntheticSpec { size: (8, 8), ..SyntheticSpec::default() };
    let (_, labels) = sample(&small, 0).unwrap();
    pnm::write_labels(&dir::label_path(tmp.path(), "pair"), &labels).unwrap();
    let err = dir::load_split(tmp.path(), "test", 3, 255).unwrap_err();
    assert!(err.to_string().contains("16x16"), "{err}");
}
