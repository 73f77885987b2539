//! Directory-backed datasets.
//!
//! Layout: `root/images/<stem>.ppm`, `root/labels/<stem>.pgm`, and
//! `root/splits/<split>.txt` holding one stem per line. Samples load in list
//! order so iteration is reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use tinyseg_core::error::{Error, Result};
use tinyseg_core::tensor::Tensor;

use crate::labels::LabelMap;
use crate::pnm;

/// Stems listed for a split, in file order. A missing list file means the
/// split is empty (warned, not fatal); a present but malformed one is an
/// error naming the line.
pub fn split_stems(root: &Path, split: &str) -> Result<Vec<String>> {
    let path = root.join("splits").join(format!("{split}.txt"));
    if !path.exists() {
        eprintln!("warning: no split list at {}, treating {split} as empty", path.display());
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::data(format!("cannot read split list {}: {e}", path.display())))?;
    let mut stems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let stem = line.trim();
        if stem.is_empty() {
            continue;
        }
        if stem.contains(['/', '\\']) || stem.contains("..") {
            return Err(Error::data(format!(
                "split list {} line {}: stem {stem:?} must not contain path elements",
                path.display(),
                i + 1
            )));
        }
        stems.push(stem.to_string());
    }
    if stems.is_empty() {
        eprintln!("warning: split list {} names no samples", path.display());
    }
    Ok(stems)
}

pub fn image_path(root: &Path, stem: &str) -> PathBuf {
    root.join("images").join(format!("{stem}.ppm"))
}

pub fn label_path(root: &Path, stem: &str) -> PathBuf {
    root.join("labels").join(format!("{stem}.pgm"))
}

/// Loads every image/label pair of a split, in list order.
pub fn load_split(
    root: &Path,
    split: &str,
    classes: usize,
    ignore: u32,
) -> Result<Vec<(Tensor, LabelMap)>> {
    let stems = split_stems(root, split)?;
    let mut out = Vec::with_capacity(stems.len());
    for stem in &stems {
        let img_path = image_path(root, stem);
        let lab_path = label_path(root, stem);
        for p in [&img_path, &lab_path] {
            if !p.exists() {
                return Err(Error::data(format!(
                    "split {split} lists stem {stem} but {} is missing",
                    p.display()
                )));
            }
        }
        let img = pnm::read_ppm(&img_path)?;
        let labels = pnm::read_labels(&lab_path, classes, ignore)?;
        if img.shape()[1] != labels.height() || img.shape()[2] != labels.width() {
            return Err(Error::data(format!(
                "stem {stem}: image is {}x{} but labels are {}x{}",
                img.shape()[1],
                img.shape()[2],
                labels.height(),
                labels.width()
            )));
        }
        out.push((img, labels));
    }
    Ok(out)
}
