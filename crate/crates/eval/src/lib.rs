//! Segmentation scoring: confusion-matrix accumulation and per-class
//! intersection-over-union.

use std::fmt::Write as _;

use tinyseg_core::error::{Error, Result};
use tinyseg_data::LabelMap;

/// K x K pixel counts, rows indexed by ground truth and columns by
/// prediction. Pixels whose truth equals the ignore value are skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<ConfusionMatrix> {
        if classes == 0 {
            return Err(Error::config("a confusion matrix needs at least one class"));
        }
        Ok(ConfusionMatrix { classes, counts: vec![0; classes * classes] })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Total scored pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Scores one prediction map against its ground truth.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.height() != truth.height() || pred.width() != truth.width() {
            return Err(Error::shape(format!(
                "prediction {}x{} against truth {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        let k = self.classes;
        for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
            if t == truth.ignore() {
                continue;
            }
            if t as usize >= k || p as usize >= k {
                return Err(Error::data(format!(
                    "pixel ({}, {}): truth {t}, prediction {p} outside {k} classes",
                    i % pred.width(),
                    i / pred.width(),
                )));
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds another matrix of the same size; accumulation is additive, so
    /// image sets may be scored separately and merged.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(format!(
                "merging a {}-class matrix into a {}-class one",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Per-class IoU with classes absent from both truth and prediction left
/// undefined and excluded from the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct IoUReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

pub fn iou(cm: &ConfusionMatrix) -> IoUReport {
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let row: u64 = (0..k).map(|p| cm.get(c, p)).sum();
        let col: u64 = (0..k).map(|t| cm.get(t, c)).sum();
        let denom = row + col - tp;
        per_class.push(if denom == 0 { None } else { Some(tp as f64 / denom as f64) });
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    IoUReport { per_class, mean }
}

impl IoUReport {
    /// `class,iou` rows (undefined classes print the literal `undefined`)
    /// followed by a `mean,<value>` row.
    pub fn csv(&self, names: &[String]) -> String {
        let mut out = String::from("class,iou\n");
        for (c, v) in self.per_class.iter().enumerate() {
            let name = names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
            match v {
                Some(v) => writeln!(out, "{name},{v:.6}").unwrap(),
                None => writeln!(out, "{name},undefined").unwrap(),
            }
        }
        match self.mean {
            Some(m) => writeln!(out, "mean,{m:.6}").unwrap(),
            None => writeln!(out, "mean,undefined").unwrap(),
        }
        out
    }

    /// Aligned text table with one class per column and the mean appended.
    pub fn table(&self, names: &[String]) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for (c, v) in self.per_class.iter().enumerate() {
            let name = names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
            let val = match v {
                Some(v) => format!("{:.1}", v * 100.0),
                None => "-".to_string(),
            };
            let width = name.len().max(val.len()) + 2;
            write!(header, "{name:>width$}").unwrap();
            write!(row, "{val:>width$}").unwrap();
        }
        let mean = match self.mean {
            Some(m) => format!("{:.1}", m * 100.0),
            None => "-".to_string(),
        };
        write!(header, "{:>8}", "mIoU").unwrap();
        write!(row, "{mean:>8}").unwrap();
        format!("{header}\n{row}\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, k: usize, data: Vec<u32>) -> LabelMap {
        LabelMap::new(h, w, k, 255, data).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_all_ones() {
        let truth = map(10, 10, 4, (0..100).map(|i| (i % 4) as u32).collect());
        let mut cm = ConfusionMatrix::new(4).unwrap();
        cm.accumulate(&truth, &truth).unwrap();
        let r = iou(&cm);
        assert_eq!(r.per_class, vec![Some(1.0); 4]);
        assert_eq!(r.mean, Some(1.0));
    }

    #[test]
    fn identical_single_class_maps_fill_one_diagonal_cell() {
        let m = map(10, 10, 4, vec![3; 100]);
        let mut cm = ConfusionMatrix::new(4).unwrap();
        cm.accumulate(&m, &m).unwrap();
        assert_eq!(cm.get(3, 3), 100);
        assert_eq!(cm.total(), 100);
    }

    #[test]
    fn fully_ignored_truth_leaves_the_matrix_empty() {
        let truth = map(4, 4, 3, vec![255; 16]);
        let pred = map(4, 4, 3, vec![1; 16]);
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.accumulate(&pred, &truth).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(iou(&cm).mean, None);
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let truth = map(2, 2, 3, vec![1; 4]);
        let pred = map(2, 2, 3, vec![2; 4]);
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.accumulate(&pred, &truth).unwrap();
        let r = iou(&cm);
        assert_eq!(r.per_class[1], Some(0.0));
        assert_eq!(r.per_class[2], Some(0.0));
        assert_eq!(r.per_class[0], None);
    }

    #[test]
    fn hand_built_three_class_matrix_matches_hand_arithmetic() {
        // truth rows: class 0: 50 right, 10 as 1; class 1: 20 right, 5 as 2;
        // class 2: 15 right, 5 as 0
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.counts = vec![50, 10, 0, 0, 20, 5, 5, 0, 15];
        let r = iou(&cm);
        // IoU_0 = 50 / (60 + 55 - 50), IoU_1 = 20 / (25 + 30 - 20),
        // IoU_2 = 15 / (20 + 20 - 15)
        assert!((r.per_class[0].unwrap() - 50.0 / 65.0).abs() < 1e-12);
        assert!((r.per_class[1].unwrap() - 20.0 / 35.0).abs() < 1e-12);
        assert!((r.per_class[2].unwrap() - 15.0 / 25.0).abs() < 1e-12);
        let mean = (50.0 / 65.0 + 20.0 / 35.0 + 15.0 / 25.0) / 3.0;
        assert!((r.mean.unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn random_maps_match_a_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let k = 4;
            let draw = |rng: &mut ChaCha8Rng| -> Vec<u32> {
                (0..64)
                    .map(|_| if rng.gen_bool(0.1) { 255 } else { rng.gen_range(0..k as u32) })
                    .collect()
            };
            let t = draw(&mut rng);
            let mut p = draw(&mut rng);
            // predictions never carry the ignore value in practice
            for v in &mut p {
                if *v == 255 {
                    *v = 0;
                }
            }
            let truth = map(8, 8, k, t.clone());
            let pred = map(8, 8, k, p.clone());
            let mut cm = ConfusionMatrix::new(k).unwrap();
            cm.accumulate(&pred, &truth).unwrap();
            let mut expect = vec![0u64; k * k];
            for i in 0..64 {
                if t[i] != 255 {
                    expect[t[i] as usize * k + p[i] as usize] += 1;
                }
            }
            for truth_c in 0..k {
                for pred_c in 0..k {
                    assert_eq!(cm.get(truth_c, pred_c), expect[truth_c * k + pred_c]);
                }
            }
        }
    }

    #[test]
    fn accumulation_is_additive_across_image_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draw = |rng: &mut ChaCha8Rng| -> LabelMap {
            map(6, 6, 5, (0..36).map(|_| rng.gen_range(0..5)).collect())
        };
        let pairs: Vec<(LabelMap, LabelMap)> =
            (0..6).map(|_| (draw(&mut rng), draw(&mut rng))).collect();
        let mut joint = ConfusionMatrix::new(5).unwrap();
        for (p, t) in &pairs {
            joint.accumulate(p, t).unwrap();
        }
        let mut merged = ConfusionMatrix::new(5).unwrap();
        for chunk in pairs.chunks(2) {
            let mut part = ConfusionMatrix::new(5).unwrap();
            for (p, t) in chunk {
                part.accumulate(p, t).unwrap();
            }
            merged.merge(&part).unwrap();
        }
        assert_eq!(joint, merged);
    }

    #[test]
    fn relabeling_classes_permutes_the_report_and_keeps_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = 4;
        let perm = [2usize, 0, 3, 1];
        let t: Vec<u32> = (0..100).map(|_| rng.gen_range(0..k as u32)).collect();
        let p: Vec<u32> = (0..100).map(|_| rng.gen_range(0..k as u32)).collect();
        let relabel = |v: &[u32]| -> Vec<u32> { v.iter().map(|&c| perm[c as usize] as u32).collect() };
        let mut cm = ConfusionMatrix::new(k).unwrap();
        cm.accumulate(&map(10, 10, k, p.clone()), &map(10, 10, k, t.clone())).unwrap();
        let mut cm2 = ConfusionMatrix::new(k).unwrap();
        cm2.accumulate(&map(10, 10, k, relabel(&p)), &map(10, 10, k, relabel(&t))).unwrap();
        let (a, b) = (iou(&cm), iou(&cm2));
        for c in 0..k {
            assert_eq!(a.per_class[c], b.per_class[perm[c]]);
        }
        assert!((a.mean.unwrap() - b.mean.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn iou_values_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let k = rng.gen_range(2..6);
            let mut cm = ConfusionMatrix::new(k).unwrap();
            for v in &mut cm.counts {
                *v = rng.gen_range(0..50);
            }
            for v in iou(&cm).per_class.iter().flatten() {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn shape_and_range_violations_are_rejected() {
        let mut cm = ConfusionMatrix::new(3).unwrap();
        let a = map(2, 2, 3, vec![0; 4]);
        let b = map(2, 3, 3, vec![0; 6]);
        assert!(cm.accumulate(&a, &b).is_err());
        // 5 classes in the maps, only 3 in the matrix
        let wide = map(2, 2, 5, vec![4, 0, 0, 0]);
        let ok = map(2, 2, 5, vec![0; 4]);
        let err = cm.accumulate(&ok, &wide).unwrap_err();
        assert!(err.to_string().contains("truth 4"), "{err}");
        let err = cm.accumulate(&wide, &ok).unwrap_err();
        assert!(err.to_string().contains("prediction 4"), "{err}");
        let other = ConfusionMatrix::new(4).unwrap();
        assert!(cm.merge(&other).is_err());
    }

    #[test]
    fn csv_lists_every_class_then_the_mean() {
        let mut cm = ConfusionMatrix::new(3).unwrap();
        cm.counts = vec![4, 0, 0, 0, 6, 0, 0, 0, 0];
        let r = iou(&cm);
        let names = vec!["sky".to_string(), "road".to_string(), "car".to_string()];
        let csv = r.csv(&names);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,iou");
        assert_eq!(lines[1], "sky,1.000000");
        assert_eq!(lines[2], "road,1.000000");
        assert_eq!(lines[3], "car,undefined");
        assert_eq!(lines[4], "mean,1.000000");
        let table = r.table(&names);
        assert!(table.contains("mIoU"));
        assert!(table.contains("100.0"));
    }
}
