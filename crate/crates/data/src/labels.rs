//! Per-pixel class maps and the palettes that render them.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use tinyseg_core::error::{Error, Result};
use tinyseg_core::tensor::Tensor;

/// Label value excluded from losses and metrics.
pub const DEFAULT_IGNORE: u32 = 255;

/// H x W class indices with an ignore value. Every non-ignored entry is
/// strictly below the class count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    ignore: u32,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        ignore: u32,
        data: Vec<u32>,
    ) -> Result<LabelMap> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty label map {height}x{width}")));
        }
        if classes == 0 {
            return Err(Error::config("a label map needs at least one class"));
        }
        if (ignore as usize) < classes {
            return Err(Error::config(format!(
                "ignore value {ignore} collides with the {classes}-class range"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} label values for a {height}x{width} map",
                data.len()
            )));
        }
        for (i, &v) in data.iter().enumerate() {
            if v != ignore && v as usize >= classes {
                return Err(Error::data(format!(
                    "label {v} at pixel ({}, {}) out of range for {classes} classes",
                    i % width,
                    i / width,
                )));
            }
        }
        Ok(LabelMap { height, width, classes, ignore, data })
    }

    pub fn filled(
        height: usize,
        width: usize,
        classes: usize,
        ignore: u32,
        value: u32,
    ) -> Result<LabelMap> {
        LabelMap::new(height, width, classes, ignore, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ignore(&self) -> u32 {
        self.ignore
    }

    /// Row-major values, `y * width + x`.
    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }
}

/// One RGB triple per class plus a distinct color for ignored pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
    ignore_color: [u8; 3],
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>, ignore_color: [u8; 3]) -> Result<Palette> {
        if colors.is_empty() {
            return Err(Error::config("a palette needs at least one color"));
        }
        let mut seen = BTreeSet::new();
        for c in colors.iter().chain(std::iter::once(&ignore_color)) {
            if !seen.insert(*c) {
                return Err(Error::config(format!(
                    "palette color ({}, {}, {}) appears twice",
                    c[0], c[1], c[2]
                )));
            }
        }
        Ok(Palette { colors, ignore_color })
    }

    /// Evenly spaced hues at full saturation; class 0 is a dark gray so the
    /// background stays visually distinct, ignored pixels render black.
    pub fn default_for(classes: usize) -> Palette {
        let mut colors = vec![[64, 64, 64]];
        for i in 1..classes {
            let hue = (i - 1) as f32 * 360.0 / (classes.max(2) - 1) as f32;
            colors.push(hsv_byte(hue, 0.85, 0.95));
        }
        Palette::new(colors, [0, 0, 0]).expect("spaced hues are distinct")
    }

    pub fn classes(&self) -> usize {
        self.colors.len()
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    pub fn ignore_color(&self) -> [u8; 3] {
        self.ignore_color
    }
}

fn hsv_byte(hue: f32, s: f32, v: f32) -> [u8; 3] {
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let byte = |f: f32| ((f + m) * 255.0).round() as u8;
    [byte(r), byte(g), byte(b)]
}

/// Exact palette lookup per pixel into a `[3, H, W]` image in `[0, 1]`.
pub fn colorize(labels: &LabelMap, palette: &Palette) -> Result<Tensor> {
    let (h, w) = (labels.height(), labels.width());
    let mut out = vec![0.0f32; 3 * h * w];
    for (i, &v) in labels.data().iter().enumerate() {
        let rgb = if v == labels.ignore() {
            palette.ignore_color()
        } else {
            palette.color(v as usize).ok_or_else(|| {
                Error::data(format!(
                    "class {v} has no entry in a {}-color palette",
                    palette.classes()
                ))
            })?
        };
        for (c, &byte) in rgb.iter().enumerate() {
            out[c * h * w + i] = byte as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Inverse of [`colorize`]: maps each pixel color back to its class. Colors
/// not in the palette are rejected, so `labels_from_colors(colorize(m))`
/// reproduces `m` exactly.
pub fn labels_from_colors(img: &Tensor, palette: &Palette, ignore: u32) -> Result<LabelMap> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(format!("expected a [3, H, W] image, got {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut lookup: BTreeMap<[u8; 3], u32> = BTreeMap::new();
    for class in 0..palette.classes() {
        lookup.insert(palette.color(class).expect("class in range"), class as u32);
    }
    lookup.insert(palette.ignore_color(), ignore);
    let d = img.data();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let rgb = [
            (d[i].clamp(0.0, 1.0) * 255.0).round() as u8,
            (d[h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8,
            (d[2 * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8,
        ];
        match lookup.get(&rgb) {
            Some(&class) => out.push(class),
            None => {
                return Err(Error::data(format!(
                    "color ({}, {}, {}) at pixel ({}, {}) is not in the palette",
                    rgb[0],
                    rgb[1],
                    rgb[2],
                    i % w,
                    i / w,
                )))
            }
        }
    }
    LabelMap::new(h, w, palette.classes(), ignore, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_labels_naming_the_pixel() {
        let err = LabelMap::new(2, 3, 4, 255, vec![0, 1, 2, 3, 9, 0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("label 9"), "{msg}");
        assert!(msg.contains("(1, 1)"), "{msg}");
        assert!(LabelMap::new(2, 3, 4, 255, vec![0, 1, 2, 3, 255, 0]).is_ok());
    }

    #[test]
    fn rejects_ignore_inside_class_range() {
        assert!(LabelMap::filled(2, 2, 4, 3, 0).is_err());
        assert!(LabelMap::filled(2, 2, 4, 4, 0).is_ok());
    }

    #[test]
    fn single_class_map_colorizes_to_a_solid_color() {
        let m = LabelMap::filled(3, 2, 3, 255, 2).unwrap();
        let p = Palette::default_for(3);
        let img = colorize(&m, &p).unwrap();
        let rgb = p.color(2).unwrap();
        for i in 0..6 {
            for c in 0..3 {
                assert_eq!(img.data()[c * 6 + i], rgb[c] as f32 / 255.0);
            }
        }
    }

    #[test]
    fn ignored_pixels_take_the_ignore_color() {
        let m = LabelMap::new(1, 2, 2, 255, vec![1, 255]).unwrap();
        let p = Palette::default_for(2);
        let img = colorize(&m, &p).unwrap();
        let ig = p.ignore_color();
        for c in 0..3 {
            assert_eq!(img.data()[c * 2 + 1], ig[c] as f32 / 255.0);
        }
    }

    #[test]
    fn colorize_then_lookup_is_the_identity() {
        // exhaustive over a small random-ish map covering every class
        let k = 7;
        let data: Vec<u32> =
            (0..48).map(|i| if i % 9 == 8 { 255 } else { (i * 5 % k) as u32 }).collect();
        let m = LabelMap::new(6, 8, k, 255, data).unwrap();
        let p = Palette::default_for(k);
        let img = colorize(&m, &p).unwrap();
        let back = labels_from_colors(&img, &p, 255).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_class_and_unknown_color_are_rejected() {
        let m = LabelMap::filled(2, 2, 5, 255, 4).unwrap();
        let p = Palette::default_for(3);
        assert!(colorize(&m, &p).is_err());

        let img = Tensor::from_vec(&[3, 1, 1], vec![0.5, 0.5, 0.5]).unwrap();
        let err = labels_from_colors(&img, &p, 255).unwrap_err();
        assert!(err.to_string().contains("not in the palette"));
    }

    #[test]
    fn default_palettes_have_distinct_colors() {
        for k in 1..=32 {
            let p = Palette::default_for(k);
            assert_eq!(p.classes(), k);
        }
    }

    #[test]
    fn duplicate_palette_colors_are_rejected() {
        let err = Palette::new(vec![[1, 2, 3], [1, 2, 3]], [0, 0, 0]).unwrap_err();
        assert!(err.to_string().contains("appears twice"));
        assert!(Palette::new(vec![[1, 2, 3]], [1, 2, 3]).is_err());
    }
}
