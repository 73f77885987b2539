//! Geometric augmentation applied to an image and its labels in lockstep.

use tinyseg_core::error::{Error, Result};
use tinyseg_core::tensor::Tensor;
use tinyseg_data::LabelMap;

/// Mirrors image and labels left-to-right.
pub fn flip_horizontal(img: &Tensor, labels: &LabelMap) -> Result<(Tensor, LabelMap)> {
    let (c, h, w) = image_dims(img, labels)?;
    let src = img.data();
    let mut out = vec![0.0f32; src.len()];
    for ch in 0..c {
        for y in 0..h {
            let row = ch * h * w + y * w;
            for x in 0..w {
                out[row + x] = src[row + (w - 1 - x)];
            }
        }
    }
    let mut lab = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            lab[y * w + x] = labels.get(y, w - 1 - x);
        }
    }
    Ok((
        Tensor::from_vec(&[c, h, w], out)?,
        LabelMap::new(h, w, labels.classes(), labels.ignore(), lab)?,
    ))
}

/// Cuts the `ch x cw` window whose top-left corner is `(y0, x0)` out of
/// image and labels.
pub fn crop(
    img: &Tensor,
    labels: &LabelMap,
    y0: usize,
    x0: usize,
    ch_out: usize,
    cw_out: usize,
) -> Result<(Tensor, LabelMap)> {
    let (c, h, w) = image_dims(img, labels)?;
    if ch_out == 0 || cw_out == 0 {
        return Err(Error::config("crop size must be positive"));
    }
    if y0 + ch_out > h || x0 + cw_out > w {
        return Err(Error::config(format!(
            "crop {ch_out}x{cw_out} at ({y0}, {x0}) leaves the {h}x{w} input"
        )));
    }
    let src = img.data();
    let mut out = vec![0.0f32; c * ch_out * cw_out];
    for chn in 0..c {
        for y in 0..ch_out {
            let srow = chn * h * w + (y0 + y) * w + x0;
            let drow = chn * ch_out * cw_out + y * cw_out;
            out[drow..drow + cw_out].copy_from_slice(&src[srow..srow + cw_out]);
        }
    }
    let mut lab = vec![0u32; ch_out * cw_out];
    for y in 0..ch_out {
        for x in 0..cw_out {
            lab[y * cw_out + x] = labels.get(y0 + y, x0 + x);
        }
    }
    Ok((
        Tensor::from_vec(&[c, ch_out, cw_out], out)?,
        LabelMap::new(ch_out, cw_out, labels.classes(), labels.ignore(), lab)?,
    ))
}

fn image_dims(img: &Tensor, labels: &LabelMap) -> Result<(usize, usize, usize)> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("expected a [c, h, w] image, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h != labels.height() || w != labels.width() {
        return Err(Error::shape(format!(
            "image is {h}x{w} but labels are {}x{}",
            labels.height(),
            labels.width()
        )));
    }
    Ok((c, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (Tensor, LabelMap) {
        // 1 channel, 2x3: values encode their own coordinates
        let img = Tensor::from_vec(
            &[1, 2, 3],
            vec![0.0, 0.1, 0.2, 1.0, 1.1, 1.2],
        )
        .unwrap();
        let lab = LabelMap::new(2, 3, 6, 255, vec![0, 1, 2, 3, 4, 5]).unwrap();
        (img, lab)
    }

    #[test]
    fn flip_reverses_each_row() {
        let (img, lab) = tiny();
        let (fi, fl) = flip_horizontal(&img, &lab).unwrap();
        assert_eq!(fi.data(), &[0.2, 0.1, 0.0, 1.2, 1.1, 1.0]);
        assert_eq!(fl.data(), &[2, 1, 0, 5, 4, 3]);
    }

    #[test]
    fn double_flip_is_the_identity() {
        let (img, lab) = tiny();
        let (fi, fl) = flip_horizontal(&img, &lab).unwrap();
        let (ri, rl) = flip_horizontal(&fi, &fl).unwrap();
        assert_eq!(ri.data(), img.data());
        assert_eq!(rl, lab);
    }

    #[test]
    fn crop_takes_the_exact_window() {
        let (img, lab) = tiny();
        let (ci, cl) = crop(&img, &lab, 1, 1, 1, 2).unwrap();
        assert_eq!(ci.shape(), &[1, 1, 2]);
        assert_eq!(ci.data(), &[1.1, 1.2]);
        assert_eq!(cl.data(), &[4, 5]);
    }

    #[test]
    fn full_frame_crop_is_the_identity() {
        let (img, lab) = tiny();
        let (ci, cl) = crop(&img, &lab, 0, 0, 2, 3).unwrap();
        assert_eq!(ci.data(), img.data());
        assert_eq!(cl, lab);
    }

    #[test]
    fn out_of_bounds_crop_is_rejected() {
        let (img, lab) = tiny();
        assert!(crop(&img, &lab, 1, 0, 2, 3).is_err());
        assert!(crop(&img, &lab, 0, 2, 2, 2).is_err());
        assert!(crop(&img, &lab, 0, 0, 0, 1).is_err());
    }

    #[test]
    fn mismatched_label_size_is_rejected() {
        let (img, _) = tiny();
        let other = LabelMap::new(3, 3, 6, 255, vec![0; 9]).unwrap();
        assert!(flip_horizontal(&img, &other).is_err());
    }
}
