//! Training-time augmentation: joint resize/crop/flip, multimodal soft random
//! erasing (MS-REA) and modality masking.

use ::image::{imageops, RgbImage};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corruptions::{ImageBuf, Modality};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("augment config: {0}")]
    Config(String),
    #[error("pair modalities must be (visible, infrared)")]
    Modalities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub msrea_prob: f64,
    pub msrea_area: (f64, f64),
    pub msrea_aspect: (f64, f64),
    pub msrea_pixel_fraction: f64,
    pub mask_prob: f64,
    pub crop_pad: usize,
    pub flip_prob: f64,
    pub target_hw: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            msrea_prob: 0.5,
            msrea_area: (0.02, 0.4),
            msrea_aspect: (0.3, 3.33),
            msrea_pixel_fraction: 0.5,
            mask_prob: 0.125,
            crop_pad: 10,
            flip_prob: 0.5,
            target_hw: (288, 144),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let err = |m: &str| Err(AugmentError::Config(m.to_string()));
        for (name, p) in [
            ("msrea_prob", self.msrea_prob),
            ("mask_prob", self.mask_prob),
            ("flip_prob", self.flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(&format!("{name} = {p} outside [0, 1]"));
            }
        }
        let (lo, hi) = self.msrea_area;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return err("msrea_area needs 0 < min <= max < 1");
        }
        let (lo, hi) = self.msrea_aspect;
        if !(lo > 0.0 && lo <= hi) {
            return err("msrea_aspect needs 0 < min <= max");
        }
        if !(self.msrea_pixel_fraction > 0.0 && self.msrea_pixel_fraction <= 1.0) {
            return err("msrea_pixel_fraction outside (0, 1]");
        }
        if self.target_hw.0 == 0 || self.target_hw.1 == 0 {
            return err("target_hw must be positive");
        }
        Ok(())
    }
}

/// A visible image and its infrared partner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub visible: ImageBuf,
    pub infrared: ImageBuf,
}

impl Pair {
    pub fn new(visible: ImageBuf, infrared: ImageBuf) -> Result<Self, AugmentError> {
        if visible.modality() != Modality::Visible || infrared.modality() != Modality::Infrared {
            return Err(AugmentError::Modalities);
        }
        Ok(Self { visible, infrared })
    }

    pub fn get(&self, m: Modality) -> &ImageBuf {
        match m {
            Modality::Visible => &self.visible,
            Modality::Infrared => &self.infrared,
        }
    }

    fn get_mut(&mut self, m: Modality) -> &mut ImageBuf {
        match m {
            Modality::Visible => &mut self.visible,
            Modality::Infrared => &mut self.infrared,
        }
    }
}

fn rebuild(h: usize, w: usize, data: Vec<u8>, modality: Modality) -> ImageBuf {
    ImageBuf::from_raw(h, w, data, modality).expect("dimensions preserved")
}

/// Bilinear resize. Gray inputs stay gray because every channel is filtered
/// identically.
pub fn resize(img: &ImageBuf, h: usize, w: usize) -> ImageBuf {
    if (img.height(), img.width()) == (h, w) {
        return img.clone();
    }
    let src = RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .expect("valid buffer");
    let out = imageops::resize(&src, w as u32, h as u32, imageops::FilterType::Triangle);
    rebuild(h, w, out.into_raw(), img.modality())
}

/// Zero-pads by `pad` on every side, crops the original size at offset
/// `(dy, dx)` into the padded image, then optionally mirrors horizontally.
pub fn crop_flip(img: &ImageBuf, pad: usize, dy: usize, dx: usize, flip: bool) -> ImageBuf {
    let (h, w) = (img.height(), img.width());
    let mut data = vec![0u8; h * w * 3];
    for y in 0..h {
        let sy = (y + dy) as isize - pad as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = (x + dx) as isize - pad as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let tx = if flip { w - 1 - x } else { x };
            let px = img.pixel(sy as usize, sx as usize);
            data[(y * w + tx) * 3..][..3].copy_from_slice(&px);
        }
    }
    rebuild(h, w, data, img.modality())
}

/// Resize to the target size, then one crop offset and one flip decision
/// shared by both modalities.
pub fn base_preprocess<R: Rng + ?Sized>(pair: &Pair, cfg: &AugmentConfig, rng: &mut R) -> Pair {
    let (h, w) = cfg.target_hw;
    let pad = cfg.crop_pad;
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    let flip = rng.random_bool(cfg.flip_prob);
    let go = |img: &ImageBuf| crop_flip(&resize(img, h, w), pad, dy, dx, flip);
    Pair {
        visible: go(&pair.visible),
        infrared: go(&pair.infrared),
    }
}

/// Resize only, for evaluation.
pub fn eval_preprocess(pair: &Pair, cfg: &AugmentConfig) -> Pair {
    let (h, w) = cfg.target_hw;
    Pair {
        visible: resize(&pair.visible, h, w),
        infrared: resize(&pair.infrared, h, w),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn center(&self) -> (f64, f64) {
        (self.y as f64 + self.h as f64 / 2.0, self.x as f64 + self.w as f64 / 2.0)
    }
}

/// Random-erasing rectangle: area and aspect ratio drawn uniformly within the
/// bounds, retried until it fits.
fn sample_rect<R: Rng + ?Sized>(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut R) -> Option<Rect> {
    for _ in 0..100 {
        let area = rng.random_range(cfg.msrea_area.0..=cfg.msrea_area.1) * (h * w) as f64;
        let aspect = rng.random_range(cfg.msrea_aspect.0..=cfg.msrea_aspect.1);
        let rh = (area * aspect).sqrt().round() as usize;
        let rw = (area / aspect).sqrt().round() as usize;
        if rh >= 1 && rw >= 1 && rh < h && rw < w {
            return Some(Rect {
                y: rng.random_range(0..=h - rh),
                x: rng.random_range(0..=w - rw),
                h: rh,
                w: rw,
            });
        }
    }
    None
}

fn soft_erase<R: Rng + ?Sized>(img: &mut ImageBuf, rect: Rect, fraction: f64, rng: &mut R) {
    let n = rect.h * rect.w;
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let (w, modality) = (img.width(), img.modality());
    let mut data = img.data().to_vec();
    for i in index::sample(rng, n, k) {
        let (y, x) = (rect.y + i / rect.w, rect.x + i % rect.w);
        let px: [u8; 3] = match modality {
            Modality::Visible => rng.random(),
            Modality::Infrared => [rng.random(); 3],
        };
        data[(y * w + x) * 3..][..3].copy_from_slice(&px);
    }
    *img = rebuild(img.height(), w, data, modality);
}

/// MS-REA. A single draw decides whether the pair is augmented; when it is,
/// each modality gets its own independently placed patch. Returns the
/// patches that were applied.
pub fn ms_rea<R: Rng + ?Sized>(pair: &mut Pair, cfg: &AugmentConfig, rng: &mut R) -> [Option<Rect>; 2] {
    let mut rects = [None, None];
    if !rng.random_bool(cfg.msrea_prob) {
        return rects;
    }
    for (slot, m) in rects.iter_mut().zip(Modality::BOTH) {
        let img = pair.get_mut(m);
        if let Some(rect) = sample_rect(img.height(), img.width(), cfg, rng) {
            soft_erase(img, rect, cfg.msrea_pixel_fraction, rng);
            *slot = Some(rect);
        }
    }
    rects
}

/// With probability `mask_prob`, blanks one modality chosen by a fair coin.
pub fn modality_mask<R: Rng + ?Sized>(pair: &mut Pair, cfg: &AugmentConfig, rng: &mut R) -> Option<Modality> {
    if !rng.random_bool(cfg.mask_prob) {
        return None;
    }
    let m = if rng.random_bool(0.5) { Modality::Visible } else { Modality::Infrared };
    let img = pair.get_mut(m);
    *img = ImageBuf::filled(img.height(), img.width(), [0; 3], m).expect("non-empty");
    Some(m)
}

/// Full training pipeline for one pair; ML-MDA adds MS-REA and masking on top
/// of the base preprocessing.
pub fn augment<R: Rng + ?Sized>(pair: &Pair, cfg: &AugmentConfig, ml_mda: bool, rng: &mut R) -> Pair {
    augment_with_mask(pair, cfg, ml_mda, rng).0
}

/// As [`augment`], also returning the modality blanked by masking.
pub fn augment_with_mask<R: Rng + ?Sized>(
    pair: &Pair,
    cfg: &AugmentConfig,
    ml_mda: bool,
    rng: &mut R,
) -> (Pair, Option<Modality>) {
    let mut out = base_preprocess(pair, cfg, rng);
    let mut masked = None;
    if ml_mda {
        ms_rea(&mut out, cfg, rng);
        masked = modality_mask(&mut out, cfg, rng);
    }
    (out, masked)
}

/// Stacks images into an `[N, 3, H, W]` tensor scaled to `[0, 1]`.
pub fn to_tensor<'a>(images: impl IntoIterator<Item = &'a ImageBuf>) -> Tensor<f32> {
    let images: Vec<&ImageBuf> = images.into_iter().collect();
    let (h, w) = images.first().map_or((0, 0), |i| (i.height(), i.width()));
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in &images {
        assert_eq!((img.height(), img.width()), (h, w), "batch images must share a size");
        for c in 0..3 {
            data.extend(img.data().chunks_exact(3).map(|p| p[c] as f32 / 255.0));
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data).expect("consistent batch")
}

#[cfg(test)]
mod tests;
