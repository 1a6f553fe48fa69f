//! Bidirectional photometric mixing.
//!
//! Source to target pastes a ClassMix selection of source classes onto a
//! purified target image after matching the pasted pixels to the subdomain
//! style. Target to source pastes a CutMix box of the target image onto the
//! source image after matching the box to the source image's own histograms.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::color::{self, StyleTriple};
use crate::error::{Error, Result};
use crate::image::{check_same_size, BinaryMask, Image, LabelMap, IGNORE};
use crate::math;
use crate::rng;

/// Which mixing equation produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixDirection {
    SourceToTarget,
    TargetToSource,
}

impl MixDirection {
    pub fn tag(self) -> &'static str {
        match self {
            MixDirection::SourceToTarget => "s2t",
            MixDirection::TargetToSource => "t2s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Provenance {
    pub source_id: usize,
    pub target_id: usize,
    pub mask_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSample {
    pub image: Image,
    pub label: LabelMap,
    pub direction: MixDirection,
    pub provenance: Provenance,
}

/// Picks `⌈P/2⌉` of the `P` present classes uniformly at random.
pub fn select_classes<R: Rng + ?Sized>(present: &[u8], rng: &mut R) -> Vec<u8> {
    let mut pool = present.to_vec();
    let take = pool.len().div_ceil(2);
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool.sort_unstable();
    pool
}

/// Mask that is 1 exactly where `label` holds one of `classes`.
pub fn class_mask(label: &LabelMap, classes: &[u8]) -> BinaryMask {
    let mut table = [false; 256];
    for &c in classes {
        table[c as usize] = true;
    }
    table[IGNORE as usize] = false;
    let bits = label.data().iter().map(|&v| table[v as usize]).collect();
    BinaryMask::new(label.width(), label.height(), bits).expect("label dimensions")
}

/// ClassMix mask `Ψ` over a source label map.
pub fn classmix_mask<R: Rng + ?Sized>(label: &LabelMap, rng: &mut R) -> Result<BinaryMask> {
    let present = label.present_classes();
    if present.is_empty() {
        return Err(Error::EmptyLabel);
    }
    Ok(class_mask(label, &select_classes(&present, rng)))
}

/// CutMix box parameters: `η ~ U(0,1)`, centre `(d_x, d_y)` uniform over the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutBox {
    pub eta: f64,
    pub center_x: f64,
    pub center_y: f64,
}

impl CutBox {
    pub fn sample<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Self {
        let eta = rng::unit(rng);
        let center_x = rng::unit(rng) * width as f64;
        let center_y = rng::unit(rng) * height as f64;
        Self { eta, center_x, center_y }
    }

    /// Half-open pixel bounds `(x0, x1, y0, y1)` after clipping. The box is
    /// `⌊W√(1−η)⌋ × ⌊H√(1−η)⌋` pixels centred on the sampled point.
    pub fn bounds(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let keep = math::sqrt((1.0 - self.eta).clamp(0.0, 1.0));
        let span = |extent: usize, center: f64| {
            let len = math::floor(extent as f64 * keep) as i64;
            let c = math::floor(center) as i64;
            let lo = c - len / 2;
            let hi = lo + len;
            (lo.clamp(0, extent as i64) as usize, hi.clamp(0, extent as i64) as usize)
        };
        let (x0, x1) = span(width, self.center_x);
        let (y0, y1) = span(height, self.center_y);
        (x0, x1, y0, y1)
    }

    pub fn mask(&self, height: usize, width: usize) -> BinaryMask {
        assert!(height > 0 && width > 0);
        let (x0, x1, y0, y1) = self.bounds(height, width);
        let mut bits = vec![false; height * width];
        for y in y0..y1 {
            bits[y * width + x0..y * width + x1].iter_mut().for_each(|b| *b = true);
        }
        BinaryMask::new(width, height, bits).expect("mask dimensions")
    }
}

/// CutMix mask `Φ`.
pub fn cutmix_mask<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> BinaryMask {
    CutBox::sample(height, width, rng).mask(height, width)
}

/// Matches the LAB histograms of the masked pixels to `target`; pixels outside
/// the mask keep their original bytes.
pub fn photometric_region_transform(img: &Image, mask: &BinaryMask, target: &StyleTriple) -> Result<Image> {
    check_same_size(img, mask, "region transform")?;
    let lab = color::rgb_to_lab(img);
    let matched = color::region_match(&lab, mask, target)?;
    let mut out = img.clone();
    for (i, (&on, p)) in mask.bits().iter().zip(matched.pixels()).enumerate() {
        if on {
            out.set_pixel(i, color::lab_to_srgb(*p));
        }
    }
    Ok(out)
}

fn composite(fg: &Image, fg_label: &LabelMap, bg: &Image, bg_label: &LabelMap, mask: &BinaryMask) -> (Image, LabelMap) {
    let mut image = bg.clone();
    let mut label = bg_label.clone();
    for (i, &on) in mask.bits().iter().enumerate() {
        if on {
            image.set_pixel(i, fg.pixel(i));
            label.data_mut()[i] = fg_label.get(i);
        }
    }
    (image, label)
}

fn check_all(x_s: &Image, y_s: &LabelMap, x_t: &Image, y_t: &LabelMap, mask: &BinaryMask) -> Result<()> {
    check_same_size(x_s, y_s, "source image vs label")?;
    check_same_size(x_s, x_t, "source vs target image")?;
    check_same_size(x_t, y_t, "target image vs pseudo-label")?;
    check_same_size(x_s, mask, "image vs mask")
}

/// `x_ψ = Γ(Ψ⊙x_s) + (1−Ψ)⊙x̃_t`, `y_ψ = Ψ⊙y_s + (1−Ψ)⊙ỹ'_t`.
pub fn mix_s2t(
    x_s: &Image,
    y_s: &LabelMap,
    x_t: &Image,
    pseudo_t: &LabelMap,
    psi: &BinaryMask,
    target_style: &StyleTriple,
    provenance: Provenance,
) -> Result<MixedSample> {
    check_all(x_s, y_s, x_t, pseudo_t, psi)?;
    let (image, label) = if psi.is_all_zero() {
        (x_t.clone(), pseudo_t.clone())
    } else {
        let moved = photometric_region_transform(x_s, psi, target_style)?;
        composite(&moved, y_s, x_t, pseudo_t, psi)
    };
    Ok(MixedSample { image, label, direction: MixDirection::SourceToTarget, provenance })
}

/// `x_φ = Δ(Φ⊙x̃_t) + (1−Φ)⊙x_s`, `y_φ = Φ⊙ỹ'_t + (1−Φ)⊙y_s`.
pub fn mix_t2s(
    x_s: &Image,
    y_s: &LabelMap,
    x_t: &Image,
    pseudo_t: &LabelMap,
    phi: &BinaryMask,
    source_style: &StyleTriple,
    provenance: Provenance,
) -> Result<MixedSample> {
    check_all(x_s, y_s, x_t, pseudo_t, phi)?;
    let (image, label) = if phi.is_all_zero() {
        (x_s.clone(), y_s.clone())
    } else {
        let moved = photometric_region_transform(x_t, phi, source_style)?;
        composite(&moved, pseudo_t, x_s, y_s, phi)
    };
    Ok(MixedSample { image, label, direction: MixDirection::TargetToSource, provenance })
}

/// Post-mix augmentation switches and magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub jitter: bool,
    pub blur: bool,
    pub flip_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub blur_prob: f64,
    pub blur_sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            jitter: true,
            blur: true,
            flip_prob: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            blur_prob: 0.5,
            blur_sigma_max: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { flip: false, jitter: false, blur: false, ..Self::default() }
    }
}

/// Brightness and contrast jitter: `v' = ((v − μ)·c + μ)·b`, `μ` the mean intensity.
pub fn color_jitter(img: &Image, brightness: f64, contrast: f64) -> Image {
    let data = img.data();
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
    let out = data
        .iter()
        .map(|&v| {
            let x = ((v as f64 - mean) * contrast + mean) * brightness;
            math::round(x).clamp(0.0, 255.0) as u8
        })
        .collect();
    Image::new(img.width(), img.height(), out).expect("same dimensions")
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let radius = math::ceil(3.0 * sigma).max(0.0) as usize;
    if radius == 0 || sigma <= 0.0 {
        return img.clone();
    }
    let weights: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            math::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let norm: f64 = weights.iter().sum();
    let (w, h) = (img.width(), img.height());
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let xx = (x as i64 + k as i64 - radius as i64).clamp(0, w as i64 - 1) as usize;
                    acc += wt * src[(y * w + xx) * 3 + c];
                }
                tmp[(y * w + x) * 3 + c] = acc / norm;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let yy = (y as i64 + k as i64 - radius as i64).clamp(0, h as i64 - 1) as usize;
                    acc += wt * tmp[(yy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = math::round(acc / norm).clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::new(w, h, out).expect("same dimensions")
}

/// Flip (image and label jointly), colour jitter and blur (image only).
pub fn augment<R: Rng + ?Sized>(sample: &MixedSample, rng: &mut R, cfg: &AugmentConfig) -> MixedSample {
    let mut out = sample.clone();
    // Draws happen unconditionally so toggling one augmentation does not
    // shift the randomness of the others.
    let flip_draw = rng::unit(rng);
    let b = 1.0 + cfg.brightness * (2.0 * rng::unit(rng) - 1.0);
    let c = 1.0 + cfg.contrast * (2.0 * rng::unit(rng) - 1.0);
    let blur_draw = rng::unit(rng);
    let sigma = rng::unit(rng) * cfg.blur_sigma_max;
    if cfg.flip && flip_draw < cfg.flip_prob {
        out.image = out.image.flip_horizontal();
        out.label = out.label.flip_horizontal();
    }
    if cfg.jitter {
        out.image = color_jitter(&out.image, b, c);
    }
    if cfg.blur && blur_draw < cfg.blur_prob {
        out.image = gaussian_blur(&out.image, sigma);
    }
    out
}
