//! CIELAB conversion (sRGB companding, D65), per-channel histograms, style
//! descriptors and CDF histogram matching.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::math;

/// Uniform levels per LAB channel used for matching.
pub const MATCH_LEVELS: usize = 256;
/// Default bins per channel for style descriptors.
pub const DESCRIPTOR_BINS: usize = 64;

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

/// LAB channel tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    L,
    A,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::L, Channel::A, Channel::B];

    /// Declared value range `[lo, hi]`.
    pub fn range(self) -> (f64, f64) {
        match self {
            Channel::L => (0.0, 100.0),
            Channel::A | Channel::B => (-128.0, 127.0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::L => "l",
            Channel::A => "a",
            Channel::B => "b",
        }
    }

    /// Bin holding `value` among `bins` equal-width bins over the channel range.
    #[inline]
    pub fn level(self, value: f64, bins: usize) -> usize {
        let (lo, hi) = self.range();
        let t = (value - lo) / (hi - lo) * bins as f64;
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(bins - 1)
        }
    }

    #[inline]
    pub fn bin_center(self, level: usize, bins: usize) -> f64 {
        let (lo, hi) = self.range();
        lo + (level as f64 + 0.5) * (hi - lo) / bins as f64
    }

    fn clamp(self, v: f64) -> f64 {
        let (lo, hi) = self.range();
        v.clamp(lo, hi)
    }
}

/// Per-pixel `(l, a, b)` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::DimensionMismatch(alloc::format!(
                "{} LAB pixels for {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }
}

struct DecodeTable([f64; 256]);

impl DecodeTable {
    fn new() -> Self {
        let mut table = [0.0; 256];
        for (i, slot) in table.iter_mut().enumerate() {
            *slot = srgb_decode(i as f64 / 255.0);
        }
        Self(table)
    }

    #[inline]
    fn lab(&self, rgb: [u8; 3]) -> [f64; 3] {
        linear_to_lab([self.0[rgb[0] as usize], self.0[rgb[1] as usize], self.0[rgb[2] as usize]])
    }
}

#[inline]
fn srgb_decode(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        math::powf((c + 0.055) / 1.055, 2.4)
    }
}

#[inline]
fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * math::powf(c, 1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPSILON {
        math::cbrt(t)
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / KAPPA
    }
}

/// Converts one sRGB triple to CIELAB, clamped to the declared channel ranges.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    linear_to_lab(rgb.map(|c| srgb_decode(c as f64 / 255.0)))
}

fn linear_to_lab(lin: [f64; 3]) -> [f64; 3] {
    let mut f = [0.0; 3];
    for (row, (m, w)) in RGB_TO_XYZ.iter().zip(WHITE).enumerate() {
        let v = m[0] * lin[0] + m[1] * lin[1] + m[2] * lin[2];
        f[row] = lab_f(v / w);
    }
    [
        Channel::L.clamp(116.0 * f[1] - 16.0),
        Channel::A.clamp(500.0 * (f[0] - f[1])),
        Channel::B.clamp(200.0 * (f[1] - f[2])),
    ]
}

/// Converts one CIELAB triple back to 8-bit sRGB, clamping out-of-gamut values.
pub fn lab_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [lab_f_inv(fx) * WHITE[0], lab_f_inv(fy) * WHITE[1], lab_f_inv(fz) * WHITE[2]];
    let mut out = [0u8; 3];
    for (o, m) in out.iter_mut().zip(XYZ_TO_RGB.iter()) {
        let lin = m[0] * xyz[0] + m[1] * xyz[1] + m[2] * xyz[2];
        let v = srgb_encode(lin.clamp(0.0, 1.0)) * 255.0;
        *o = math::round(v).clamp(0.0, 255.0) as u8;
    }
    out
}

pub fn rgb_to_lab(img: &Image) -> LabImage {
    LabImage {
        width: img.width(),
        height: img.height(),
        pixels: {
            let table = DecodeTable::new();
            img.pixels().map(|p| table.lab(p)).collect()
        },
    }
}

pub fn lab_to_rgb(img: &LabImage) -> Image {
    let mut data = Vec::with_capacity(img.pixels.len() * 3);
    for &p in &img.pixels {
        data.extend_from_slice(&lab_to_srgb(p));
    }
    Image::new(img.width, img.height, data).expect("dimensions carried over")
}

/// Counts over equal-width bins spanning one channel's range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    channel: Channel,
    counts: Vec<f64>,
}

impl Histogram {
    pub fn new(channel: Channel, counts: Vec<f64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::InvalidConfig { field: "bins", message: "need at least 2 bins".into() });
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidConfig {
                field: "counts",
                message: "histogram counts must be finite and non-negative".into(),
            });
        }
        Ok(Self { channel, counts })
    }

    pub fn zeros(channel: Channel, bins: usize) -> Self {
        assert!(bins >= 2, "histograms need at least 2 bins");
        Self { channel, counts: vec![0.0; bins] }
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn mass(&self) -> f64 {
        self.counts.iter().sum()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let b = self.channel.level(value, self.counts.len());
        self.counts[b] += 1.0;
    }

    /// Copy scaled to unit mass; zero-mass histograms stay zero.
    pub fn normalized(&self) -> Self {
        let m = self.mass();
        let counts = if m > 0.0 { self.counts.iter().map(|c| c / m).collect() } else { self.counts.clone() };
        Self { channel: self.channel, counts }
    }

    /// Cumulative distribution at the upper edge of each bin.
    pub fn cdf(&self) -> Vec<f64> {
        let m = self.mass();
        let mut acc = 0.0;
        self.counts
            .iter()
            .map(|c| {
                acc += c;
                acc / m
            })
            .collect()
    }

    /// Merges adjacent bins down to `bins`, which must divide the current count.
    pub fn rebin(&self, bins: usize) -> Result<Self> {
        if bins < 2 || self.bins() % bins != 0 {
            return Err(Error::InvalidConfig {
                field: "bins",
                message: alloc::format!("cannot rebin {} into {bins}", self.bins()),
            });
        }
        let f = self.bins() / bins;
        let counts = self.counts.chunks_exact(f).map(|c| c.iter().sum()).collect();
        Ok(Self { channel: self.channel, counts })
    }
}

pub fn channel_histogram(img: &LabImage, channel: Channel, bins: usize) -> Histogram {
    let mut h = Histogram::zeros(channel, bins);
    let c = channel.index();
    for p in &img.pixels {
        h.add(p[c]);
    }
    h
}

/// One histogram per LAB channel, all with the same bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleTriple {
    channels: [Histogram; 3],
}

impl StyleTriple {
    pub fn new(l: Histogram, a: Histogram, b: Histogram) -> Result<Self> {
        if l.bins() != a.bins() || a.bins() != b.bins() {
            return Err(Error::InvalidConfig { field: "bins", message: "channel bin counts differ".into() });
        }
        if l.channel != Channel::L || a.channel != Channel::A || b.channel != Channel::B {
            return Err(Error::InvalidConfig { field: "channel", message: "channels out of order".into() });
        }
        Ok(Self { channels: [l, a, b] })
    }

    pub fn of_lab(img: &LabImage, bins: usize) -> Self {
        Self { channels: Channel::ALL.map(|c| channel_histogram(img, c, bins)) }
    }

    pub fn of_image(img: &Image, bins: usize) -> Self {
        Self::of_lab(&rgb_to_lab(img), bins)
    }

    /// Histograms of the masked pixels only.
    pub fn of_region(img: &LabImage, mask: &BinaryMask, bins: usize) -> Self {
        let mut channels = Channel::ALL.map(|c| Histogram::zeros(c, bins));
        for (p, &on) in img.pixels.iter().zip(mask.bits()) {
            if on {
                for h in channels.iter_mut() {
                    h.add(p[h.channel.index()]);
                }
            }
        }
        Self { channels }
    }

    pub fn channel(&self, c: Channel) -> &Histogram {
        &self.channels[c.index()]
    }

    pub fn channels(&self) -> &[Histogram; 3] {
        &self.channels
    }

    pub fn bins(&self) -> usize {
        self.channels[0].bins()
    }

    pub fn rebin(&self, bins: usize) -> Result<Self> {
        let [l, a, b] = &self.channels;
        Ok(Self { channels: [l.rebin(bins)?, a.rebin(bins)?, b.rebin(bins)?] })
    }

    /// Normalized concatenation, the clustering feature of this style.
    pub fn descriptor(&self) -> StyleDescriptor {
        let mut v = Vec::with_capacity(3 * self.bins());
        for h in &self.channels {
            v.extend_from_slice(h.normalized().counts());
        }
        StyleDescriptor(v)
    }
}

/// `H^l ⌢ H^a ⌢ H^b` with each block L1-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleDescriptor(Vec<f64>);

impl StyleDescriptor {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.0.len() / 3
    }

    pub fn distance(&self, other: &Self) -> f64 {
        euclidean(&self.0, &other.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn style_descriptor(img: &Image, bins: usize) -> StyleDescriptor {
    StyleTriple::of_image(img, bins).descriptor()
}

/// Per-channel arithmetic mean of the member histograms (`Σ H^c / |T|`).
pub fn mean_histograms(imgs: &[Image], bins: usize) -> Result<StyleTriple> {
    if imgs.is_empty() {
        return Err(Error::EmptySubdomain);
    }
    let mut sum = Channel::ALL.map(|c| Histogram::zeros(c, bins));
    for img in imgs {
        let t = StyleTriple::of_image(img, bins);
        for (acc, h) in sum.iter_mut().zip(t.channels.iter()) {
            for (a, c) in acc.counts.iter_mut().zip(&h.counts) {
                *a += c;
            }
        }
    }
    let n = imgs.len() as f64;
    for h in sum.iter_mut() {
        for c in h.counts.iter_mut() {
            *c /= n;
        }
    }
    Ok(StyleTriple { channels: sum })
}

fn check_target(target: &StyleTriple) -> Result<()> {
    for h in &target.channels {
        if !(h.mass() > 0.0) {
            return Err(Error::DegenerateTarget { channel: h.channel.name() });
        }
    }
    Ok(())
}

/// Remaps one channel of the selected pixels so their empirical CDF follows
/// `target`. Pixels are ranked by value (ties by position); the pixel of rank
/// `r` among `n` receives the lowest target level whose CDF reaches
/// `(r + 1) / n`, written as that level's bin center.
fn match_channel(pixels: &mut [[f64; 3]], selected: &[usize], target: &Histogram) {
    let n = selected.len();
    if n == 0 {
        return;
    }
    let c = target.channel.index();
    let bins = target.bins();
    let cdf = target.cdf();
    let mut order: Vec<usize> = selected.to_vec();
    order.sort_by(|&i, &j| match pixels[i][c].total_cmp(&pixels[j][c]) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    let mut level = 0;
    for (rank, &i) in order.iter().enumerate() {
        let q = (rank + 1) as f64 / n as f64;
        while level + 1 < bins && cdf[level] < q - 1e-12 {
            level += 1;
        }
        pixels[i][c] = target.channel.bin_center(level, bins);
    }
}

/// CDF histogram matching of every channel to `target`.
pub fn histogram_match(img: &LabImage, target: &StyleTriple) -> Result<LabImage> {
    check_target(target)?;
    let mut out = img.clone();
    let all: Vec<usize> = (0..img.pixels.len()).collect();
    for h in &target.channels {
        match_channel(&mut out.pixels, &all, h);
    }
    Ok(out)
}

/// Histogram matching restricted to the pixels selected by `mask`; the rest of
/// the image is returned untouched.
pub fn region_match(img: &LabImage, mask: &BinaryMask, target: &StyleTriple) -> Result<LabImage> {
    if mask.width() != img.width || mask.height() != img.height {
        return Err(Error::DimensionMismatch("mask vs image".into()));
    }
    check_target(target)?;
    let selected: Vec<usize> = mask.bits().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if selected.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut out = img.clone();
    for h in &target.channels {
        match_channel(&mut out.pixels, &selected, h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    fn lab(w: usize, h: usize, px: Vec<[f64; 3]>) -> LabImage {
        LabImage::new(w, h, px).unwrap()
    }

    fn reference_lab(rgb: [u8; 3]) -> [f64; 3] {
        // Straight textbook evaluation with std floats.
        let dec = |c: u8| {
            let c = c as f64 / 255.0;
            if c <= 0.04045 {
                c / 12.92
            } else {
                ((c + 0.055) / 1.055).powf(2.4)
            }
        };
        let (r, g, b) = (dec(rgb[0]), dec(rgb[1]), dec(rgb[2]));
        let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
        let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
        let f = |t: f64| if t > (6.0f64 / 29.0).powi(3) { t.cbrt() } else { t / (3.0 * (6.0f64 / 29.0).powi(2)) + 4.0 / 29.0 };
        [116.0 * f(y) - 16.0, 500.0 * (f(x) - f(y)), 200.0 * (f(y) - f(z))]
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-6);
        assert!(w[1].abs() <= 0.01 && w[2].abs() <= 0.01);
        let k = srgb_to_lab([0, 0, 0]);
        assert_eq!(k, [0.0, 0.0, 0.0]);
        assert_eq!(lab_to_srgb([100.0, 0.0, 0.0]), [255, 255, 255]);
    }

    #[test]
    fn mid_gray_matches_reference() {
        let ours = srgb_to_lab([119, 119, 119]);
        let reference = reference_lab([119, 119, 119]);
        assert!((ours[0] - reference[0]).abs() < 0.05, "{ours:?} vs {reference:?}");
        for rgb in [[10u8, 200, 30], [250, 3, 128], [64, 64, 200]] {
            let (o, r) = (srgb_to_lab(rgb), reference_lab(rgb));
            for c in 0..3 {
                assert!((o[c] - r[c]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn out_of_gamut_clamps() {
        let rgb = lab_to_srgb([50.0, 127.0, 127.0]);
        // u8 cannot leave [0, 255]; check the clamp was hit rather than wrapped.
        assert_eq!(rgb[0], 255);
        assert_eq!(rgb[2], 0);
    }

    #[test]
    fn round_trip_grid() {
        for r in (0..256).step_by(17) {
            for g in (0..256).step_by(17) {
                for b in (0..256).step_by(17) {
                    let rgb = [r as u8, g as u8, b as u8];
                    let back = lab_to_srgb(srgb_to_lab(rgb));
                    for c in 0..3 {
                        assert!((back[c] as i32 - rgb[c] as i32).abs() <= 1, "{rgb:?} -> {back:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_and_two_value_histograms() {
        let img = lab(4, 4, vec![[30.0, 1.0, 2.0]; 16]);
        for bins in [2, 7, 64] {
            let h = channel_histogram(&img, Channel::L, bins);
            assert_eq!(h.counts().iter().filter(|&&c| c > 0.0).count(), 1);
            assert_eq!(h.mass(), 16.0);
        }
        let mut px = vec![[10.0, 0.0, 0.0]; 8];
        px.extend(vec![[90.0, 0.0, 0.0]; 8]);
        let h = channel_histogram(&lab(4, 4, px), Channel::L, 10);
        assert_eq!(h.counts()[1], 8.0);
        assert_eq!(h.counts()[9], 8.0);
    }

    #[test]
    fn ramp_histogram_is_flat() {
        let n = 10_000;
        let px: Vec<[f64; 3]> = (0..n).map(|i| [100.0 * (i as f64 + 0.5) / n as f64, 0.0, 0.0]).collect();
        let h = channel_histogram(&lab(100, 100, px), Channel::L, 10);
        for c in h.counts() {
            assert!((c - 1000.0).abs() <= 20.0, "{c}");
        }
    }

    #[test]
    fn four_level_matching_matches_enumeration() {
        // Levels 0..3 of a 4-bin L channel, target mass only on levels 2 and 3.
        let px: Vec<[f64; 3]> = (0..4).map(|i| [Channel::L.bin_center(i, 4), 0.0, 0.0]).collect();
        let img = lab(2, 2, px);
        let target = StyleTriple::new(
            Histogram::new(Channel::L, vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
            Histogram::new(Channel::A, vec![0.0, 0.0, 4.0, 0.0]).unwrap(),
            Histogram::new(Channel::B, vec![0.0, 0.0, 4.0, 0.0]).unwrap(),
        )
        .unwrap();
        // Oracle: source CDF at each level, lowest target level whose CDF reaches it.
        let src_cdf = [0.25, 0.5, 0.75, 1.0];
        let tgt_cdf = [0.0, 0.0, 0.5, 1.0];
        let expected: Vec<usize> =
            src_cdf.iter().map(|&q| (0..4).find(|&j| tgt_cdf[j] >= q).unwrap()).collect();
        assert_eq!(expected, vec![2, 2, 3, 3]);
        let out = histogram_match(&img, &target).unwrap();
        let got: Vec<usize> = out.pixels().iter().map(|p| Channel::L.level(p[0], 4)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn degenerate_target_rejected() {
        let img = lab(1, 2, vec![[50.0, 0.0, 0.0]; 2]);
        let mut t = StyleTriple::of_lab(&img, 8);
        t.channels[1] = Histogram::zeros(Channel::A, 8);
        assert_eq!(histogram_match(&img, &t), Err(Error::DegenerateTarget { channel: "a" }));
    }

    #[test]
    fn region_match_requires_pixels() {
        let img = lab(2, 2, vec![[50.0, 0.0, 0.0]; 4]);
        let t = StyleTriple::of_lab(&img, 8);
        assert_eq!(region_match(&img, &BinaryMask::zeros(2, 2), &t), Err(Error::EmptyMask));
    }
}
