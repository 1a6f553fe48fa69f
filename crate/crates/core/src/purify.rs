//! Subdomain style purification: every member of a subdomain is
//! histogram-matched to the subdomain's mean LAB histograms.

use alloc::vec::Vec;

use crate::color::{self, mean_histograms, StyleDescriptor, StyleTriple, MATCH_LEVELS};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::separate::SubdomainPartition;

/// A purified subdomain. `style` comes from the original members.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifiedSubdomain {
    pub index: usize,
    pub style: StyleTriple,
    pub members: Vec<Image>,
}

/// Mean histograms of the subdomain members.
pub fn standard_style(images: &[Image], bins: usize) -> Result<StyleTriple> {
    mean_histograms(images, bins)
}

/// Histogram-matches every image to `style` in LAB and converts back to RGB.
pub fn purify(images: &[Image], style: &StyleTriple) -> Result<Vec<Image>> {
    images
        .iter()
        .map(|img| {
            let lab = color::rgb_to_lab(img);
            Ok(color::lab_to_rgb(&color::histogram_match(&lab, style)?))
        })
        .collect()
}

/// Mean squared descriptor distance to the descriptor centroid.
pub fn intra_style_variance(images: &[Image], bins: usize) -> Result<f64> {
    if images.len() < 2 {
        return Err(Error::TooFewImages { needed: 2, got: images.len() });
    }
    let descs: Vec<StyleDescriptor> = images.iter().map(|i| color::style_descriptor(i, bins)).collect();
    Ok(descriptor_variance(&descs))
}

pub fn descriptor_variance(descs: &[StyleDescriptor]) -> f64 {
    let dim = descs[0].len();
    let n = descs.len() as f64;
    let mut centroid = alloc::vec![0.0; dim];
    for d in descs {
        for (c, v) in centroid.iter_mut().zip(d.as_slice()) {
            *c += v / n;
        }
    }
    let centroid = StyleDescriptor::from_vec(centroid);
    descs.iter().map(|d| {
        let e = d.distance(&centroid);
        e * e
    }).sum::<f64>()
        / n
}

/// Builds the standard style of every cluster from the original images, then
/// purifies each cluster against its own style.
pub fn purify_partition(images: &[Image], partition: &SubdomainPartition) -> Result<Vec<PurifiedSubdomain>> {
    if images.len() != partition.len() {
        return Err(Error::DimensionMismatch(alloc::format!(
            "{} images for a partition of {}",
            images.len(),
            partition.len()
        )));
    }
    (0..partition.k())
        .map(|m| {
            let originals: Vec<Image> = partition.members(m).into_iter().map(|i| images[i].clone()).collect();
            let style = standard_style(&originals, MATCH_LEVELS)?;
            let members = purify(&originals, &style)?;
            Ok(PurifiedSubdomain { index: m, style, members })
        })
        .collect()
}
