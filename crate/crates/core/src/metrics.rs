//! Segmentation and clustering metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{check_same_size, LabelMap, IGNORE};

/// `C × C` pixel confusion matrix, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Accumulates one prediction; ignored or out-of-range ground truth is skipped.
    pub fn add(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        check_same_size(pred, truth, "confusion matrix")?;
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            if t == IGNORE || t as usize >= self.classes {
                continue;
            }
            let p = if (p as usize) < self.classes { p as usize } else { continue };
            self.counts[t as usize * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn gt_pixels(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn pred_pixels(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` for classes absent from the ground truth.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let gt = self.gt_pixels(class);
        if gt == 0 {
            return None;
        }
        let union = gt + self.pred_pixels(class) - tp;
        Some(tp as f64 / union as f64)
    }

    pub fn ious(&self) -> Vec<Option<f64>> {
        (0..self.classes).map(|c| self.iou(c)).collect()
    }

    /// Mean over classes present in the ground truth.
    pub fn mean_iou(&self) -> Result<f64> {
        let defined: Vec<f64> = self.ious().into_iter().flatten().collect();
        if defined.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = (0..ka).map(|i| choose2((0..kb).map(|j| table[i * kb + j]).sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = choose2(a.len() as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
