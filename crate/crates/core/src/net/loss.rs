use alloc::vec;
use alloc::vec::Vec;

use super::{OutputGrad, PredictionMap};
use crate::error::{Error, Result};
use crate::image::{LabelMap, IGNORE};
use crate::math::{self, safe_ln};

/// Mean cross-entropy over non-ignored pixels, with its logit gradient.
pub fn cross_entropy(pred: &PredictionMap, label: &LabelMap) -> Result<(f64, OutputGrad)> {
    if pred.width != label.width() || pred.height != label.height() {
        return Err(Error::DimensionMismatch("prediction vs label".into()));
    }
    label.validate(pred.classes)?;
    let c = pred.classes;
    let valid = label.data().iter().filter(|&&v| v != IGNORE).count();
    if valid == 0 {
        return Err(Error::AllIgnored);
    }
    let scale = 1.0 / valid as f64;
    let mut grad = vec![0.0; pred.probs.len()];
    let mut loss = 0.0;
    for (p, &y) in label.data().iter().enumerate() {
        if y == IGNORE {
            continue;
        }
        let probs = &pred.probs[p * c..(p + 1) * c];
        loss -= safe_ln(probs[y as usize]);
        let g = &mut grad[p * c..(p + 1) * c];
        for k in 0..c {
            g[k] = probs[k] * scale;
        }
        g[y as usize] -= scale;
    }
    Ok((loss * scale, OutputGrad::Logits(grad)))
}

/// Which argument order the KL divergence uses; the target is always constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum KlDirection {
    /// `KL(target ‖ student)`.
    #[default]
    TargetStudent,
    /// `KL(student ‖ target)`.
    StudentTarget,
}

/// Mean per-pixel KL divergence between `student` and the fixed `target`.
pub fn kl_divergence(
    student: &PredictionMap,
    target: &PredictionMap,
    direction: KlDirection,
) -> Result<(f64, OutputGrad)> {
    student.check_shape(target)?;
    let c = student.classes;
    let n = student.pixels();
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.probs.len()];
    let mut r = vec![0.0; c];
    for p in 0..n {
        let s = &student.probs[p * c..(p + 1) * c];
        let t = &target.probs[p * c..(p + 1) * c];
        let g = &mut grad[p * c..(p + 1) * c];
        match direction {
            KlDirection::TargetStudent => {
                for k in 0..c {
                    if t[k] > 0.0 {
                        loss += t[k] * (safe_ln(t[k]) - safe_ln(s[k]));
                    }
                    g[k] = (s[k] - t[k]) * scale;
                }
            }
            KlDirection::StudentTarget => {
                let mut mean = 0.0;
                for k in 0..c {
                    r[k] = safe_ln(s[k]) - safe_ln(t[k]);
                    if s[k] > 0.0 {
                        loss += s[k] * r[k];
                    }
                    mean += s[k] * r[k];
                }
                for k in 0..c {
                    g[k] = s[k] * (r[k] - mean) * scale;
                }
            }
        }
    }
    Ok((loss * scale, OutputGrad::Logits(grad)))
}

/// Mean absolute difference over all `H·W·C` entries, with the probability
/// gradients for both arguments.
pub fn l1_consistency(a: &PredictionMap, b: &PredictionMap) -> Result<(f64, OutputGrad, OutputGrad)> {
    a.check_shape(b)?;
    let n = a.probs.len() as f64;
    let mut loss = 0.0;
    let mut ga = Vec::with_capacity(a.probs.len());
    for (&x, &y) in a.probs.iter().zip(&b.probs) {
        let d = x - y;
        loss += math::abs(d);
        ga.push(if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 });
    }
    let gb = ga.iter().map(|v| -v).collect();
    Ok((loss / n, OutputGrad::Probs(ga), OutputGrad::Probs(gb)))
}

/// `Σ_{h,w,c} p ln p` with `0 ln 0 = 0`; non-positive, 0 for one-hot maps.
pub fn prediction_confidence(pred: &PredictionMap) -> f64 {
    pred.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum()
}

/// Per-pixel argmax, ties to the lowest class index.
pub fn argmax_labels(pred: &PredictionMap) -> LabelMap {
    let c = pred.classes;
    let data = pred
        .probs
        .chunks_exact(c)
        .map(|px| {
            let mut best = 0;
            for k in 1..c {
                if px[k] > px[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(pred.width, pred.height, data).expect("prediction dimensions")
}
