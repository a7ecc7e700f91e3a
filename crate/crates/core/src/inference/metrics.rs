//! Occupancy and retrieval metrics.

use super::{SemanticGrid, FREE_LABEL};
use crate::camera::FramePoseTrack;
use crate::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// Occupied-vs-free IoU. 1 when neither grid has occupied voxels.
    pub iou: f64,
    /// Per-class IoU; `None` when the class appears in neither grid.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in the ground truth; `None` if there are
    /// none.
    pub miou: Option<f64>,
}

pub fn iou_miou(pred: &SemanticGrid, gt: &SemanticGrid, class_count: usize) -> Result<IouReport> {
    if pred.geometry() != gt.geometry() {
        return Err(Error::Config("prediction and ground truth geometries differ".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    let mut ci = vec![0usize; class_count];
    let mut cu = vec![0usize; class_count];
    let mut present = vec![false; class_count];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (po, go) = (p != FREE_LABEL, g != FREE_LABEL);
        inter += (po && go) as usize;
        union += (po || go) as usize;
        for l in [p, g] {
            if l != FREE_LABEL && l as usize >= class_count {
                return Err(Error::Config(format!("label {l} out of range for {class_count} classes")));
            }
        }
        if go {
            present[g as usize] = true;
        }
        if p == g && po {
            ci[p as usize] += 1;
            cu[p as usize] += 1;
        } else {
            if po {
                cu[p as usize] += 1;
            }
            if go {
                cu[g as usize] += 1;
            }
        }
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    let per_class: Vec<Option<f64>> =
        (0..class_count).map(|c| (cu[c] > 0).then(|| ci[c] as f64 / cu[c] as f64)).collect();
    let scored: Vec<f64> = (0..class_count).filter(|&c| present[c]).filter_map(|c| per_class[c]).collect();
    let miou = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok(IouReport { iou, per_class, miou })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    pub iou: Option<f64>,
}

/// Occupancy and semantic scores of a prediction against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub iou: f64,
    pub miou: Option<f64>,
    pub accuracy: Option<f64>,
    pub classes: Vec<ClassScore>,
    pub occupied_pred: usize,
    pub occupied_gt: usize,
}

/// Both grids must list the same classes in the same order.
pub fn evaluate_labels(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<SegmentationReport> {
    if pred.class_names() != gt.class_names() {
        return Err(Error::Config(format!(
            "class lists differ: prediction {:?}, ground truth {:?}",
            pred.class_names(),
            gt.class_names()
        )));
    }
    let r = iou_miou(pred, gt, gt.class_count())?;
    Ok(SegmentationReport {
        iou: r.iou,
        miou: r.miou,
        accuracy: classification_accuracy(pred, gt)?,
        classes: gt.class_names().iter().zip(r.per_class).map(|(n, iou)| ClassScore { name: n.clone(), iou }).collect(),
        occupied_pred: pred.occupied_count(),
        occupied_gt: gt.occupied_count(),
    })
}

/// Fraction of voxels occupied in both grids whose labels agree.
pub fn classification_accuracy(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<Option<f64>> {
    if pred.geometry() != gt.geometry() {
        return Err(Error::Config("prediction and ground truth geometries differ".into()));
    }
    let (mut both, mut right) = (0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != FREE_LABEL && g != FREE_LABEL {
            both += 1;
            right += (p == g) as usize;
        }
    }
    Ok((both > 0).then(|| right as f64 / both as f64))
}

/// Ranks by descending score (stable for ties) and averages
/// precision-at-rank over the positives. `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(Error::Config(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let total = labels.iter().filter(|&&l| l).count();
    if total == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / total as f64))
}

pub fn mean_average_precision(aps: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = aps.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// A point is visible when it projects inside some camera's image with
/// positive depth. Occlusion is ignored.
pub fn visible_mask(points: &[Vector3<f64>], track: &FramePoseTrack) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            track.frames().iter().flat_map(|f| &f.cameras).any(|cam| {
                let (u, v, depth) = cam.project(p);
                depth > 0.0 && u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64
            })
        })
        .collect()
}
