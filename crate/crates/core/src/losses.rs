//! Per-ray losses between rendered and target features.
//!
//! Every loss returns its value together with the gradient with respect to
//! the prediction. Squared errors use the sum convention `‖t − p‖²`.

use crate::feature_map::FeatureMap;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Loss value, gradient with respect to the prediction, and whether the
/// cosine factor hit a zero-norm input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CosGuidedMse,
    Mse,
    Cosine,
    Photometric,
}

impl LossKind {
    pub fn evaluate(self, pred: &[f64], target: &[f64]) -> LossEval {
        match self {
            LossKind::CosGuidedMse => cos_guided_mse(pred, target),
            LossKind::Mse => mse(pred, target),
            LossKind::Cosine => cosine_loss(pred, target),
            LossKind::Photometric => photometric_mse(pred, target),
        }
    }

    /// Whether the loss supervises the RGB channel instead of features.
    pub fn is_photometric(self) -> bool {
        self == LossKind::Photometric
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::CosGuidedMse => "cos_guided_mse",
            LossKind::Mse => "mse",
            LossKind::Cosine => "cosine",
            LossKind::Photometric => "photometric",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cos_guided_mse" => Ok(LossKind::CosGuidedMse),
            "mse" => Ok(LossKind::Mse),
            "cosine" => Ok(LossKind::Cosine),
            "photometric" => Ok(LossKind::Photometric),
            other => Err(Error::Config(format!("unknown loss kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bilinear lookup at continuous pixel coordinate `(u, v)`, with pixel
/// centers at half-integers and clamping inside the outer half-pixel band.
pub fn target_feature(map: &FeatureMap, u: f64, v: f64) -> Result<Vec<f64>> {
    let (w, h) = (map.width(), map.height());
    if !(u >= 0.0 && u <= w as f64 && v >= 0.0 && v <= h as f64) {
        return Err(Error::Domain(format!("pixel ({u}, {v}) outside map {w}×{h}")));
    }
    let gx = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let gy = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = (gx.floor() as usize).min(w - 1);
    let y0 = (gy.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = gx - x0 as f64;
    let fy = gy - y0 as f64;
    let corners =
        [(x0, y0, (1.0 - fx) * (1.0 - fy)), (x1, y0, fx * (1.0 - fy)), (x0, y1, (1.0 - fx) * fy), (x1, y1, fx * fy)];
    let mut out = vec![0.0; map.channels()];
    for (x, y, wgt) in corners {
        if wgt == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(map.pixel(x, y)) {
            *o += wgt * p;
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine distance `1 − cos(p, t)` in [0, 2], or `None` if either vector
/// has zero norm.
pub fn cosine_distance(pred: &[f64], target: &[f64]) -> Option<f64> {
    let (np, nt) = (norm(pred), norm(target));
    if np == 0.0 || nt == 0.0 {
        return None;
    }
    Some((1.0 - dot(pred, target) / (np * nt)).clamp(0.0, 2.0))
}

/// `‖t − p‖²` with gradient `2 (p − t)`.
pub fn mse(pred: &[f64], target: &[f64]) -> LossEval {
    let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
    let loss = pred.iter().zip(target).map(|(p, t)| (t - p) * (t - p)).sum();
    LossEval { loss, grad, degenerate: false }
}

/// `C(p, t) · ‖t − p‖²` where the cosine distance `C` is held constant
/// during differentiation. A zero-norm input sets `C = 1`.
pub fn cos_guided_mse(pred: &[f64], target: &[f64]) -> LossEval {
    let (c, degenerate) = match cosine_distance(pred, target) {
        Some(c) => (c, false),
        None => (1.0, true),
    };
    let base = mse(pred, target);
    LossEval { loss: c * base.loss, grad: base.grad.into_iter().map(|g| c * g).collect(), degenerate }
}

/// `1 − cos(p, t)` with its full gradient. Zero-norm inputs give loss 1 and
/// a zero gradient.
pub fn cosine_loss(pred: &[f64], target: &[f64]) -> LossEval {
    let (np, nt) = (norm(pred), norm(target));
    if np == 0.0 || nt == 0.0 {
        return LossEval { loss: 1.0, grad: vec![0.0; pred.len()], degenerate: true };
    }
    let cos = dot(pred, target) / (np * nt);
    // ∂cos/∂p = t / (|p||t|) − cos · p / |p|²
    let grad = pred.iter().zip(target).map(|(p, t)| -(t / (np * nt) - cos * p / (np * np))).collect();
    LossEval { loss: 1.0 - cos, grad, degenerate: false }
}

/// Squared RGB error, summed over channels.
pub fn photometric_mse(pred_rgb: &[f64], target_rgb: &[f64]) -> LossEval {
    mse(pred_rgb, target_rgb)
}
