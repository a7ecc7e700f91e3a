//! Shared-weight linear autoencoder that compresses `L`-dim embeddings to
//! `L′` dims.
//!
//! Encoding is `t′ = tU / ‖tU‖`, decoding `t̂ = t′Uᵀ / ‖t′Uᵀ‖`. Training
//! minimizes the mean angle between each prompt and its reconstruction.

use crate::binio::*;
use crate::feature_map::FeatureMap;
use crate::trainer::{adam_step, AdamConfig, AdamState};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Projections shorter than this cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Bound keeping the arccos argument away from ±1.
pub const ACOS_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Reducer {
    /// `L × L′`, row-major.
    u: Vec<f64>,
    source_dim: usize,
    target_dim: usize,
}

fn normalized(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::Domain(format!("degenerate projection (norm {n:e})")));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

impl Reducer {
    pub fn from_matrix(source_dim: usize, target_dim: usize, u: Vec<f64>) -> Result<Self> {
        if target_dim == 0 || target_dim > source_dim {
            return Err(Error::Config(format!("invalid reducer shape {source_dim}→{target_dim}")));
        }
        if u.len() != source_dim * target_dim {
            return Err(Error::Config(format!(
                "reducer matrix needs {} entries, got {}",
                source_dim * target_dim,
                u.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reducer matrix has non-finite entries".into()));
        }
        Ok(Self { u, source_dim, target_dim })
    }

    /// `[I; 0]`: keeps the first `target_dim` coordinates.
    pub fn identity_block(source_dim: usize, target_dim: usize) -> Result<Self> {
        let mut u = vec![0.0; source_dim * target_dim];
        for i in 0..target_dim.min(source_dim) {
            u[i * target_dim + i] = 1.0;
        }
        Self::from_matrix(source_dim, target_dim, u)
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.u
    }

    /// `tU`, unnormalized.
    fn project(&self, t: &[f64]) -> Vec<f64> {
        let k = self.target_dim;
        let mut out = vec![0.0; k];
        for (i, &ti) in t.iter().enumerate() {
            if ti == 0.0 {
                continue;
            }
            for (o, &uij) in out.iter_mut().zip(&self.u[i * k..(i + 1) * k]) {
                *o += ti * uij;
            }
        }
        out
    }

    /// `t′Uᵀ`, unnormalized.
    fn lift(&self, t: &[f64]) -> Vec<f64> {
        let k = self.target_dim;
        (0..self.source_dim).map(|i| self.u[i * k..(i + 1) * k].iter().zip(t).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn encode(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.source_dim {
            return Err(Error::Config(format!("encode expects {} dims, got {}", self.source_dim, t.len())));
        }
        normalized(self.project(t))
    }

    pub fn decode(&self, t: &[f64]) -> Result<Vec<f64>> {
        if t.len() != self.target_dim {
            return Err(Error::Config(format!("decode expects {} dims, got {}", self.target_dim, t.len())));
        }
        normalized(self.lift(t))
    }

    /// Angle in radians between `t` and its reconstruction.
    pub fn reconstruction_angle(&self, t: &[f64]) -> Result<f64> {
        let r = self.decode(&self.encode(t)?)?;
        let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c: f64 = t.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nt;
        Ok(c.clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP).acos())
    }

    /// `max |UᵀU − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let k = self.target_dim;
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                let g: f64 = (0..self.source_dim).map(|i| self.u[i * k + a] * self.u[i * k + b]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Header `(L, L′)` as little-endian u32, then `U` row-major as f32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_u32(&mut w, self.source_dim as u32)?;
        write_u32(&mut w, self.target_dim as u32)?;
        write_f32_slice(&mut w, &self.u)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let l = read_u32(r)? as usize;
        let k = read_u32(r)? as usize;
        if l == 0 || k == 0 || k > l || l > 1 << 16 {
            return Err(Error::Format(format!("implausible reducer header ({l}, {k})")));
        }
        let u = read_f32_vec(r, l * k)?;
        expect_eof(r)?;
        Self::from_matrix(l, k, u).map_err(|e| Error::Format(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducerTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// The step size decays exponentially to this fraction of
    /// `learning_rate` over the run.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for ReducerTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, learning_rate: 0.01, final_lr_fraction: 0.01, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducerReport {
    /// Mean reconstruction angle (radians) after training.
    pub final_loss: f64,
    pub initial_loss: f64,
    pub orthogonality_error: f64,
    /// Prompts that were rescaled to unit norm.
    pub renormalized_prompts: usize,
    /// See [`neighbor_agreement`]; `None` with fewer than two prompts.
    pub neighbor_agreement: Option<f64>,
}

fn nearest_other(vs: &[Vec<f64>], i: usize) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (j, v) in vs.iter().enumerate() {
        if j == i {
            continue;
        }
        let s: f64 = vs[i].iter().zip(v).map(|(a, b)| a * b).sum();
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// Fraction of prompts whose nearest other prompt by cosine is the same in
/// the reduced space as in the original one.
pub fn neighbor_agreement(reducer: &Reducer, prompts: &[Vec<f64>]) -> Result<Option<f64>> {
    if prompts.len() < 2 {
        return Ok(None);
    }
    let full: Vec<Vec<f64>> = prompts.iter().map(|p| normalized(p.clone())).collect::<Result<_>>()?;
    let reduced: Vec<Vec<f64>> = full.iter().map(|p| reducer.encode(p)).collect::<Result<_>>()?;
    let same = (0..full.len()).filter(|&i| nearest_other(&full, i) == nearest_other(&reduced, i)).count();
    Ok(Some(same as f64 / full.len() as f64))
}

/// Mean angle over prompts and its gradient with respect to `U`.
///
/// With `b = tUUᵀ` and `c = t·b/‖b‖`, `∂c/∂b = (t − c b̂)/‖b‖` and
/// `∂c/∂U = tᵀ(gU) + gᵀ(tU)` for `g = ∂c/∂b`.
pub fn reduction_loss(reducer: &Reducer, prompts: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let (l, k) = (reducer.source_dim, reducer.target_dim);
    let mut grad = vec![0.0; l * k];
    let mut total = 0.0;
    let n = prompts.len() as f64;
    for t in prompts {
        let a = reducer.project(t);
        let b = reducer.lift(&a);
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nb < DEGENERATE_NORM {
            total += std::f64::consts::FRAC_PI_2;
            continue;
        }
        let c = t.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / nb;
        let lo = -1.0 + ACOS_CLAMP;
        let hi = 1.0 - ACOS_CLAMP;
        total += c.clamp(lo, hi).acos();
        if c <= lo || c >= hi {
            continue;
        }
        let dloss_dc = -1.0 / (1.0 - c * c).sqrt() / n;
        let g: Vec<f64> = t.iter().zip(&b).map(|(ti, bi)| dloss_dc * (ti - c * bi / nb) / nb).collect();
        let gu = reducer.project(&g);
        for i in 0..l {
            for j in 0..k {
                grad[i * k + j] += t[i] * gu[j] + g[i] * a[j];
            }
        }
    }
    (total / n, grad)
}

/// Fits `U` on unit-norm prompt embeddings with Adam.
pub fn train_reducer(
    prompts: &[Vec<f64>],
    target_dim: usize,
    cfg: &ReducerTrainConfig,
) -> Result<(Reducer, ReducerReport)> {
    let Some(first) = prompts.first() else {
        return Err(Error::Config("reducer training needs at least one prompt".into()));
    };
    let l = first.len();
    if target_dim == 0 || target_dim > l {
        return Err(Error::Config(format!("target dimension {target_dim} must lie in 1..={l}")));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    if !(cfg.final_lr_fraction > 0.0 && cfg.final_lr_fraction <= 1.0) {
        return Err(Error::Config("final_lr_fraction must lie in (0, 1]".into()));
    }
    let mut renormalized = 0;
    let mut unit = Vec::with_capacity(prompts.len());
    for (i, p) in prompts.iter().enumerate() {
        if p.len() != l {
            return Err(Error::Config(format!("prompt {i} has {} dims, expected {l}", p.len())));
        }
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-9 {
            log::warn!("prompt {i} has norm {n}; normalizing");
            renormalized += 1;
        }
        unit.push(normalized(p.clone()).map_err(|_| Error::Domain(format!("prompt {i} has zero norm")))?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (l as f64).sqrt();
    let u = (0..l * target_dim).map(|_| rng.random_range(-scale..scale)).collect();
    let mut reducer = Reducer::from_matrix(l, target_dim, u)?;
    let mut state = AdamState::new(l * target_dim);
    let adam = AdamConfig::default();
    let (initial_loss, _) = reduction_loss(&reducer, &unit);
    let decay = cfg.final_lr_fraction.powf(1.0 / cfg.steps.max(1) as f64);
    let mut lr = cfg.learning_rate;
    for _ in 0..cfg.steps {
        let (_, grad) = reduction_loss(&reducer, &unit);
        adam_step(&mut reducer.u, &grad, &mut state, lr, &adam);
        lr *= decay;
    }
    let (final_loss, _) = reduction_loss(&reducer, &unit);
    if !final_loss.is_finite() {
        return Err(Error::Numeric("reducer training diverged".into()));
    }
    let report = ReducerReport {
        final_loss,
        initial_loss,
        orthogonality_error: reducer.orthogonality_error(),
        renormalized_prompts: renormalized,
        neighbor_agreement: neighbor_agreement(&reducer, &unit)?,
    };
    Ok((reducer, report))
}

/// Encodes every pixel. Zero pixels stay zero and are counted.
pub fn reduce_feature_map(reducer: &Reducer, map: &FeatureMap) -> Result<(FeatureMap, usize)> {
    if map.channels() != reducer.source_dim {
        return Err(Error::Config(format!(
            "map has {} channels, reducer expects {}",
            map.channels(),
            reducer.source_dim
        )));
    }
    let k = reducer.target_dim;
    let mut out = FeatureMap::zeros(map.height(), map.width(), k);
    let mut skipped = 0;
    for (src, dst) in map.pixels().zip(out.data_mut().chunks_exact_mut(k)) {
        match reducer.encode(src) {
            Ok(e) => dst.copy_from_slice(&e),
            Err(_) => skipped += 1,
        }
    }
    Ok((out, skipped))
}
