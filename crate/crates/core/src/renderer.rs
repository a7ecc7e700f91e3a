//! Volume rendering of grid features along rays, and its exact adjoint.
//!
//! For samples `j = 0..N` with density `σ_j = k · ρ_j` (ρ the interpolated
//! sigmoid density, `k` the density scale) and spacing `δ_j`:
//!
//! ```text
//! T_j = exp(−Σ_{i<j} σ_i δ_i)      w_j = T_j (1 − exp(−σ_j δ_j))
//! feature = Σ_j w_j ψ_j
//! ```
//!
//! The backward pass recomputes the forward quantities and then walks the
//! samples back to front:
//!
//! ```text
//! ∂out/∂ψ_j = w_j
//! ∂out/∂σ_j = δ_j (T_{j+1} ψ_j − Σ_{i>j} w_i ψ_i)
//! ```

use crate::camera::{pixel_to_ray, CameraModel, Ray};
use crate::feature_map::FeatureMap;
use crate::grid::{GridGradient, Trilinear, VoxelGrid};
use crate::{derive_seed, Error, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Guard for the expected-depth normalization on empty rays.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    #[default]
    Uniform,
    Stratified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }
}

/// Places `n` samples on `[near, far]`.
///
/// Uniform mode puts `t` on an evenly spaced grid including both endpoints.
/// Stratified mode splits the interval into `n` equal bins and draws one
/// uniform position per bin. In both modes `δ_j = t_{j+1} − t_j` and the
/// final `δ` is `(far − near) / n`.
pub fn make_samples(ray: &Ray, near: f64, far: f64, n: usize, mode: SampleMode, rng_seed: u64) -> Result<RaySamples> {
    if !(near >= 0.0 && far > near && far.is_finite()) {
        return Err(Error::Domain(format!("invalid sampling interval [{near}, {far}]")));
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 samples per ray, got {n}")));
    }
    let span = far - near;
    let ts: Vec<f64> = match mode {
        SampleMode::Uniform => {
            let step = span / (n - 1) as f64;
            (0..n).map(|j| if j == n - 1 { far } else { near + j as f64 * step }).collect()
        }
        SampleMode::Stratified => {
            let bin = span / n as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            (0..n).map(|j| near + (j as f64 + rng.random::<f64>()) * bin).collect()
        }
    };
    let mut deltas: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(span / n as f64);
    let positions = ts.iter().map(|&t| ray.at(t)).collect();
    Ok(RaySamples { ts, deltas, positions })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub feature: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance_end: f64,
    pub expected_depth: f64,
    pub rgb: Option<[f64; 3]>,
}

impl RenderOutput {
    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Reusable per-ray buffers; one per worker.
#[derive(Default)]
pub struct RayWorkspace {
    stencils: Vec<Option<Trilinear>>,
    trans: Vec<f64>,
    weights: Vec<f64>,
    feats: Vec<f64>,
    rgbs: Vec<[f64; 3]>,
    scaled: Vec<f64>,
    /// Samples that fell outside the grid in calls made with this workspace.
    pub out_of_grid: u64,
    pub samples_seen: u64,
}

impl RayWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forward pass; leaves per-sample quantities in the workspace.
    pub fn forward(&mut self, grid: &VoxelGrid, samples: &RaySamples, density_scale: f64) -> RenderOutput {
        let n = samples.len();
        let l = grid.feature_dim();
        let geometry = grid.geometry();
        self.stencils.clear();
        self.trans.clear();
        self.weights.clear();
        self.feats.clear();
        self.feats.resize(n * l, 0.0);
        self.rgbs.clear();
        self.rgbs.resize(n, [0.0; 3]);

        let mut feature = vec![0.0; l];
        let mut rgb = grid.has_rgb().then_some([0.0; 3]);
        let mut t = 1.0;
        let mut weight_sum = 0.0;
        let mut depth_sum = 0.0;
        for j in 0..n {
            let stencil = geometry.trilinear(&samples.positions[j]);
            self.samples_seen += 1;
            let (sigma, w) = match &stencil {
                Some(st) => {
                    let sigma = density_scale * grid.density_at(st);
                    let x = sigma * samples.deltas[j];
                    let w = -t * (-x).exp_m1();
                    let psi = &mut self.feats[j * l..(j + 1) * l];
                    grid.feature_at(st, psi);
                    for (f, p) in feature.iter_mut().zip(psi.iter()) {
                        *f += w * p;
                    }
                    if let (Some(acc), Some(c)) = (rgb.as_mut(), grid.rgb_at(st)) {
                        self.rgbs[j] = c;
                        for ch in 0..3 {
                            acc[ch] += w * c[ch];
                        }
                    }
                    (sigma, w)
                }
                None => {
                    self.out_of_grid += 1;
                    (0.0, 0.0)
                }
            };
            self.stencils.push(stencil);
            self.trans.push(t);
            self.weights.push(w);
            weight_sum += w;
            depth_sum += w * samples.ts[j];
            t *= (-sigma * samples.deltas[j]).exp();
        }
        self.trans.push(t);
        RenderOutput {
            feature,
            weights: self.weights.clone(),
            transmittance_end: t,
            expected_depth: depth_sum / weight_sum.max(DEPTH_EPS),
            rgb,
        }
    }

    /// Backward pass over the quantities left by the preceding
    /// [`forward`](Self::forward) on the same grid and samples.
    pub fn backward(
        &mut self,
        grid: &VoxelGrid,
        samples: &RaySamples,
        density_scale: f64,
        d_feature: &[f64],
        d_rgb: Option<&[f64; 3]>,
        grad: &mut GridGradient,
    ) {
        let n = samples.len();
        let l = grid.feature_dim();
        debug_assert_eq!(d_feature.len(), l);
        self.scaled.clear();
        self.scaled.resize(l, 0.0);
        let mut suffix = 0.0;
        for j in (0..n).rev() {
            let Some(stencil) = self.stencils[j] else { continue };
            let psi = &self.feats[j * l..(j + 1) * l];
            let mut s: f64 = psi.iter().zip(d_feature).map(|(p, g)| p * g).sum();
            if let Some(g) = d_rgb {
                s += (0..3).map(|c| self.rgbs[j][c] * g[c]).sum::<f64>();
            }
            let w = self.weights[j];
            let d_sigma = samples.deltas[j] * (self.trans[j + 1] * s - suffix);
            suffix += w * s;
            for (o, g) in self.scaled.iter_mut().zip(d_feature) {
                *o = w * g;
            }
            let rgb_grad = d_rgb.map(|g| [w * g[0], w * g[1], w * g[2]]);
            grid.scatter_at(&stencil, density_scale * d_sigma, &self.scaled, rgb_grad.as_ref(), grad);
        }
    }

    /// Forward, then backward with upstream gradients chosen from the output.
    pub fn forward_backward<F>(
        &mut self,
        grid: &VoxelGrid,
        samples: &RaySamples,
        density_scale: f64,
        grad: &mut GridGradient,
        upstream: F,
    ) -> RenderOutput
    where
        F: FnOnce(&RenderOutput) -> (Vec<f64>, Option<[f64; 3]>),
    {
        let out = self.forward(grid, samples, density_scale);
        let (d_feature, d_rgb) = upstream(&out);
        self.backward(grid, samples, density_scale, &d_feature, d_rgb.as_ref(), grad);
        out
    }
}

pub fn render_ray(grid: &VoxelGrid, samples: &RaySamples, density_scale: f64) -> RenderOutput {
    RayWorkspace::new().forward(grid, samples, density_scale)
}

/// Accumulates the gradient of `d_feature · feature + d_rgb · rgb` into
/// `grad`. The forward pass is recomputed.
pub fn render_ray_backward(
    grid: &VoxelGrid,
    samples: &RaySamples,
    density_scale: f64,
    d_feature: &[f64],
    d_rgb: Option<&[f64; 3]>,
    grad: &mut GridGradient,
) {
    let mut ws = RayWorkspace::new();
    ws.forward(grid, samples, density_scale);
    ws.backward(grid, samples, density_scale, d_feature, d_rgb, grad);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub mode: SampleMode,
    #[serde(default = "default_density_scale")]
    pub density_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_density_scale() -> f64 {
    1.0
}

impl RenderSettings {
    pub fn uniform(near: f64, far: f64, n_samples: usize) -> Self {
        Self { near, far, n_samples, mode: SampleMode::Uniform, density_scale: 1.0, seed: 0 }
    }
}

/// Rendered images of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub features: FeatureMap,
    pub depth: FeatureMap,
    pub rgb: Option<FeatureMap>,
}

/// Renders every pixel center of `cam`.
pub fn render_feature_map(grid: &VoxelGrid, cam: &CameraModel, settings: &RenderSettings) -> Result<RenderedView> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let l = grid.feature_dim();
    let rows: Vec<Result<Vec<RenderOutput>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut ws = RayWorkspace::new();
            (0..w)
                .map(|x| {
                    let ray = pixel_to_ray(cam, x as f64 + 0.5, y as f64 + 0.5)?;
                    let seed = derive_seed(settings.seed, (y * w + x) as u64);
                    let samples =
                        make_samples(&ray, settings.near, settings.far, settings.n_samples, settings.mode, seed)?;
                    Ok(ws.forward(grid, &samples, settings.density_scale))
                })
                .collect()
        })
        .collect();
    let mut features = FeatureMap::zeros(h, w, l);
    let mut depth = FeatureMap::zeros(h, w, 1);
    let mut rgb = grid.has_rgb().then(|| FeatureMap::zeros(h, w, 3));
    for (y, row) in rows.into_iter().enumerate() {
        for (x, out) in row?.into_iter().enumerate() {
            features.pixel_mut(x, y).copy_from_slice(&out.feature);
            depth.pixel_mut(x, y)[0] = out.expected_depth;
            if let (Some(map), Some(c)) = (rgb.as_mut(), out.rgb) {
                map.pixel_mut(x, y).copy_from_slice(&c);
            }
        }
    }
    Ok(RenderedView { features, depth, rgb })
}
