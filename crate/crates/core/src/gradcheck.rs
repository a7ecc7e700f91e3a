//! Finite-difference check of the rendering and loss gradients on a small
//! random instance.
//!
//! The cosine-guided loss treats its cosine factor as a constant, so the
//! reference is the surrogate `Σ_r C_r ‖t_r − p_r‖² / R` with each `C_r`
//! frozen at the unperturbed parameters.

use crate::camera::Ray;
use crate::grid::{GridGeometry, GridGradient, VoxelGrid};
use crate::losses::{cos_guided_mse, cosine_distance};
use crate::renderer::{make_samples, render_ray, RaySamples, RayWorkspace, SampleMode};
use crate::scene_synth::embeddings::random_unit;
use crate::scene_synth::random_grid;
use crate::{derive_seed, Error, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Denominator floor for relative errors.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Voxels per axis.
    pub grid: usize,
    pub feature_dim: usize,
    pub rays: usize,
    pub samples: usize,
    pub step: f64,
    pub density_scale: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { grid: 4, feature_dim: 8, rays: 16, samples: 8, step: 1e-4, density_scale: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `"logit[i]"` or `"feature[i]"` of the worst entry.
    pub worst: String,
    pub parameters: usize,
    /// Parameters with a nonzero analytic or numeric derivative.
    pub touched: usize,
}

struct Instance {
    grid: VoxelGrid,
    samples: Vec<RaySamples>,
    targets: Vec<Vec<f64>>,
    /// Frozen cosine factors.
    weights: Vec<f64>,
    density_scale: f64,
}

impl Instance {
    fn loss(&self, grid: &VoxelGrid) -> f64 {
        let mut total = 0.0;
        for ((s, t), c) in self.samples.iter().zip(&self.targets).zip(&self.weights) {
            let out = render_ray(grid, s, self.density_scale);
            let sq: f64 = out.feature.iter().zip(t).map(|(p, q)| (q - p) * (q - p)).sum();
            total += c * sq;
        }
        total / self.samples.len() as f64
    }

    fn analytic(&self) -> GridGradient {
        let mut grad = GridGradient::zeros_like(&self.grid);
        let mut ws = RayWorkspace::new();
        let scale = 1.0 / self.samples.len() as f64;
        for (s, t) in self.samples.iter().zip(&self.targets) {
            ws.forward_backward(&self.grid, s, self.density_scale, &mut grad, |out| {
                let e = cos_guided_mse(&out.feature, t);
                (e.grad.iter().map(|g| g * scale).collect(), None)
            });
        }
        grad
    }
}

fn build(cfg: &GradcheckConfig) -> Result<Instance> {
    let n = cfg.grid;
    let geometry = GridGeometry::new([-1.0; 3], [1.0; 3], [n, n, n])?;
    let grid = random_grid(geometry, cfg.feature_dim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut samples = Vec::with_capacity(cfg.rays);
    let mut targets = Vec::with_capacity(cfg.rays);
    for r in 0..cfg.rays {
        // start outside the box and aim at a random interior point
        let dir = Vector3::from_vec(random_unit(&mut rng, 3));
        let aim = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
        let origin = aim - dir * 3.0;
        let ray = Ray { origin, direction: dir, pixel: (0.5, 0.5), frame_index: 0, camera_index: r };
        samples.push(make_samples(
            &ray,
            1.0,
            5.0,
            cfg.samples,
            SampleMode::Stratified,
            derive_seed(cfg.seed, 100 + r as u64),
        )?);
        targets.push((0..cfg.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
    }
    let weights = samples
        .iter()
        .zip(&targets)
        .map(|(s, t)| {
            let p = render_ray(&grid, s, cfg.density_scale).feature;
            cosine_distance(&p, t).unwrap_or(1.0)
        })
        .collect();
    Ok(Instance { grid, samples, targets, weights, density_scale: cfg.density_scale })
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.grid == 0 || cfg.feature_dim == 0 || cfg.rays == 0 || cfg.samples < 2 {
        return Err(Error::Config("gradcheck needs a non-empty grid, rays and at least 2 samples".into()));
    }
    if !(cfg.step > 0.0) {
        return Err(Error::Config("step must be positive".into()));
    }
    let inst = build(cfg)?;
    let grad = inst.analytic();
    let h = cfg.step;
    let mut worst = (0.0, String::from("none"));
    let mut touched = 0;
    let mut check = |name: String, analytic: f64, numeric: f64| {
        if analytic != 0.0 || numeric != 0.0 {
            touched += 1;
        }
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
        if err > worst.0 {
            worst = (err, name);
        }
    };
    let mut probe = inst.grid.clone();
    for i in 0..inst.grid.voxel_count() {
        let base = inst.grid.density_logits()[i];
        probe.set_logit(i, base + h);
        let up = inst.loss(&probe);
        probe.set_logit(i, base - h);
        let down = inst.loss(&probe);
        probe.set_logit(i, base);
        check(format!("logit[{i}]"), grad.density[i], (up - down) / (2.0 * h));
    }
    let l = inst.grid.feature_dim();
    for i in 0..inst.grid.voxel_count() {
        let base = inst.grid.feature(i).to_vec();
        for c in 0..l {
            let mut v = base.clone();
            v[c] = base[c] + h;
            probe.set_feature(i, &v);
            let up = inst.loss(&probe);
            v[c] = base[c] - h;
            probe.set_feature(i, &v);
            let down = inst.loss(&probe);
            probe.set_feature(i, &base);
            check(format!("feature[{}]", i * l + c), grad.features[i * l + c], (up - down) / (2.0 * h));
        }
    }
    let parameters = inst.grid.voxel_count() * (l + 1);
    if !worst.0.is_finite() {
        return Err(Error::Numeric("non-finite gradient error".into()));
    }
    Ok(GradcheckReport { max_rel_error: worst.0, worst: worst.1, parameters, touched })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_passes() {
        let r = run(&GradcheckConfig::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.parameters, 64 * 9);
        assert!(r.touched > 50);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run(&GradcheckConfig { samples: 1, ..Default::default() }).is_err());
        assert!(run(&GradcheckConfig { step: 0.0, ..Default::default() }).is_err());
    }
}
