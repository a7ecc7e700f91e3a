//! Scene fitting: sample rays over the temporal horizon, render, compare with
//! target maps, and update the grid with Adam.

pub mod adam;

use crate::binio::*;
use crate::camera::{sample_ray_batch, FramePoseTrack, Ray};
use crate::feature_map::FeatureMap;
use crate::grid::{GridGeometry, GridGradient, VoxelGrid};
use crate::losses::{target_feature, LossKind};
use crate::renderer::{make_samples, RayWorkspace, SampleMode};
use crate::{derive_seed, Error, Result};
pub use adam::{adam_step, AdamConfig, AdamState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

/// Target maps keyed by `(frame offset, camera index)`.
pub type TargetMaps = BTreeMap<(i32, usize), FeatureMap>;

/// Rays per gradient-accumulation chunk. Chunk boundaries depend only on
/// the ray index, so chunk-ordered reduction is independent of thread count.
pub const CHUNK_RAYS: usize = 128;

pub const DEFAULT_NEAR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_rays_per_step: usize,
    pub n_samples_per_ray: usize,
    pub horizon: u32,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossKind,
    /// Defaults to [`DEFAULT_NEAR`].
    pub near: Option<f64>,
    /// Defaults to the largest camera-to-grid-corner distance.
    pub far: Option<f64>,
    pub sample_mode: SampleMode,
    pub rng_seed: u64,
    pub density_scale: f64,
    /// Weight of the total-variation penalty on density logits; 0 disables it.
    pub tv_weight: f64,
    /// Reduce chunk gradients in chunk order.
    pub deterministic: bool,
    /// After every update, voxel features longer than this are scaled back
    /// onto the ball of this radius and colors are clamped to [0, 1].
    pub feature_norm_cap: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_rays_per_step: 32768,
            n_samples_per_ray: 100,
            horizon: 12,
            steps: 2000,
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossKind::CosGuidedMse,
            near: None,
            far: None,
            sample_mode: SampleMode::Stratified,
            rng_seed: 0,
            density_scale: 1.0,
            tv_weight: 0.0,
            deterministic: true,
            feature_norm_cap: Some(1.0),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_rays_per_step == 0 {
            return bad("n_rays_per_step must be at least 1");
        }
        if self.n_samples_per_ray < 2 {
            return bad("n_samples_per_ray must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.density_scale > 0.0 && self.density_scale.is_finite()) {
            return bad("density_scale must be positive");
        }
        if !(self.tv_weight >= 0.0) {
            return bad("tv_weight must be non-negative");
        }
        if self.feature_norm_cap.is_some_and(|c| !(c > 0.0)) {
            return bad("feature_norm_cap must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    /// Sampling interval used for every ray.
    pub fn near_far(&self, track: &FramePoseTrack, geometry: &GridGeometry) -> Result<(f64, f64)> {
        let near = self.near.unwrap_or(DEFAULT_NEAR);
        let far = self.far.unwrap_or_else(|| default_far(track, geometry));
        if !(near >= 0.0 && far > near) {
            return Err(Error::Config(format!("invalid near/far [{near}, {far}]")));
        }
        Ok((near, far))
    }
}

/// Distance from the farthest camera origin to the farthest grid corner.
pub fn default_far(track: &FramePoseTrack, geometry: &GridGeometry) -> f64 {
    let corners = geometry.corners();
    track
        .views(u32::MAX)
        .flat_map(|(_, _, cam)| corners.iter().map(move |c| (c - cam.origin()).norm()))
        .fold(geometry.diagonal(), f64::max)
}

/// Starting grid for a fit, seeded from `cfg.rng_seed`. Photometric fits
/// get an RGB channel.
pub fn initial_grid(geometry: GridGeometry, feature_dim: usize, cfg: &FitConfig) -> Result<VoxelGrid> {
    VoxelGrid::initialized(geometry, feature_dim, cfg.loss.is_photometric(), derive_seed(cfg.rng_seed, INIT_STREAM))
}

// Step seeds use streams 0, 1, 2, ...; keep clear of them.
const INIT_STREAM: u64 = u64::MAX - 1;

/// Adam state for every parameter group of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub logits: AdamState,
    pub features: AdamState,
    pub rgb: Option<AdamState>,
}

const OPT_MAGIC: &[u8; 4] = b"OCCA";
const OPT_VERSION: u32 = 1;

impl OptimizerState {
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        Self {
            logits: AdamState::new(grid.voxel_count()),
            features: AdamState::new(grid.features().len()),
            rgb: grid.has_rgb().then(|| AdamState::new(grid.voxel_count() * 3)),
        }
    }

    pub fn step(&self) -> u64 {
        self.logits.step
    }

    fn matches(&self, grid: &VoxelGrid) -> bool {
        self.logits.m.len() == grid.voxel_count()
            && self.features.m.len() == grid.features().len()
            && self.rgb.as_ref().map(|s| s.m.len()) == grid.has_rgb().then(|| grid.voxel_count() * 3)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(OPT_MAGIC)?;
        write_u32(&mut w, OPT_VERSION)?;
        write_u32(&mut w, self.rgb.is_some() as u32)?;
        for s in [Some(&self.logits), Some(&self.features), self.rgb.as_ref()].into_iter().flatten() {
            write_u64(&mut w, s.step)?;
            write_u64(&mut w, s.m.len() as u64)?;
            write_f64_slice(&mut w, &s.m)?;
            write_f64_slice(&mut w, &s.v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        read_magic(&mut r, OPT_MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != OPT_VERSION {
            return Err(Error::Format(format!("unsupported optimizer state version {version}")));
        }
        let has_rgb = read_u32(&mut r)? != 0;
        fn group<R: Read>(r: &mut R) -> Result<AdamState> {
            let step = read_u64(r)?;
            let n = read_u64(r)? as usize;
            Ok(AdamState { m: read_f64_vec(r, n)?, v: read_f64_vec(r, n)?, step })
        }
        let logits = group(&mut r)?;
        let features = group(&mut r)?;
        let rgb = if has_rgb { Some(group(&mut r)?) } else { None };
        expect_eof(&mut r)?;
        Ok(Self { logits, features, rgb })
    }
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    pub grid: VoxelGrid,
    pub optimizer: OptimizerState,
    pub wall_clock_secs: f64,
    pub zero_norm_hits: u64,
    pub out_of_grid_fraction: f64,
    pub near: f64,
    pub far: f64,
}

impl FitReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

struct ChunkResult {
    grad: GridGradient,
    loss_sum: f64,
    zero_norm: u64,
    out_of_grid: u64,
    samples: u64,
}

impl ChunkResult {
    fn merge(mut self, other: ChunkResult) -> ChunkResult {
        self.grad.add_assign(&other.grad);
        self.loss_sum += other.loss_sum;
        self.zero_norm += other.zero_norm;
        self.out_of_grid += other.out_of_grid;
        self.samples += other.samples;
        self
    }
}

/// Everything a step needs besides the rays.
struct StepContext<'a> {
    grid: &'a VoxelGrid,
    targets: &'a TargetMaps,
    cfg: &'a FitConfig,
    near: f64,
    far: f64,
    step_seed: u64,
    /// Upstream gradient scale, 1 / batch size.
    scale: f64,
}

impl StepContext<'_> {
    fn run_chunk(&self, first_ray: usize, rays: &[Ray]) -> Result<ChunkResult> {
        let mut ws = RayWorkspace::new();
        let mut grad = GridGradient::zeros_like(self.grid);
        let mut loss_sum = 0.0;
        let mut zero_norm = 0;
        let l = self.grid.feature_dim();
        let photometric = self.cfg.loss.is_photometric();
        for (i, ray) in rays.iter().enumerate() {
            let map = self.targets.get(&(ray.frame_index, ray.camera_index)).ok_or_else(|| {
                Error::Config(format!("missing target map for frame {} camera {}", ray.frame_index, ray.camera_index))
            })?;
            let target = target_feature(map, ray.pixel.0, ray.pixel.1)?;
            let seed = derive_seed(self.step_seed, (first_ray + i) as u64);
            let samples =
                make_samples(ray, self.near, self.far, self.cfg.n_samples_per_ray, self.cfg.sample_mode, seed)?;
            let mut eval = None;
            ws.forward_backward(self.grid, &samples, self.cfg.density_scale, &mut grad, |out| {
                if photometric {
                    let rgb = out.rgb.expect("photometric fitting requires an RGB grid");
                    let e = self.cfg.loss.evaluate(&rgb, &target);
                    let d = [e.grad[0] * self.scale, e.grad[1] * self.scale, e.grad[2] * self.scale];
                    eval = Some(e);
                    (vec![0.0; l], Some(d))
                } else {
                    let e = self.cfg.loss.evaluate(&out.feature, &target);
                    let d = e.grad.iter().map(|g| g * self.scale).collect();
                    eval = Some(e);
                    (d, None)
                }
            });
            let e = eval.expect("upstream closure runs once");
            loss_sum += e.loss;
            zero_norm += e.degenerate as u64;
        }
        Ok(ChunkResult { grad, loss_sum, zero_norm, out_of_grid: ws.out_of_grid, samples: ws.samples_seen })
    }
}

fn check_inputs(track: &FramePoseTrack, targets: &TargetMaps, cfg: &FitConfig, grid: &VoxelGrid) -> Result<()> {
    let channels = if cfg.loss.is_photometric() {
        if !grid.has_rgb() {
            return Err(Error::Config("photometric loss needs a grid with an RGB channel".into()));
        }
        3
    } else {
        grid.feature_dim()
    };
    for (offset, cam_idx, cam) in track.views(cfg.horizon) {
        let map = targets
            .get(&(offset, cam_idx))
            .ok_or_else(|| Error::Config(format!("missing target map for frame {offset} camera {cam_idx}")))?;
        if map.channels() != channels {
            return Err(Error::Config(format!(
                "target map for frame {offset} camera {cam_idx} has {} channels, expected {channels}",
                map.channels()
            )));
        }
        if map.width() != cam.width as usize || map.height() != cam.height as usize {
            return Err(Error::Config(format!(
                "target map for frame {offset} camera {cam_idx} is {}×{}, camera is {}×{}",
                map.width(),
                map.height(),
                cam.width,
                cam.height
            )));
        }
    }
    Ok(())
}

/// Total-variation penalty `w · Σ (l_a − l_b)²` over axis-adjacent logits.
fn add_tv(grid: &VoxelGrid, weight: f64, grad: &mut [f64]) -> f64 {
    let g = grid.geometry();
    let logits = grid.density_logits();
    let [nx, ny, nz] = g.resolution;
    let mut loss = 0.0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                let neighbors = [
                    (x + 1 < nx).then(|| g.index(x + 1, y, z)),
                    (y + 1 < ny).then(|| g.index(x, y + 1, z)),
                    (z + 1 < nz).then(|| g.index(x, y, z + 1)),
                ];
                for j in neighbors.into_iter().flatten() {
                    let d = logits[i] - logits[j];
                    loss += weight * d * d;
                    grad[i] += 2.0 * weight * d;
                    grad[j] -= 2.0 * weight * d;
                }
            }
        }
    }
    loss
}

pub fn fit_scene(track: &FramePoseTrack, targets: &TargetMaps, cfg: &FitConfig, init: VoxelGrid) -> Result<FitReport> {
    fit_scene_from(track, targets, cfg, init, None)
}

/// Like [`fit_scene`], continuing from a saved optimizer state.
pub fn fit_scene_from(
    track: &FramePoseTrack,
    targets: &TargetMaps,
    cfg: &FitConfig,
    init: VoxelGrid,
    state: Option<OptimizerState>,
) -> Result<FitReport> {
    cfg.validate()?;
    check_inputs(track, targets, cfg, &init)?;
    let (near, far) = cfg.near_far(track, init.geometry())?;
    let mut grid = init;
    let mut opt = match state {
        Some(s) if s.matches(&grid) => s,
        Some(_) => return Err(Error::Config("optimizer state does not match the grid shape".into())),
        None => OptimizerState::for_grid(&grid),
    };
    let adam = cfg.adam();
    let l = grid.feature_dim();
    let started = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut zero_norm_hits = 0;
    let (mut out_of_grid, mut samples_total) = (0u64, 0u64);
    let group = (rayon::current_num_threads() * 2).max(1);

    for local_step in 0..cfg.steps {
        let step = opt.step() + 1;
        let step_seed = derive_seed(cfg.rng_seed, step);
        let rays = sample_ray_batch(track, cfg.n_rays_per_step, cfg.horizon, step_seed)?;
        let ctx = StepContext {
            grid: &grid,
            targets,
            cfg,
            near,
            far,
            step_seed: derive_seed(step_seed, u64::MAX),
            scale: 1.0 / rays.len() as f64,
        };
        let chunks: Vec<(usize, &[Ray])> =
            rays.chunks(CHUNK_RAYS).enumerate().map(|(i, c)| (i * CHUNK_RAYS, c)).collect();
        let total = if cfg.deterministic {
            let mut total: Option<ChunkResult> = None;
            for batch in chunks.chunks(group) {
                let results: Vec<Result<ChunkResult>> =
                    batch.par_iter().map(|&(first, rays)| ctx.run_chunk(first, rays)).collect();
                for r in results {
                    let r = r?;
                    total = Some(match total {
                        Some(t) => t.merge(r),
                        None => r,
                    });
                }
            }
            total
        } else {
            chunks
                .par_iter()
                .map(|&(first, rays)| ctx.run_chunk(first, rays))
                .try_reduce_with(|a, b| Ok(a.merge(b)))
                .transpose()?
        }
        .expect("at least one ray per step");

        let mut grad = total.grad;
        let mut loss = total.loss_sum / rays.len() as f64;
        if cfg.tv_weight > 0.0 {
            loss += add_tv(&grid, cfg.tv_weight, &mut grad.density);
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss or gradient at step {step} (loss = {loss})")));
        }
        losses.push(loss);
        zero_norm_hits += total.zero_norm;
        out_of_grid += total.out_of_grid;
        samples_total += total.samples;

        let lr = cfg.learning_rate;
        grid.update_params(|p| {
            adam_step(p.logits, &grad.density, &mut opt.logits, lr, &adam);
            adam_step(p.features, &grad.features, &mut opt.features, lr, &adam);
            if let (Some(rgb), Some(g), Some(s)) = (p.rgb, grad.rgb.as_ref(), opt.rgb.as_mut()) {
                adam_step(rgb, g, s, lr, &adam);
                if cfg.feature_norm_cap.is_some() {
                    rgb.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
                }
            }
            if let Some(cap) = cfg.feature_norm_cap {
                for f in p.features.chunks_mut(l) {
                    let n = f.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > cap {
                        f.iter_mut().for_each(|x| *x *= cap / n);
                    }
                }
            }
        });
        if local_step % 100 == 0 {
            log::debug!("step {step}: loss {loss:.6e}");
        }
    }

    Ok(FitReport {
        losses,
        grid,
        optimizer: opt,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        zero_norm_hits,
        out_of_grid_fraction: if samples_total == 0 { 0.0 } else { out_of_grid as f64 / samples_total as f64 },
        near,
        far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraModel, Frame, Pose};
    use crate::renderer::{render_feature_map, RenderSettings};
    use nalgebra::Vector3;

    fn geometry() -> GridGeometry {
        GridGeometry::new([-2.0; 3], [2.0; 3], [4; 3]).unwrap()
    }

    fn track(n_cams: usize) -> FramePoseTrack {
        let frames = (0..n_cams)
            .map(|i| {
                let a = i as f64 * std::f64::consts::TAU / n_cams as f64;
                let eye = Vector3::new(7.0 * a.cos(), 7.0 * a.sin(), 2.0);
                let pose = Pose::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap();
                Frame { offset: i as i32, cameras: vec![CameraModel::with_fov(8, 8, 50.0, pose).unwrap()] }
            })
            .collect();
        FramePoseTrack::new(frames).unwrap()
    }

    fn targets_from(grid: &VoxelGrid, track: &FramePoseTrack, far: f64) -> TargetMaps {
        let s = RenderSettings::uniform(DEFAULT_NEAR, far, 32);
        track.views(u32::MAX).map(|(o, c, cam)| ((o, c), render_feature_map(grid, cam, &s).unwrap().features)).collect()
    }

    fn small_cfg() -> FitConfig {
        FitConfig { n_rays_per_step: 64, n_samples_per_ray: 32, horizon: 8, steps: 3, ..Default::default() }
    }

    #[test]
    fn feature_norms_stay_within_the_cap() {
        let t = track(3);
        let init = VoxelGrid::initialized(geometry(), 2, false, 1).unwrap();
        // targets far longer than the cap pull features outward
        let mut targets = targets_from(&init, &t, 12.0);
        for m in targets.values_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 5.0);
        }
        let cfg = FitConfig { steps: 30, learning_rate: 0.5, feature_norm_cap: Some(0.3), ..small_cfg() };
        let grid = fit_scene(&t, &targets, &cfg, init.clone()).unwrap().grid;
        let norms: Vec<f64> = grid.features().chunks(2).map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        assert!(norms.iter().all(|&n| n <= 0.3 + 1e-12));
        assert!(norms.iter().any(|&n| n > 0.29));

        let free = FitConfig { feature_norm_cap: None, ..cfg };
        let grid = fit_scene(&t, &targets, &free, init).unwrap().grid;
        assert!(grid.features().chunks(2).any(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt() > 0.3));
    }

    #[test]
    fn zero_steps_returns_init() {
        let t = track(3);
        let init = VoxelGrid::initialized(geometry(), 2, false, 1).unwrap();
        let targets = targets_from(&init, &t, 12.0);
        let cfg = FitConfig { steps: 0, ..small_cfg() };
        let report = fit_scene(&t, &targets, &cfg, init.clone()).unwrap();
        assert_eq!(report.grid, init);
        assert!(report.losses.is_empty());
    }

    #[test]
    fn missing_or_mismatched_targets_are_config_errors() {
        let t = track(3);
        let init = VoxelGrid::initialized(geometry(), 2, false, 1).unwrap();
        let mut targets = targets_from(&init, &t, 12.0);
        targets.remove(&(1, 0));
        assert!(matches!(fit_scene(&t, &targets, &small_cfg(), init.clone()), Err(Error::Config(_))));
        let wrong = VoxelGrid::initialized(geometry(), 3, false, 1).unwrap();
        let targets = targets_from(&wrong, &t, 12.0);
        assert!(matches!(fit_scene(&t, &targets, &small_cfg(), init.clone()), Err(Error::Config(_))));
        let cfg = FitConfig { loss: LossKind::Photometric, ..small_cfg() };
        assert!(matches!(fit_scene(&t, &targets, &cfg, init), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_config() {
        assert!(FitConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(FitConfig { n_rays_per_step: 0, ..Default::default() }.validate().is_err());
        assert!(FitConfig::default().validate().is_ok());
        let parsed: FitConfig = serde_json::from_str(r#"{"steps": 7, "loss": "mse"}"#).unwrap();
        assert_eq!(parsed.steps, 7);
        assert_eq!(parsed.loss, LossKind::Mse);
        assert!(serde_json::from_str::<FitConfig>(r#"{"stepz": 7}"#).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let t = track(2);
        let init = VoxelGrid::initialized(geometry(), 2, false, 1).unwrap();
        let mut targets = targets_from(&init, &t, 12.0);
        for m in targets.values_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = f64::NAN);
        }
        assert!(matches!(fit_scene(&t, &targets, &small_cfg(), init), Err(Error::Numeric(_))));
    }

    #[test]
    fn determinism_and_thread_independence() {
        let t = track(4);
        let mut truth = VoxelGrid::initialized(geometry(), 3, false, 2).unwrap();
        truth.update_params(|p| {
            for (i, l) in p.logits.iter_mut().enumerate() {
                *l = if i % 3 == 0 { 2.0 } else { -2.0 };
            }
            p.features.iter_mut().enumerate().for_each(|(i, f)| *f = (i % 5) as f64 * 0.2);
        });
        let targets = targets_from(&truth, &t, 12.0);
        let init = VoxelGrid::initialized(geometry(), 3, false, 7).unwrap();
        let cfg = FitConfig { steps: 5, n_rays_per_step: 300, ..small_cfg() };
        let a = fit_scene(&t, &targets, &cfg, init.clone()).unwrap();
        let b = fit_scene(&t, &targets, &cfg, init.clone()).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.losses, b.losses);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| fit_scene(&t, &targets, &cfg, init.clone()).unwrap());
        assert_eq!(a.grid, c.grid);
    }

    #[test]
    fn single_ray_touches_only_traversed_voxels() {
        // A single camera with a single pixel: one ray per step, always the same.
        let g = GridGeometry::new([-4.0; 3], [4.0; 3], [8; 3]).unwrap();
        let pose = Pose::look_at(Vector3::new(-10.0, 0.3, 0.2), Vector3::new(0.0, 0.3, 0.2), Vector3::z()).unwrap();
        let cam = CameraModel::new(10.0, 10.0, 0.5, 0.5, 1, 1, pose).unwrap();
        let t = FramePoseTrack::new(vec![Frame { offset: 0, cameras: vec![cam] }]).unwrap();
        let mut targets = TargetMaps::new();
        targets.insert((0, 0), FeatureMap::from_data(1, 1, 2, vec![1.0, 0.5]).unwrap());
        let init = VoxelGrid::initialized(g.clone(), 2, false, 3).unwrap();
        let cfg = FitConfig {
            steps: 1,
            n_rays_per_step: 1,
            n_samples_per_ray: 64,
            near: Some(1.0),
            far: Some(20.0),
            ..small_cfg()
        };
        let report = fit_scene(&t, &targets, &cfg, init.clone()).unwrap();
        let mut changed = 0;
        for i in 0..g.voxel_count() {
            let moved = report.grid.density_logits()[i] != init.density_logits()[i];
            let c = g.center_of(i);
            // voxels whose centers are within one voxel of the ray line (y = 0.3, z = 0.2)
            let near_ray = (c[1] - 0.3).abs() < 1.0 && (c[2] - 0.2).abs() < 1.0;
            if moved {
                changed += 1;
                assert!(near_ray, "voxel {i} at {c:?} changed but is off the ray");
            }
            if (c[1] - 0.3).abs() < 0.5 && (c[2] - 0.2).abs() < 0.5 {
                assert!(moved, "voxel {i} on the ray did not change");
            }
        }
        assert!(changed >= 8);
    }

    #[test]
    fn optimizer_state_round_trip() {
        let grid = VoxelGrid::initialized(geometry(), 2, true, 1).unwrap();
        let mut s = OptimizerState::for_grid(&grid);
        s.logits.m[3] = 0.25;
        s.features.v[1] = 1e-9;
        s.rgb.as_mut().unwrap().step = 4;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("opt.bin");
        s.save(&p).unwrap();
        assert_eq!(OptimizerState::load(&p).unwrap(), s);
    }

    #[test]
    fn resuming_matches_a_single_run() {
        let t = track(3);
        let truth = VoxelGrid::initialized(geometry(), 2, false, 11).unwrap();
        let targets = targets_from(&truth, &t, 12.0);
        let init = VoxelGrid::initialized(geometry(), 2, false, 5).unwrap();
        let full = fit_scene(&t, &targets, &FitConfig { steps: 4, ..small_cfg() }, init.clone()).unwrap();
        let half = fit_scene(&t, &targets, &FitConfig { steps: 2, ..small_cfg() }, init).unwrap();
        let rest =
            fit_scene_from(&t, &targets, &FitConfig { steps: 2, ..small_cfg() }, half.grid, Some(half.optimizer))
                .unwrap();
        assert_eq!(full.grid, rest.grid);
    }
}
