//! Synthetic ground truth: labeled voxel scenes built from primitives,
//! separated class embeddings, orbit cameras and target maps rendered by
//! the reference renderer in [`oracle`].

pub mod embeddings;
pub mod oracle;

use crate::camera::{CameraModel, Frame, FramePoseTrack, Pose};
use crate::feature_map::FeatureMap;
use crate::grid::{GridGeometry, VoxelGrid};
use crate::inference::{Prompt, SemanticGrid, VocabClass, Vocabulary, FREE_LABEL};
use crate::manifest::Manifest;
use crate::trainer::{default_far, TargetMaps, DEFAULT_NEAR};
use crate::{derive_seed, Error, Result};
use embeddings::{min_pairwise_angle, random_unit, separated_directions, tilt};
use nalgebra::Vector3;
use oracle::{oracle_render, OracleSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Logit magnitude of ground-truth voxels; sigmoid(±40) is 1 or 0 to
/// within 5e-18.
pub const GT_LOGIT: f64 = 40.0;

const PROMPT_TEMPLATES: [&str; 4] = ["a {}", "a photo of a {}", "a {} in the street", "a blurry {}"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Box {
        min: [f64; 3],
        max: [f64; 3],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Horizontal slab spanning the whole grid footprint.
    Plane {
        z_min: f64,
        z_max: f64,
    },
    /// Vertical cylinder.
    Pole {
        x: f64,
        y: f64,
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Shape {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        match *self {
            Shape::Box { min, max } => (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]),
            Shape::Sphere { center, radius } => (p - Vector3::from(center)).norm() <= radius,
            Shape::Plane { z_min, z_max } => p.z >= z_min && p.z <= z_max,
            Shape::Pole { x, y, radius, z_min, z_max } => {
                (p.x - x).hypot(p.y - y) <= radius && p.z >= z_min && p.z <= z_max
            }
        }
    }

    /// Axis-aligned bounds; planes take the grid's footprint.
    fn bounds(&self, g: &GridGeometry) -> ([f64; 3], [f64; 3]) {
        match *self {
            Shape::Box { min, max } => (min, max),
            Shape::Sphere { center, radius } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Shape::Plane { z_min, z_max } => {
                ([g.min_corner[0], g.min_corner[1], z_min], [g.max_corner[0], g.max_corner[1], z_max])
            }
            Shape::Pole { x, y, radius, z_min, z_max } => {
                ([x - radius, y - radius, z_min], [x + radius, y + radius, z_max])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Smallest angle between any two class embeddings.
    pub min_angle_deg: f64,
    pub prompts_per_class: usize,
    /// Angle between each prompt and its class embedding.
    pub prompt_jitter_deg: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { min_angle_deg: 60.0, prompts_per_class: 2, prompt_jitter_deg: 8.0 }
    }
}

/// Cameras evenly spaced on a horizontal circle, one per frame, all looking
/// at `look_at`. Frame offsets run from `-(count / 2)` upward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub look_at: [f64; 3],
    pub image_width: u32,
    pub image_height: u32,
    pub fov_deg: f64,
    #[serde(default)]
    pub start_angle_deg: f64,
    /// Odd-numbered cameras sit this much lower than `height`, so the orbit
    /// sees the scene from two elevations.
    #[serde(default)]
    pub height_drop: f64,
}

impl OrbitConfig {
    pub fn track(&self) -> Result<FramePoseTrack> {
        if self.count == 0 {
            return Err(Error::Config("orbit needs at least one camera".into()));
        }
        let target = Vector3::from(self.look_at);
        let half = (self.count / 2) as i32;
        let frames = (0..self.count)
            .map(|k| {
                let a = (self.start_angle_deg + 360.0 * k as f64 / self.count as f64).to_radians();
                let z = if k % 2 == 1 { self.height - self.height_drop } else { self.height };
                let eye = Vector3::new(target.x + self.radius * a.cos(), target.y + self.radius * a.sin(), z);
                let pose = Pose::look_at(eye, target, Vector3::z())?;
                let cam = CameraModel::with_fov(self.image_width, self.image_height, self.fov_deg, pose)?;
                Ok(Frame { offset: k as i32 - half, cameras: vec![cam] })
            })
            .collect::<Result<Vec<_>>>()?;
        FramePoseTrack::new(frames)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetRender {
    pub near: f64,
    /// Defaults to the farthest camera-to-grid-corner distance.
    pub far: Option<f64>,
    pub n_samples: usize,
    pub density_scale: f64,
}

impl Default for TargetRender {
    fn default() -> Self {
        Self { near: DEFAULT_NEAR, far: None, n_samples: 100, density_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub geometry: GridGeometry,
    pub feature_dim: usize,
    pub classes: Vec<ClassSpec>,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    pub orbit: OrbitConfig,
    #[serde(default)]
    pub render: TargetRender,
    /// Standard deviation of Gaussian noise added to target maps.
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    /// 16³ street corner: road, car, tree crown and a pole, seen by 20
    /// orbit cameras alternating between two heights.
    pub fn default_scene() -> Self {
        let class = |name: &str, color: [f64; 3]| ClassSpec { name: name.into(), color };
        Self {
            geometry: GridGeometry { min_corner: [-8.0, -8.0, 0.0], max_corner: [8.0, 8.0, 16.0], resolution: [16; 3] },
            feature_dim: 8,
            classes: vec![
                class("road", [0.35, 0.35, 0.38]),
                class("car", [0.85, 0.15, 0.12]),
                class("vegetation", [0.20, 0.65, 0.20]),
                class("pole", [0.90, 0.80, 0.20]),
            ],
            primitives: vec![
                Primitive { shape: Shape::Box { min: [-7.0, -7.0, 0.0], max: [7.0, 7.0, 1.0] }, class: "road".into() },
                Primitive { shape: Shape::Box { min: [-5.0, -4.0, 1.0], max: [-1.0, -1.0, 3.0] }, class: "car".into() },
                Primitive { shape: Shape::Sphere { center: [3.0, 3.0, 4.0], radius: 2.5 }, class: "vegetation".into() },
                Primitive {
                    shape: Shape::Pole { x: 3.5, y: -3.5, radius: 0.6, z_min: 1.0, z_max: 7.0 },
                    class: "pole".into(),
                },
            ],
            embedding: EmbeddingConfig::default(),
            orbit: OrbitConfig {
                count: 20,
                radius: 20.0,
                height: 18.0,
                look_at: [0.0, 0.0, 2.0],
                image_width: 40,
                image_height: 30,
                fov_deg: 60.0,
                start_angle_deg: 0.0,
                height_drop: 12.0,
            },
            render: TargetRender::default(),
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Config("a scene needs at least one class".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate class name '{}'", c.name)));
            }
        }
        let g = &self.geometry;
        let tol = 1e-9;
        for (i, p) in self.primitives.iter().enumerate() {
            if !self.classes.iter().any(|c| c.name == p.class) {
                return Err(Error::Config(format!("primitive {i} uses undeclared class '{}'", p.class)));
            }
            let (lo, hi) = p.shape.bounds(g);
            if (0..3).any(|a| !(lo[a] <= hi[a]) || lo[a] < g.min_corner[a] - tol || hi[a] > g.max_corner[a] + tol) {
                return Err(Error::Config(format!("primitive {i} ({}) does not fit inside the grid", p.class)));
            }
        }
        let e = &self.embedding;
        if !(e.min_angle_deg >= 0.0 && e.min_angle_deg < 180.0)
            || e.prompts_per_class == 0
            || !(e.prompt_jitter_deg >= 0.0)
        {
            return Err(Error::Config("invalid embedding settings".into()));
        }
        let r = &self.render;
        if !(r.near >= 0.0) || r.n_samples < 2 || !(r.density_scale > 0.0) || r.far.is_some_and(|f| !(f > r.near)) {
            return Err(Error::Config("invalid target render settings".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub grid: VoxelGrid,
    pub labels: SemanticGrid,
    pub track: FramePoseTrack,
    pub vocab: Vocabulary,
    pub features: TargetMaps,
    pub colors: TargetMaps,
    pub near: f64,
    pub far: f64,
}

impl GroundTruthBundle {
    pub fn oracle_settings(&self) -> OracleSettings {
        OracleSettings {
            near: self.near,
            far: self.far,
            n_samples: self.spec.render.n_samples,
            density_scale: self.spec.render.density_scale,
        }
    }

    /// Class embedding of each class, in class order.
    pub fn class_embeddings(&self) -> Vec<Vec<f64>> {
        let labels = self.labels.labels();
        (0..self.spec.classes.len())
            .map(|c| {
                labels.iter().position(|&l| l as usize == c).map(|i| self.grid.feature(i).to_vec()).unwrap_or_default()
            })
            .collect()
    }
}

/// Labels each voxel by the last primitive containing its center.
pub fn voxelize(spec: &SceneSpec) -> Result<Vec<u16>> {
    let g = &spec.geometry;
    let mut labels = vec![FREE_LABEL; g.voxel_count()];
    let mut overlaps = 0usize;
    for p in &spec.primitives {
        let class = spec.classes.iter().position(|c| c.name == p.class).expect("validated") as u16;
        for (i, l) in labels.iter_mut().enumerate() {
            if p.shape.contains(&g.center_of(i)) {
                if *l != FREE_LABEL && *l != class {
                    overlaps += 1;
                }
                *l = class;
            }
        }
    }
    if overlaps > 0 {
        log::warn!("{overlaps} voxels covered by several primitives; later primitives win");
    }
    Ok(labels)
}

pub fn build_scene(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let g = spec.geometry.clone();
    let l = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let min_angle = spec.embedding.min_angle_deg.to_radians();
    let centers = separated_directions(&mut rng, spec.classes.len(), l, min_angle)?;
    let achieved = min_pairwise_angle(&centers);
    assert!(achieved >= min_angle, "class embeddings only {achieved} rad apart");

    let jitter = spec.embedding.prompt_jitter_deg.to_radians();
    let vocab = Vocabulary::new(
        spec.classes
            .iter()
            .zip(&centers)
            .map(|(c, e)| VocabClass {
                name: c.name.clone(),
                prompts: (0..spec.embedding.prompts_per_class)
                    .map(|k| Prompt {
                        text: PROMPT_TEMPLATES[k % PROMPT_TEMPLATES.len()].replace("{}", &c.name),
                        embedding: tilt(&mut rng, e, jitter),
                    })
                    .collect(),
            })
            .collect(),
    )?;

    let labels = voxelize(spec)?;
    let n = g.voxel_count();
    let mut logits = vec![-GT_LOGIT; n];
    let mut features = vec![0.0; n * l];
    let mut rgb = vec![0.0; n * 3];
    for (i, &lab) in labels.iter().enumerate() {
        if lab == FREE_LABEL {
            continue;
        }
        logits[i] = GT_LOGIT;
        features[i * l..(i + 1) * l].copy_from_slice(&centers[lab as usize]);
        rgb[i * 3..i * 3 + 3].copy_from_slice(&spec.classes[lab as usize].color);
    }
    let grid = VoxelGrid::from_parts(g.clone(), l, logits, features, Some(rgb))?;
    let scores = labels.iter().map(|&lab| if lab == FREE_LABEL { 0.0 } else { 1.0 }).collect();
    let sem = SemanticGrid::new(g.clone(), vocab.class_names(), labels, scores)?;

    let track = spec.orbit.track()?;
    let near = spec.render.near;
    let far = spec.render.far.unwrap_or_else(|| default_far(&track, &g));
    let settings =
        OracleSettings { near, far, n_samples: spec.render.n_samples, density_scale: spec.render.density_scale };
    let views: Vec<(i32, usize, &CameraModel)> = track.views(u32::MAX).collect();
    let rendered: Vec<(FeatureMap, FeatureMap)> = views
        .par_iter()
        .enumerate()
        .map(|(v, &(_, _, cam))| {
            let (mut f, c) = oracle_render(&grid, cam, &settings)?;
            let mut c = c.expect("ground truth grid has colors");
            if spec.noise_std > 0.0 {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1 + v as u64));
                let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
                for x in f.data_mut().iter_mut().chain(c.data_mut().iter_mut()) {
                    *x += normal.sample(&mut noise_rng);
                }
            }
            Ok((f, c))
        })
        .collect::<Result<_>>()?;
    let mut feature_maps = TargetMaps::new();
    let mut color_maps = TargetMaps::new();
    for (&(offset, cam_idx, _), (f, c)) in views.iter().zip(rendered) {
        feature_maps.insert((offset, cam_idx), f);
        color_maps.insert((offset, cam_idx), c);
    }
    Ok(GroundTruthBundle {
        spec: spec.clone(),
        grid,
        labels: sem,
        track,
        vocab,
        features: feature_maps,
        colors: color_maps,
        near,
        far,
    })
}

pub const SPEC_FILE: &str = "scene.json";
pub const GRID_FILE: &str = "gt_grid.occg";
pub const LABELS_FILE: &str = "gt_labels.occs";
pub const TRACK_FILE: &str = "track.json";
pub const VOCAB_FILE: &str = "vocab.json";

/// Relative path of a target map; `kind` is `"feat"` or `"rgb"`.
pub fn map_path(kind: &str, offset: i32, camera: usize) -> String {
    format!("maps/{kind}_f{offset}_c{camera}.occf")
}

/// Loads every map of one kind referenced by `track`.
pub fn load_maps(dir: &Path, kind: &str, track: &FramePoseTrack) -> Result<TargetMaps> {
    track.views(u32::MAX).map(|(o, c, _)| Ok(((o, c), FeatureMap::load(&dir.join(map_path(kind, o, c)))?))).collect()
}

impl GroundTruthBundle {
    /// Writes the bundle directory and its manifest.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir.join("maps"))?;
        std::fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        self.grid.save(&dir.join(GRID_FILE))?;
        self.labels.save(&dir.join(LABELS_FILE))?;
        self.track.save(&dir.join(TRACK_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let mut manifest = Manifest::new(
            "synth",
            self.spec.seed,
            serde_json::json!({ "spec": self.spec, "near": self.near, "far": self.far }),
        );
        for rel in [SPEC_FILE, GRID_FILE, LABELS_FILE, TRACK_FILE, VOCAB_FILE] {
            manifest.add_file(dir, rel)?;
        }
        for (kind, maps) in [("feat", &self.features), ("rgb", &self.colors)] {
            for (&(o, c), map) in maps {
                let rel = map_path(kind, o, c);
                map.save(&dir.join(&rel))?;
                manifest.add_file(dir, &rel)?;
            }
        }
        manifest.save(dir)?;
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(&std::fs::read_to_string(dir.join(SPEC_FILE))?)?;
        spec.validate()?;
        let manifest = Manifest::load(dir)?;
        let near = manifest.config.get("near").and_then(|v| v.as_f64()).unwrap_or(spec.render.near);
        let track = FramePoseTrack::load(&dir.join(TRACK_FILE))?;
        let far = manifest
            .config
            .get("far")
            .and_then(|v| v.as_f64())
            .unwrap_or_else(|| spec.render.far.unwrap_or_else(|| default_far(&track, &spec.geometry)));
        Ok(Self {
            grid: VoxelGrid::load(&dir.join(GRID_FILE))?,
            labels: SemanticGrid::load(&dir.join(LABELS_FILE))?,
            vocab: Vocabulary::load(&dir.join(VOCAB_FILE))?,
            features: load_maps(dir, "feat", &track)?,
            colors: load_maps(dir, "rgb", &track)?,
            track,
            spec,
            near,
            far,
        })
    }
}

/// Settings for a synthetic prompt set: `classes × per_class` unit vectors
/// in `dim` dimensions lying close to a random `intrinsic_dim` subspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSetConfig {
    pub dim: usize,
    pub intrinsic_dim: usize,
    pub classes: usize,
    pub per_class: usize,
    /// Minimum angle between class centers.
    pub class_min_angle_deg: f64,
    /// Angle of each prompt from its class center.
    pub prompt_spread_deg: f64,
    /// Minimum angle between prompts of the same class.
    pub prompt_min_angle_deg: f64,
    /// Per-coordinate standard deviation of the off-subspace noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PromptSetConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            intrinsic_dim: 12,
            classes: 10,
            per_class: 4,
            class_min_angle_deg: 70.0,
            prompt_spread_deg: 20.0,
            prompt_min_angle_deg: 25.0,
            noise_std: 0.004,
            seed: 0,
        }
    }
}

/// Class index and unit embedding of every prompt, class by class.
pub fn synthetic_prompts(cfg: &PromptSetConfig) -> Result<Vec<(usize, Vec<f64>)>> {
    if cfg.intrinsic_dim == 0 || cfg.intrinsic_dim > cfg.dim {
        return Err(Error::Config("intrinsic_dim must lie in 1..=dim".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = separated_directions(&mut rng, cfg.classes, cfg.intrinsic_dim, cfg.class_min_angle_deg.to_radians())?;
    let spread = cfg.prompt_spread_deg.to_radians();
    let min_within = cfg.prompt_min_angle_deg.to_radians();
    let mut latent = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        let mut members: Vec<Vec<f64>> = Vec::new();
        let mut attempts = 0;
        while members.len() < cfg.per_class {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::Config("cannot satisfy the within-class prompt separation".into()));
            }
            let p = tilt(&mut rng, center, spread);
            if members.iter().all(|m| embeddings::angle(m, &p) >= min_within) {
                members.push(p);
            }
        }
        latent.extend(members.into_iter().map(|m| (c, m)));
    }
    // orthonormal basis of the embedding subspace by Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.intrinsic_dim);
    while basis.len() < cfg.intrinsic_dim {
        let mut v = random_unit(&mut rng, cfg.dim);
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = embeddings::norm(&v);
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let normal = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    Ok(latent
        .into_iter()
        .map(|(c, z)| {
            let mut v = vec![0.0; cfg.dim];
            for (zk, b) in z.iter().zip(&basis) {
                v.iter_mut().zip(b).for_each(|(x, y)| *x += zk * y);
            }
            if cfg.noise_std > 0.0 {
                v.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
            }
            let n = embeddings::norm(&v);
            (c, v.into_iter().map(|x| x / n).collect())
        })
        .collect())
}

/// Small random grid with varied densities, features and colors.
pub fn random_grid(geometry: GridGeometry, feature_dim: usize, seed: u64) -> Result<VoxelGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geometry.voxel_count();
    let logits = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let features = (0..n * feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rgb = (0..n * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    VoxelGrid::from_parts(geometry, feature_dim, logits, features, Some(rgb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::{render_feature_map, RenderSettings};

    fn small_spec() -> SceneSpec {
        let mut s = SceneSpec::default_scene();
        s.orbit.count = 3;
        s.orbit.image_width = 8;
        s.orbit.image_height = 6;
        s.render.n_samples = 24;
        s
    }

    #[test]
    fn box_voxel_count_is_analytic() {
        let mut s = small_spec();
        s.primitives =
            vec![Primitive { shape: Shape::Box { min: [-2.0, -1.0, 0.0], max: [2.0, 1.0, 2.0] }, class: "car".into() }];
        let labels = voxelize(&s).unwrap();
        assert_eq!(labels.iter().filter(|&&l| l != FREE_LABEL).count(), 4 * 2 * 2);
        s.primitives = vec![Primitive { shape: Shape::Box { min: [0.0; 3], max: [1.0; 3] }, class: "car".into() }];
        assert_eq!(voxelize(&s).unwrap().iter().filter(|&&l| l == 1).count(), 1);
    }

    #[test]
    fn empty_scene() {
        let mut s = small_spec();
        s.primitives.clear();
        let b = build_scene(&s).unwrap();
        assert!(b.labels.labels().iter().all(|&l| l == FREE_LABEL));
        assert!(b.grid.densities().iter().all(|&d| d < 1e-17));
        assert!(b.features.values().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn saturated_rays_see_their_class() {
        // two classes 90° apart; a camera looking straight down into a thick
        // slab of class A
        let mut s = small_spec();
        s.classes.truncate(2);
        s.embedding.min_angle_deg = 90.0;
        s.primitives = vec![Primitive { shape: Shape::Plane { z_min: 0.0, z_max: 8.0 }, class: "road".into() }];
        s.render.density_scale = 10.0;
        let b = build_scene(&s).unwrap();
        let emb = b.class_embeddings();
        assert!(emb[1].is_empty());
        let pose = Pose::look_at(Vector3::new(0.0, 1.0, 15.0), Vector3::new(0.0, 0.0, 0.0), Vector3::z()).unwrap();
        let cam = CameraModel::with_fov(3, 3, 20.0, pose).unwrap();
        let (f, _) = oracle_render(&b.grid, &cam, &b.oracle_settings()).unwrap();
        let px = f.pixel(1, 1);
        assert!(1.0 - embeddings::angle(px, &emb[0]).cos() < 1e-12);
        assert!(embeddings::norm(px) > 0.1);
    }

    #[test]
    fn class_separation_is_enforced() {
        let b = build_scene(&small_spec()).unwrap();
        let emb = b.class_embeddings();
        assert!(min_pairwise_angle(&emb) >= 60f64.to_radians());
        let mut bad = small_spec();
        bad.embedding.min_angle_deg = 120.0;
        assert!(build_scene(&bad).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec();
        s.primitives
            .push(Primitive { shape: Shape::Sphere { center: [7.0, 0.0, 4.0], radius: 2.0 }, class: "car".into() });
        assert!(build_scene(&s).is_err());
        let mut s = small_spec();
        s.primitives[0].class = "sky".into();
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.classes.push(s.classes[0].clone());
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&SceneSpec::default_scene()).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&json).unwrap(), SceneSpec::default_scene());
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let mut s = small_spec();
        s.noise_std = 0.01;
        let a = build_scene(&s).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = a.write(dir_a.path()).unwrap();
        let mb = build_scene(&s).unwrap().write(dir_b.path()).unwrap();
        assert_eq!(ma, mb);
        let back = GroundTruthBundle::read(dir_a.path()).unwrap();
        assert_eq!(back.track, a.track);
        assert_eq!(back.vocab, a.vocab);
        assert_eq!(back.labels, a.labels);
        assert_eq!(back.far, a.far);
        assert_eq!(back.features.len(), 3);
        ma.verify(dir_a.path()).unwrap();
    }

    #[test]
    fn targets_agree_with_the_renderer() {
        let b = build_scene(&small_spec()).unwrap();
        let o = b.oracle_settings();
        let settings =
            RenderSettings { density_scale: o.density_scale, ..RenderSettings::uniform(o.near, o.far, o.n_samples) };
        for (offset, cam_idx, cam) in b.track.views(u32::MAX) {
            let fast = render_feature_map(&b.grid, cam, &settings).unwrap();
            let want = &b.features[&(offset, cam_idx)];
            for (x, y) in fast.features.data().iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prompt_sets_respect_separation() {
        let cfg = PromptSetConfig::default();
        let prompts = synthetic_prompts(&cfg).unwrap();
        assert_eq!(prompts.len(), 40);
        for (i, (ci, a)) in prompts.iter().enumerate() {
            assert!((embeddings::norm(a) - 1.0).abs() < 1e-12);
            for (cj, b) in &prompts[i + 1..] {
                if ci == cj {
                    // noise can shave a little off the latent separation
                    assert!(embeddings::angle(a, b) > 24f64.to_radians());
                }
            }
        }
    }
}
