//! Dense voxel grid of density logits and feature vectors.
//!
//! Values live at voxel centers. A point is interpolated from the eight
//! surrounding centers; inside the half-voxel band along the boundary the
//! lookup clamps to the outermost centers, and points outside the grid box
//! sample as zero.
//!
//! Voxel `(x, y, z)` has linear index `x + X * (y + Y * z)`. Features are
//! stored voxel-major with the `L` channels of a voxel contiguous.

use crate::binio::*;
use crate::{sigmoid, Error, Result};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const GRID_MAGIC: &[u8; 4] = b"OCCG";
/// Grid file without an RGB section.
pub const GRID_VERSION: u32 = 1;
/// Grid file followed by a 3-channel RGB section.
pub const GRID_VERSION_RGB: u32 = 2;

/// Density logit of a freshly initialized grid (sigmoid ≈ 0.12).
pub const INIT_LOGIT: f64 = -2.0;
/// Half-width of the uniform noise on initial features.
pub const INIT_FEATURE_NOISE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub min_corner: [f64; 3],
    pub max_corner: [f64; 3],
    pub resolution: [usize; 3],
}

/// Eight interpolation corners of a point and their trilinear weights.
#[derive(Clone, Copy, Debug)]
pub struct Trilinear {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

impl GridGeometry {
    pub fn new(min_corner: [f64; 3], max_corner: [f64; 3], resolution: [usize; 3]) -> Result<Self> {
        let g = Self { min_corner, max_corner, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min_corner[a].is_finite() && self.max_corner[a].is_finite()) {
                return Err(Error::Domain("grid corners must be finite".into()));
            }
            if self.max_corner[a] <= self.min_corner[a] {
                return Err(Error::Domain(format!("grid axis {a}: max corner must exceed min corner")));
            }
            if self.resolution[a] == 0 {
                return Err(Error::Domain(format!("grid axis {a}: resolution must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.max_corner[a] - self.min_corner[a]) / self.resolution[a] as f64)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution[0] * (y + self.resolution[1] * z)
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let s = self.voxel_size();
        Vector3::new(
            self.min_corner[0] + (x as f64 + 0.5) * s[0],
            self.min_corner[1] + (y as f64 + 0.5) * s[1],
            self.min_corner[2] + (z as f64 + 0.5) * s[2],
        )
    }

    pub fn center_of(&self, index: usize) -> Vector3<f64> {
        let [x, y, z] = self.coords(index);
        self.voxel_center(x, y, z)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min_corner[a] && p[a] <= self.max_corner[a])
    }

    pub fn diagonal(&self) -> f64 {
        (0..3).map(|a| (self.max_corner[a] - self.min_corner[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from_fn(|a, _| 0.5 * (self.min_corner[a] + self.max_corner[a]))
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|k| {
            Vector3::new(
                if k & 1 == 0 { self.min_corner[0] } else { self.max_corner[0] },
                if k & 2 == 0 { self.min_corner[1] } else { self.max_corner[1] },
                if k & 4 == 0 { self.min_corner[2] } else { self.max_corner[2] },
            )
        })
    }

    /// Interpolation stencil for `p`, or `None` when `p` is outside the box.
    /// Corner `k` takes the upper neighbor along axis `a` when bit `a` of `k`
    /// is set.
    #[inline]
    pub fn trilinear(&self, p: &Vector3<f64>) -> Option<Trilinear> {
        if !self.contains(p) {
            return None;
        }
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let size = (self.max_corner[a] - self.min_corner[a]) / n as f64;
            let g = ((p[a] - self.min_corner[a]) / size - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = (g.floor() as usize).min(n - 1);
            lo[a] = i0;
            hi[a] = (i0 + 1).min(n - 1);
            frac[a] = g - i0 as f64;
        }
        let mut index = [0usize; 8];
        let mut weight = [0f64; 8];
        for k in 0..8 {
            let (x, wx) = if k & 1 == 0 { (lo[0], 1.0 - frac[0]) } else { (hi[0], frac[0]) };
            let (y, wy) = if k & 2 == 0 { (lo[1], 1.0 - frac[1]) } else { (hi[1], frac[1]) };
            let (z, wz) = if k & 4 == 0 { (lo[2], 1.0 - frac[2]) } else { (hi[2], frac[2]) };
            index[k] = self.index(x, y, z);
            weight[k] = wx * wy * wz;
        }
        Some(Trilinear { index, weight })
    }
}

/// Mutable view of the optimizable parameters.
pub struct ParamsMut<'a> {
    pub logits: &'a mut [f64],
    pub features: &'a mut [f64],
    pub rgb: Option<&'a mut [f64]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    geometry: GridGeometry,
    feature_dim: usize,
    density_logits: Vec<f64>,
    /// sigmoid(density_logits), kept in sync on every mutation.
    densities: Vec<f64>,
    features: Vec<f64>,
    /// Optional view-independent color, 3 channels per voxel.
    rgb: Option<Vec<f64>>,
}

fn check_point(p: &Vector3<f64>) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("sample point is not finite: {p:?}")))
    }
}

impl VoxelGrid {
    pub fn from_parts(
        geometry: GridGeometry,
        feature_dim: usize,
        density_logits: Vec<f64>,
        features: Vec<f64>,
        rgb: Option<Vec<f64>>,
    ) -> Result<Self> {
        geometry.validate()?;
        let n = geometry.voxel_count();
        if feature_dim == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if density_logits.len() != n {
            return Err(Error::Config(format!("expected {n} density logits, got {}", density_logits.len())));
        }
        if features.len() != n * feature_dim {
            return Err(Error::Config(format!("expected {} feature values, got {}", n * feature_dim, features.len())));
        }
        if let Some(c) = &rgb {
            if c.len() != n * 3 {
                return Err(Error::Config(format!("expected {} rgb values, got {}", n * 3, c.len())));
            }
        }
        let densities = density_logits.iter().map(|&l| sigmoid(l)).collect();
        Ok(Self { geometry, feature_dim, density_logits, densities, features, rgb })
    }

    /// Fitting start: logits at [`INIT_LOGIT`], features uniform in
    /// ±[`INIT_FEATURE_NOISE`].
    pub fn initialized(geometry: GridGeometry, feature_dim: usize, with_rgb: bool, seed: u64) -> Result<Self> {
        let n = geometry.voxel_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features =
            (0..n * feature_dim).map(|_| rng.random_range(-INIT_FEATURE_NOISE..=INIT_FEATURE_NOISE)).collect();
        let rgb =
            with_rgb.then(|| (0..n * 3).map(|_| rng.random_range(-INIT_FEATURE_NOISE..=INIT_FEATURE_NOISE)).collect());
        Self::from_parts(geometry, feature_dim, vec![INIT_LOGIT; n], features, rgb)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn voxel_count(&self) -> usize {
        self.density_logits.len()
    }

    pub fn density_logits(&self) -> &[f64] {
        &self.density_logits
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature(&self, voxel: usize) -> &[f64] {
        &self.features[voxel * self.feature_dim..(voxel + 1) * self.feature_dim]
    }

    pub fn rgb(&self) -> Option<&[f64]> {
        self.rgb.as_deref()
    }

    pub fn has_rgb(&self) -> bool {
        self.rgb.is_some()
    }

    /// Mutates parameters and refreshes the cached densities.
    pub fn update_params<F: FnOnce(ParamsMut<'_>)>(&mut self, f: F) {
        f(ParamsMut { logits: &mut self.density_logits, features: &mut self.features, rgb: self.rgb.as_deref_mut() });
        for (d, &l) in self.densities.iter_mut().zip(&self.density_logits) {
            *d = sigmoid(l);
        }
    }

    pub fn set_logit(&mut self, voxel: usize, logit: f64) {
        self.density_logits[voxel] = logit;
        self.densities[voxel] = sigmoid(logit);
    }

    pub fn set_feature(&mut self, voxel: usize, value: &[f64]) {
        let l = self.feature_dim;
        self.features[voxel * l..(voxel + 1) * l].copy_from_slice(value);
    }

    /// Density in [0, 1] at `p`; zero outside the grid.
    pub fn sample_density(&self, p: &Vector3<f64>) -> Result<f64> {
        check_point(p)?;
        Ok(self.geometry.trilinear(p).map_or(0.0, |t| self.density_at(&t)))
    }

    /// Interpolated feature vector at `p`; zero outside the grid.
    pub fn sample_feature(&self, p: &Vector3<f64>) -> Result<Vec<f64>> {
        check_point(p)?;
        let mut out = vec![0.0; self.feature_dim];
        if let Some(t) = self.geometry.trilinear(p) {
            self.feature_at(&t, &mut out);
        }
        Ok(out)
    }

    #[inline]
    pub fn density_at(&self, t: &Trilinear) -> f64 {
        let mut d = 0.0;
        for k in 0..8 {
            d += t.weight[k] * self.densities[t.index[k]];
        }
        d
    }

    /// Writes the interpolated feature into `out` (length `L`).
    #[inline]
    pub fn feature_at(&self, t: &Trilinear, out: &mut [f64]) {
        let l = self.feature_dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..8 {
            let w = t.weight[k];
            let src = &self.features[t.index[k] * l..(t.index[k] + 1) * l];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }

    /// Interpolated color, or `None` without an RGB channel.
    #[inline]
    pub fn rgb_at(&self, t: &Trilinear) -> Option<[f64; 3]> {
        let rgb = self.rgb.as_ref()?;
        let mut out = [0.0; 3];
        for k in 0..8 {
            let w = t.weight[k];
            for c in 0..3 {
                out[c] += w * rgb[t.index[k] * 3 + c];
            }
        }
        Some(out)
    }

    /// Adjoint of [`sample_density`](Self::sample_density) and
    /// [`sample_feature`](Self::sample_feature): adds the corner contributions
    /// of upstream gradients at `p` into `grad`. The density path is chained
    /// through the sigmoid onto the logits.
    pub fn scatter_gradient(&self, p: &Vector3<f64>, d_density: f64, d_feature: &[f64], grad: &mut GridGradient) {
        if let Some(t) = self.geometry.trilinear(p) {
            self.scatter_at(&t, d_density, d_feature, None, grad);
        }
    }

    #[inline]
    pub fn scatter_at(
        &self,
        t: &Trilinear,
        d_density: f64,
        d_feature: &[f64],
        d_rgb: Option<&[f64; 3]>,
        grad: &mut GridGradient,
    ) {
        let l = self.feature_dim;
        for k in 0..8 {
            let i = t.index[k];
            let w = t.weight[k];
            if d_density != 0.0 {
                let s = self.densities[i];
                grad.density[i] += d_density * w * s * (1.0 - s);
            }
            let dst = &mut grad.features[i * l..(i + 1) * l];
            for (g, d) in dst.iter_mut().zip(d_feature) {
                *g += w * d;
            }
            if let (Some(d_rgb), Some(g_rgb)) = (d_rgb, grad.rgb.as_mut()) {
                for c in 0..3 {
                    g_rgb[i * 3 + c] += w * d_rgb[c];
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        write_u32(w, if self.rgb.is_some() { GRID_VERSION_RGB } else { GRID_VERSION })?;
        for &n in &self.geometry.resolution {
            write_u32(w, n as u32)?;
        }
        write_u32(w, self.feature_dim as u32)?;
        for &v in self.geometry.min_corner.iter().chain(&self.geometry.max_corner) {
            write_f64(w, v)?;
        }
        write_f32_slice(w, &self.density_logits)?;
        write_f32_slice(w, &self.features)?;
        if let Some(rgb) = &self.rgb {
            write_f32_slice(w, rgb)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, GRID_MAGIC)?;
        let version = read_u32(r)?;
        if version != GRID_VERSION && version != GRID_VERSION_RGB {
            return Err(Error::Format(format!("unsupported grid file version {version}")));
        }
        let resolution = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let feature_dim = read_u32(r)? as usize;
        let min_corner = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let max_corner = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let geometry = GridGeometry::new(min_corner, max_corner, resolution)
            .map_err(|e| Error::Format(format!("grid header: {e}")))?;
        let n = geometry.voxel_count();
        let logits = read_f32_vec(r, n)?;
        let features = read_f32_vec(r, n * feature_dim)?;
        let rgb = if version == GRID_VERSION_RGB { Some(read_f32_vec(r, n * 3)?) } else { None };
        expect_eof(r)?;
        Self::from_parts(geometry, feature_dim, logits, features, rgb)
    }
}

/// Accumulated ∂loss/∂parameters, shaped like a [`VoxelGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridGradient {
    pub density: Vec<f64>,
    pub features: Vec<f64>,
    pub rgb: Option<Vec<f64>>,
}

impl GridGradient {
    pub fn zeros_like(grid: &VoxelGrid) -> Self {
        let n = grid.voxel_count();
        Self {
            density: vec![0.0; n],
            features: vec![0.0; n * grid.feature_dim()],
            rgb: grid.has_rgb().then(|| vec![0.0; n * 3]),
        }
    }

    pub fn zero(&mut self) {
        self.density.iter_mut().for_each(|v| *v = 0.0);
        self.features.iter_mut().for_each(|v| *v = 0.0);
        if let Some(rgb) = &mut self.rgb {
            rgb.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add_assign(&mut self, other: &GridGradient) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add(&mut self.density, &other.density);
        add(&mut self.features, &other.features);
        if let (Some(a), Some(b)) = (&mut self.rgb, &other.rgb) {
            add(a, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.density.iter().chain(&self.features).chain(self.rgb.iter().flatten()).all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.density.iter().chain(&self.features).chain(self.rgb.iter().flatten()).fold(0.0, |m, v| m.max(v.abs()))
    }
}
