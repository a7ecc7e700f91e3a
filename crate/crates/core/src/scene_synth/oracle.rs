//! Reference renderer for target generation and for checking
//! [`crate::renderer`].
//!
//! Written separately on purpose: its own ray construction, its own
//! interpolation (explicit corner loops in voxel coordinates) and
//! transmittance from a running optical-depth sum instead of a running
//! product. Only uniform sampling is supported.

use crate::camera::CameraModel;
use crate::feature_map::FeatureMap;
use crate::grid::VoxelGrid;
use crate::{Error, Result};
use nalgebra::Vector3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSettings {
    pub near: f64,
    pub far: f64,
    pub n_samples: usize,
    pub density_scale: f64,
}

/// Interpolates channel data stored per voxel (`stride` values each) at `p`.
/// Returns `false` without touching `out` when `p` is outside the box.
fn interpolate(grid: &VoxelGrid, data: &[f64], stride: usize, p: &Vector3<f64>, out: &mut [f64]) -> bool {
    let g = grid.geometry();
    let mut cell = [0.0f64; 3];
    for a in 0..3 {
        if p[a] < g.min_corner[a] || p[a] > g.max_corner[a] {
            return false;
        }
        let n = g.resolution[a] as f64;
        // continuous index where voxel centers sit on integers
        let c = (p[a] - g.min_corner[a]) * n / (g.max_corner[a] - g.min_corner[a]) - 0.5;
        cell[a] = c.max(0.0).min(n - 1.0);
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let [nx, ny, nz] = g.resolution;
    let base = [cell[0].floor() as usize, cell[1].floor() as usize, cell[2].floor() as usize];
    for dz in 0..2 {
        let z = (base[2] + dz).min(nz - 1);
        let wz = if dz == 0 { 1.0 - (cell[2] - base[2] as f64) } else { cell[2] - base[2] as f64 };
        for dy in 0..2 {
            let y = (base[1] + dy).min(ny - 1);
            let wy = if dy == 0 { 1.0 - (cell[1] - base[1] as f64) } else { cell[1] - base[1] as f64 };
            for dx in 0..2 {
                let x = (base[0] + dx).min(nx - 1);
                let wx = if dx == 0 { 1.0 - (cell[0] - base[0] as f64) } else { cell[0] - base[0] as f64 };
                let w = wx * wy * wz;
                if w == 0.0 {
                    continue;
                }
                let v = (z * ny + y) * nx + x;
                for (o, d) in out.iter_mut().zip(&data[v * stride..(v + 1) * stride]) {
                    *o += w * d;
                }
            }
        }
    }
    true
}

/// Renders feature (and, when the grid has one, color) images of `cam`.
pub fn oracle_render(
    grid: &VoxelGrid,
    cam: &CameraModel,
    s: &OracleSettings,
) -> Result<(FeatureMap, Option<FeatureMap>)> {
    if !(s.near >= 0.0 && s.far > s.near && s.n_samples >= 2) {
        return Err(Error::Domain(format!("bad oracle settings {s:?}")));
    }
    let (w, h) = (cam.width as usize, cam.height as usize);
    let l = grid.feature_dim();
    let mut features = FeatureMap::zeros(h, w, l);
    let mut colors = grid.rgb().map(|_| FeatureMap::zeros(h, w, 3));
    let r = &cam.pose.rotation;
    let eye = cam.pose.translation;
    let n = s.n_samples;
    let spacing = (s.far - s.near) / (n - 1) as f64;
    let last_delta = (s.far - s.near) / n as f64;
    let mut rho = [0.0];
    let mut psi = vec![0.0; l];
    let mut col = [0.0; 3];
    for py in 0..h {
        for px in 0..w {
            let dir_cam = Vector3::new((px as f64 + 0.5 - cam.cx) / cam.fx, (py as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
            let d = r * dir_cam;
            let d = d / d.norm();
            let mut optical_depth = 0.0f64;
            let mut acc = vec![0.0; l];
            let mut acc_rgb = [0.0; 3];
            for j in 0..n {
                let t = if j + 1 == n { s.far } else { s.near + j as f64 * spacing };
                let delta = match n - j {
                    1 => last_delta,
                    2 => s.far - t,
                    _ => s.near + (j + 1) as f64 * spacing - t,
                };
                let p = eye + d * t;
                if !interpolate(grid, grid.densities(), 1, &p, &mut rho) {
                    continue;
                }
                let sigma = s.density_scale * rho[0];
                let alpha = 1.0 - (-sigma * delta).exp();
                let weight = (-optical_depth).exp() * alpha;
                optical_depth += sigma * delta;
                interpolate(grid, grid.features(), l, &p, &mut psi);
                for (a, v) in acc.iter_mut().zip(&psi) {
                    *a += weight * v;
                }
                if let Some(rgb) = grid.rgb() {
                    interpolate(grid, rgb, 3, &p, &mut col);
                    for c in 0..3 {
                        acc_rgb[c] += weight * col[c];
                    }
                }
            }
            features.pixel_mut(px, py).copy_from_slice(&acc);
            if let Some(m) = colors.as_mut() {
                m.pixel_mut(px, py).copy_from_slice(&acc_rgb);
            }
        }
    }
    Ok((features, colors))
}
