//! Pinhole cameras, pose tracks over temporal offsets, and ray generation.
//!
//! Camera frame convention: +x right, +y down, +z forward. Poses map camera
//! coordinates to world coordinates. Pixel `(u, v)` addresses continuous
//! image coordinates, so the center of pixel `(i, j)` is `(i + 0.5, j + 0.5)`.

use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tolerance for the orthonormality and unit-norm checks.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Rigid transform from camera to world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        let max_dev = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !max_dev.is_finite() || max_dev > ROTATION_TOLERANCE {
            return Err(Error::Domain(format!("rotation is not orthonormal (max |RᵀR − I| = {max_dev:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Domain(format!("rotation determinant is {det}, expected +1")));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("translation is not finite".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Camera placed at `eye` looking at `target`, with world `up` mapped to
    /// image-up (−y).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Domain("look_at target coincides with eye".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Domain("look_at direction is parallel to up".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Self::new(Matrix3::from_columns(&[right, down, forward]), eye)
    }

    /// Row-major `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t[0],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t[1],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[2],
        ]
    }

    pub fn from_row_major(m: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: Pose,
}

/// On-disk form of a camera: intrinsics plus a row-major 3×4 pose.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    pose: [f64; 12],
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let pose = Pose::from_row_major(&r.pose)?;
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, pose)
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose: c.pose.to_row_major(),
        }
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, pose: Pose) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Domain(format!("focal lengths must be positive (fx={fx}, fy={fy})")));
        }
        if !(cx > 0.0 && cx < width as f64) || !(cy > 0.0 && cy < height as f64) {
            return Err(Error::Domain(format!("principal point ({cx}, {cy}) outside image {width}×{height}")));
        }
        Ok(Self { fx, fy, cx, cy, width, height, pose })
    }

    /// Square-pixel camera with the principal point at the image center and
    /// the given horizontal field of view.
    pub fn with_fov(width: u32, height: u32, fov_x_deg: f64, pose: Pose) -> Result<Self> {
        if !(fov_x_deg > 0.0 && fov_x_deg < 180.0) {
            return Err(Error::Domain(format!("field of view {fov_x_deg}° out of range")));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, pose)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.pose.translation
    }

    /// Projects a world point to `(u, v, depth)`; depth is the camera-frame z.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let pc = self.pose.rotation.transpose() * (p - self.pose.translation);
        let z = pc[2];
        (self.fx * pc[0] / z + self.cx, self.fy * pc[1] / z + self.cy, z)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
    pub pixel: (f64, f64),
    pub frame_index: i32,
    pub camera_index: usize,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Ray through continuous pixel coordinate `(u, v)`.
pub fn pixel_to_ray(cam: &CameraModel, u: f64, v: f64) -> Result<Ray> {
    if !(u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64) {
        return Err(Error::Domain(format!("pixel ({u}, {v}) outside image {}×{}", cam.width, cam.height)));
    }
    let local = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let direction = (cam.pose.rotation * local).normalize();
    Ok(Ray { origin: cam.pose.translation, direction, pixel: (u, v), frame_index: 0, camera_index: 0 })
}

/// All cameras of the rig at one temporal offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub offset: i32,
    pub cameras: Vec<CameraModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrackRecord")]
pub struct FramePoseTrack {
    frames: Vec<Frame>,
}

#[derive(Deserialize)]
struct TrackRecord {
    frames: Vec<Frame>,
}

impl TryFrom<TrackRecord> for FramePoseTrack {
    type Error = Error;

    fn try_from(r: TrackRecord) -> Result<Self> {
        FramePoseTrack::new(r.frames)
    }
}

impl FramePoseTrack {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Domain("track has no frames".into()));
        }
        if frames.windows(2).any(|w| w[0].offset >= w[1].offset) {
            return Err(Error::Domain("frame offsets must be strictly increasing".into()));
        }
        if !frames.iter().any(|f| f.offset == 0) {
            return Err(Error::Domain("track has no frame at offset 0".into()));
        }
        if let Some(f) = frames.iter().find(|f| f.cameras.is_empty()) {
            return Err(Error::Domain(format!("frame {} has no cameras", f.offset)));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, offset: i32) -> Option<&Frame> {
        self.frames.iter().find(|f| f.offset == offset)
    }

    /// Largest |offset| in the track.
    pub fn extent(&self) -> u32 {
        self.frames.iter().map(|f| f.offset.unsigned_abs()).max().unwrap_or(0)
    }

    /// `(offset, camera index, camera)` for every view with |offset| ≤ horizon.
    pub fn views(&self, horizon: u32) -> impl Iterator<Item = (i32, usize, &CameraModel)> {
        self.frames
            .iter()
            .filter(move |f| f.offset.unsigned_abs() <= horizon)
            .flat_map(|f| f.cameras.iter().enumerate().map(move |(i, c)| (f.offset, i, c)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Draws `n_rays` rays uniformly over (offset in [−horizon, +horizon]) ×
/// camera × pixel center. Offsets beyond the track are simply absent.
pub fn sample_ray_batch(track: &FramePoseTrack, n_rays: usize, horizon: u32, rng_seed: u64) -> Result<Vec<Ray>> {
    if n_rays == 0 {
        return Err(Error::Domain("n_rays must be at least 1".into()));
    }
    let views: Vec<_> = track.views(horizon).collect();
    if views.is_empty() {
        return Err(Error::Domain("no views within the horizon".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut rays = Vec::with_capacity(n_rays);
    for _ in 0..n_rays {
        let (offset, cam_idx, cam) = views[rng.random_range(0..views.len())];
        let i = rng.random_range(0..cam.width);
        let j = rng.random_range(0..cam.height);
        let mut ray = pixel_to_ray(cam, i as f64 + 0.5, j as f64 + 0.5)?;
        ray.frame_index = offset;
        ray.camera_index = cam_idx;
        rays.push(ray);
    }
    Ok(rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam(pose: Pose) -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100, pose).unwrap()
    }

    fn small_track(frames: std::ops::RangeInclusive<i32>) -> FramePoseTrack {
        let frames =
            frames.map(|o| Frame { offset: o, cameras: vec![cam(Pose::identity()), cam(Pose::identity())] }).collect();
        FramePoseTrack::new(frames).unwrap()
    }

    #[test]
    fn principal_ray_of_identity_camera() {
        let r = pixel_to_ray(&cam(Pose::identity()), 50.0, 50.0).unwrap();
        assert_eq!(r.direction, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(r.origin, Vector3::zeros());
    }

    #[test]
    fn off_axis_pixel() {
        let c = CameraModel::new(100.0, 100.0, 50.0, 50.0, 200, 100, Pose::identity()).unwrap();
        let r = pixel_to_ray(&c, 150.0, 50.0).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(r.direction[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.direction[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.direction[2], s, epsilon = 1e-15);
    }

    #[test]
    fn yawed_camera_rotates_principal_ray() {
        // 90° about +y maps +z to +x.
        let rot = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        let pose = Pose::new(rot, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let r = pixel_to_ray(&cam(pose), 50.0, 50.0).unwrap();
        assert_abs_diff_eq!(r.direction[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.direction[2], 0.0, epsilon = 1e-15);
        assert_eq!(r.origin, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        let c = cam(Pose::identity());
        assert!(matches!(pixel_to_ray(&c, 100.0, 10.0), Err(Error::Domain(_))));
        assert!(matches!(pixel_to_ray(&c, -0.1, 10.0), Err(Error::Domain(_))));
        assert!(matches!(pixel_to_ray(&c, f64::NAN, 10.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_bad_intrinsics_and_rotations() {
        assert!(CameraModel::new(0.0, 1.0, 5.0, 5.0, 10, 10, Pose::identity()).is_err());
        assert!(CameraModel::new(1.0, 1.0, 10.0, 5.0, 10, 10, Pose::identity()).is_err());
        let scaled = Matrix3::identity() * 1.001;
        assert!(Pose::new(scaled, Vector3::zeros()).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_faces_target() {
        let eye = Vector3::new(10.0, -3.0, 4.0);
        let target = Vector3::new(0.0, 0.0, 1.0);
        let pose = Pose::look_at(eye, target, Vector3::z()).unwrap();
        let c = CameraModel::with_fov(32, 32, 60.0, pose).unwrap();
        let (u, v, z) = c.project(&target);
        assert_abs_diff_eq!(u, 16.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 16.0, epsilon = 1e-9);
        assert!(z > 0.0);
        // world up projects above the center
        let (_, v_up, _) = c.project(&(target + Vector3::z()));
        assert!(v_up < 16.0);
    }

    #[test]
    fn track_validation() {
        let f = |o| Frame { offset: o, cameras: vec![cam(Pose::identity())] };
        assert!(FramePoseTrack::new(vec![]).is_err());
        assert!(FramePoseTrack::new(vec![f(1), f(2)]).is_err());
        assert!(FramePoseTrack::new(vec![f(0), f(0)]).is_err());
        assert!(FramePoseTrack::new(vec![f(1), f(0)]).is_err());
        assert!(FramePoseTrack::new(vec![f(-1), f(0), f(3)]).is_ok());
    }

    #[test]
    fn track_json_round_trip_and_rejection() {
        let track = small_track(-1..=1);
        let text = serde_json::to_string(&track).unwrap();
        let back: FramePoseTrack = serde_json::from_str(&text).unwrap();
        assert_eq!(back, track);
        let bad = text.replacen("\"pose\":[1.0", "\"pose\":[1.5", 1);
        assert_ne!(bad, text);
        assert!(serde_json::from_str::<FramePoseTrack>(&bad).is_err());
    }

    #[test]
    fn batch_respects_horizon_and_seed() {
        let track = small_track(-12..=12);
        let rays = sample_ray_batch(&track, 32786, 12, 3).unwrap();
        assert_eq!(rays.len(), 32786);
        assert!(rays.iter().all(|r| (-12..=12).contains(&r.frame_index)));
        assert!(rays.iter().any(|r| r.frame_index == -12));
        assert!(rays.iter().any(|r| r.frame_index == 12));

        let zero = sample_ray_batch(&track, 500, 0, 3).unwrap();
        assert!(zero.iter().all(|r| r.frame_index == 0));

        let again = sample_ray_batch(&track, 32786, 12, 3).unwrap();
        assert_eq!(rays, again);
        assert!(rays.iter().all(|r| (r.direction.norm() - 1.0).abs() < 1e-9));
        assert!(rays.iter().all(|r| r.pixel.0.fract() == 0.5 && r.pixel.1.fract() == 0.5));
    }

    #[test]
    fn batch_errors() {
        let track = small_track(0..=0);
        assert!(sample_ray_batch(&track, 0, 0, 1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn directions_are_unit(u in 0.0f64..64.0, v in 0.0f64..48.0, yaw in -3.0f64..3.0, pitch in -1.4f64..1.4) {
                let rot = nalgebra::Rotation3::from_euler_angles(pitch, yaw, 0.3).into_inner();
                let pose = Pose::new(rot, Vector3::new(1.0, -2.0, 0.5)).unwrap();
                let c = CameraModel::new(40.0, 45.0, 32.0, 24.0, 64, 48, pose).unwrap();
                let r = pixel_to_ray(&c, u, v).unwrap();
                prop_assert!((r.direction.norm() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn direction_is_lipschitz_in_pixel(u in 0.0f64..63.0, v in 0.0f64..47.0, eps in 1e-6f64..1e-2) {
                let c = CameraModel::new(40.0, 45.0, 32.0, 24.0, 64, 48, Pose::identity()).unwrap();
                let a = pixel_to_ray(&c, u, v).unwrap();
                let b = pixel_to_ray(&c, u + eps, v).unwrap();
                prop_assert!((a.direction - b.direction).norm() <= eps / c.fx * 1.0001);
            }
        }
    }
}
