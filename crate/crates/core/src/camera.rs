//! Pinhole cameras and world-space rays.
//!
//! Camera frame: +z forward, +x right, +y down. Pixel `(i, j)` has its
//! center at `(u, v) = (i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub s_near: f64,
    pub s_far: f64,
}

impl Ray {
    /// Normalizes `direction`; the ray spans `[0, inf)` until bounded.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) || !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("ray needs a finite origin and non-zero direction".into()));
        }
        Ok(Self {
            origin,
            direction: direction / norm,
            s_near: 0.0,
            s_far: f64::INFINITY,
        })
    }

    pub fn with_bounds(mut self, s_near: f64, s_far: f64) -> Result<Self> {
        if !(s_near >= 0.0 && s_near < s_far) {
            return Err(Error::InvalidInput(format!(
                "ray bounds need 0 <= s_near < s_far, got [{s_near}, {s_far}]"
            )));
        }
        self.s_near = s_near;
        self.s_far = s_far;
        Ok(self)
    }

    #[inline]
    pub fn at(&self, s: f64) -> Vector3<f64> {
        self.origin + self.direction * s
    }

    /// Parametric interval `[t_enter, t_exit]` inside an axis-aligned box, if any.
    pub fn intersect_aabb(&self, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let o = self.origin[a];
            let d = self.direction[a];
            if d.abs() < 1e-300 {
                if o < min[a] || o > max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut ta, mut tb) = ((min[a] - o) * inv, (max[a] - o) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Pinhole intrinsics plus a rigid camera-to-world pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub cam_to_world: Matrix4<f64>,
}

/// JSON shape of a camera: the pose is 16 numbers in row-major order.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    cam_to_world: Vec<f64>,
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        if r.cam_to_world.len() != 16 {
            return Err(Error::InvalidCamera(format!(
                "cam_to_world needs 16 entries, got {}",
                r.cam_to_world.len()
            )));
        }
        let pose = Matrix4::from_row_slice(&r.cam_to_world);
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, pose)
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        let mut rows = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                rows.push(c.cam_to_world[(i, j)]);
            }
        }
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            cam_to_world: rows,
        }
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        cam_to_world: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and a
    /// horizontal field of view of `fov_x_deg`.
    pub fn from_fov(width: u32, height: u32, fov_x_deg: f64, cam_to_world: Matrix4<f64>) -> Result<Self> {
        if !(fov_x_deg > 0.0 && fov_x_deg < 180.0) {
            return Err(Error::InvalidCamera(format!("field of view {fov_x_deg} out of (0, 180)")));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, cam_to_world)
    }

    pub fn validate(&self) -> Result<()> {
        let intr = [self.fx, self.fy, self.cx, self.cy];
        if !intr.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("intrinsics must be finite".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image must have positive size".into()));
        }
        if !self.cam_to_world.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("pose must be finite".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera("rotation block must be orthonormal with det +1".into()));
        }
        let last = self.cam_to_world.row(3);
        if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > 1e-9 {
            return Err(Error::InvalidCamera("pose must be an affine rigid transform".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.cam_to_world.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation().column(2).into_owned()
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same intrinsics, different pose.
    pub fn with_pose(&self, cam_to_world: Matrix4<f64>) -> Result<Self> {
        Self::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height, cam_to_world)
    }

    /// Same intrinsics and rotation, camera center moved to `center`.
    pub fn with_center(&self, center: Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.cam_to_world.fixed_view_mut::<3, 1>(0, 3).copy_from(&center);
        out
    }

    /// Same pose, `factor` times the pixel count along each axis.
    pub fn scaled(&self, factor: u32) -> Result<Self> {
        let f = factor as f64;
        Self::new(
            self.fx * f,
            self.fy * f,
            self.cx * f,
            self.cy * f,
            self.width * factor,
            self.height * factor,
            self.cam_to_world,
        )
    }

    /// Camera-frame direction (unnormalized) through image point `(u, v)`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Result<Ray> {
        let intr = [self.fx, self.fy, self.cx, self.cy];
        if !intr.iter().all(|x| x.is_finite()) || !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera("intrinsics must be finite and positive".into()));
        }
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::InvalidInput(format!("pixel coordinate ({u}, {v}) not finite")));
        }
        let dir = self.rotation() * self.camera_direction(u, v);
        Ray::new(self.center(), dir)
    }

    /// Ray through the center of integer pixel `(col, row)`.
    pub fn pixel_center_ray(&self, col: u32, row: u32) -> Result<Ray> {
        self.pixel_to_ray(col as f64 + 0.5, row as f64 + 0.5)
    }
}

/// Camera-to-world pose at `eye` looking at `target`, image-up along `up`.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Matrix4<f64>> {
    let forward = target - eye;
    if !(forward.norm() > 0.0) {
        return Err(Error::InvalidCamera("eye and target coincide".into()));
    }
    let z = forward.normalize();
    let mut x = z.cross(&up);
    if x.norm() < 1e-9 {
        // Looking straight along `up`; pick any perpendicular image axis.
        let alt = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        x = z.cross(&alt);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&x);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&z);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
    Ok(m)
}

/// Poses on a y-up hemisphere around `target`.
///
/// Azimuth is measured in the x-z plane from +x toward +z, elevation from the
/// x-z plane toward +y. Both ranges are sampled inclusively; a count of one
/// takes the range midpoint. Poses are ordered elevation-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HemisphereGrid {
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub n_azimuth: usize,
    pub n_elevation: usize,
    pub radius: f64,
    pub target: [f64; 3],
}

impl HemisphereGrid {
    pub fn poses(&self) -> Result<Vec<Matrix4<f64>>> {
        if self.n_azimuth == 0 || self.n_elevation == 0 || !(self.radius > 0.0) {
            return Err(Error::Config("hemisphere grid needs positive counts and radius".into()));
        }
        let target = Vector3::from(self.target);
        let mut out = Vec::with_capacity(self.n_azimuth * self.n_elevation);
        for el in linspace(self.elevation_deg, self.n_elevation) {
            for az in linspace(self.azimuth_deg, self.n_azimuth) {
                let (el, az) = (el.to_radians(), az.to_radians());
                let offset = Vector3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
                out.push(look_at(target + offset * self.radius, target, Vector3::y())?);
            }
        }
        Ok(out)
    }
}

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_cam(fx: f64, cx: f64) -> CameraModel {
        CameraModel::new(fx, fx, cx, cx, 8, 8, Matrix4::identity()).unwrap()
    }

    #[test]
    fn principal_ray_points_forward() {
        let cam = identity_cam(10.0, 4.0);
        let ray = cam.pixel_to_ray(4.0, 4.0).unwrap();
        assert_eq!(ray.origin, Vector3::zeros());
        assert_relative_eq!(ray.direction, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn unit_focal_ray_is_45_degrees() {
        let cam = identity_cam(1.0, 0.0);
        let ray = cam.pixel_to_ray(1.0, 0.0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_relative_eq!(ray.direction, Vector3::new(s, 0.0, s), epsilon = 1e-15);
    }

    #[test]
    fn translation_moves_origin_only() {
        let mut pose = Matrix4::identity();
        pose[(2, 3)] = -2.0;
        let cam = CameraModel::new(10.0, 10.0, 4.0, 4.0, 8, 8, pose).unwrap();
        let ray = cam.pixel_to_ray(4.0, 4.0).unwrap();
        assert_eq!(ray.origin, Vector3::new(0.0, 0.0, -2.0));
        assert_relative_eq!(ray.direction, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_intrinsics_rejected() {
        let mut cam = identity_cam(1.0, 0.0);
        cam.fx = f64::NAN;
        assert!(matches!(cam.pixel_to_ray(0.5, 0.5), Err(Error::InvalidCamera(_))));
        assert!(CameraModel::new(f64::INFINITY, 1.0, 0.0, 0.0, 4, 4, Matrix4::identity()).is_err());
    }

    #[test]
    fn non_rigid_pose_rejected() {
        let mut pose = Matrix4::identity();
        pose[(0, 0)] = 2.0;
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, 4, 4, pose).is_err());
        let mut flip = Matrix4::identity();
        flip[(0, 0)] = -1.0;
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, 4, 4, flip).is_err());
    }

    #[test]
    fn rays_are_unit_and_share_origin() {
        let pose = look_at(Vector3::new(0.3, 0.4, -0.5), Vector3::zeros(), Vector3::y()).unwrap();
        let cam = CameraModel::from_fov(16, 12, 40.0, pose).unwrap();
        for j in 0..12 {
            for i in 0..16 {
                let r = cam.pixel_center_ray(i, j).unwrap();
                assert!((r.direction.norm() - 1.0).abs() < 1e-9);
                assert_eq!(r.origin, cam.center());
            }
        }
    }

    #[test]
    fn look_at_centers_target() {
        let eye = Vector3::new(1.0, 0.5, 0.2);
        let cam = CameraModel::from_fov(9, 9, 30.0, look_at(eye, Vector3::zeros(), Vector3::y()).unwrap()).unwrap();
        let r = cam.pixel_to_ray(4.5, 4.5).unwrap();
        assert_relative_eq!(r.direction, -eye.normalize(), epsilon = 1e-12);
        // Image +y points down in the world.
        let down = cam.rotation().column(1).into_owned();
        assert!(down.y < 0.0);
    }

    #[test]
    fn hemisphere_grid_matches_capture_layout() {
        let grid = HemisphereGrid {
            azimuth_deg: (45.0, 180.0),
            elevation_deg: (30.0, 45.0),
            n_azimuth: 31,
            n_elevation: 3,
            radius: 1.5,
            target: [0.0; 3],
        };
        let poses = grid.poses().unwrap();
        assert_eq!(poses.len(), 93);
        for p in &poses {
            let cam = CameraModel::from_fov(4, 4, 30.0, *p).unwrap();
            assert!((cam.center().norm() - 1.5).abs() < 1e-12);
            assert_relative_eq!(cam.forward(), -cam.center().normalize(), epsilon = 1e-12);
            let el = (cam.center().y / 1.5).asin().to_degrees();
            assert!((30.0 - 1e-9..=45.0 + 1e-9).contains(&el));
        }
    }

    #[test]
    fn camera_json_is_row_major() {
        let mut pose = Matrix4::identity();
        pose[(0, 3)] = 7.0;
        let cam = CameraModel::new(2.0, 3.0, 1.0, 1.5, 2, 3, pose).unwrap();
        let json = serde_json::to_value(&cam).unwrap();
        assert_eq!(json["cam_to_world"][3], 7.0);
        let back: CameraModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn aabb_intersection() {
        let r = Ray::new(Vector3::new(0.0, 0.0, -2.0), Vector3::z()).unwrap();
        let (a, b) = r
            .intersect_aabb(&Vector3::repeat(-1.0), &Vector3::repeat(1.0))
            .unwrap();
        assert_relative_eq!(a, 1.0);
        assert_relative_eq!(b, 3.0);
        let miss = Ray::new(Vector3::new(5.0, 0.0, -2.0), Vector3::z()).unwrap();
        assert!(miss.intersect_aabb(&Vector3::repeat(-1.0), &Vector3::repeat(1.0)).is_none());
    }
}
