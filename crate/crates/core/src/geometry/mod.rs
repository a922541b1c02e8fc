//! Equirectangular <-> perspective geometry.
//!
//! Conventions used throughout the crate:
//!
//! * Viewport pixels use a pixel-center convention: continuous coordinate `x`
//!   is the center of pixel `x`, and the optical center sits at
//!   `((W-1)/2, (H-1)/2)`.
//! * Camera rays are `(x - cx, y - cy, f)`; image `y` grows downward.
//! * World rays are `R_y(yaw) * R_x(pitch) * camera_ray`. Longitude is
//!   `atan2(X, Z)` (zero at the +Z boresight, growing to the right) and
//!   latitude is `asin(Y / |ray|)`. Positive latitude therefore points
//!   *down* the panorama (toward larger row indices), and positive pitch
//!   tilts the camera the same way.
//! * Equirectangular coordinates are edge-anchored: `U = (lon/2pi + 0.5) W`,
//!   `V = (lat/pi + 0.5) H`, so pixel column `i` spans `[i, i+1)` and its
//!   center is `i + 0.5`. `U` is taken modulo `W` (the seam).

mod reproject;
mod viewport;

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use reproject::{
    frustum_boundary, frustum_footprint, mask_solid_angle, reproject_mask_to_erp,
    reproject_mask_to_erp_full_scan, Footprint,
};
pub use viewport::{extract_viewport, sample_erp_bilinear, sample_mask_into_viewport};

/// Virtual pinhole camera looking into the panorama.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewportSpec {
    /// Rotation toward +longitude, degrees.
    pub yaw_deg: f64,
    /// Rotation toward +latitude (down the panorama), degrees.
    pub pitch_deg: f64,
    /// Horizontal field of view in (0, 180) degrees.
    pub hfov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewportSpec {
    pub fn new(yaw_deg: f64, pitch_deg: f64, hfov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let spec = Self {
            yaw_deg,
            pitch_deg,
            hfov_deg,
            width,
            height,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::InvalidSpec(format!(
                "hfov {} deg outside (0, 180)",
                self.hfov_deg
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidSpec(format!(
                "output {}x{} smaller than 2x2",
                self.width, self.height
            )));
        }
        if !self.yaw_deg.is_finite() || !self.pitch_deg.is_finite() {
            return Err(Error::InvalidSpec("non-finite yaw or pitch".into()));
        }
        Ok(())
    }

    pub fn focal_length(&self) -> f64 {
        focal_length(self)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn vfov_deg(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.focal_length())).atan().to_degrees()
    }

    pub(crate) fn camera(&self) -> Camera {
        Camera::new(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRay {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldRay {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldRay {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub lon_rad: f64,
    pub lat_rad: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErpDims {
    pub width: usize,
    pub height: usize,
}

impl ErpDims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}

/// `W / (2 tan(hfov / 2))`, in pixels.
pub fn focal_length(spec: &ViewportSpec) -> f64 {
    spec.width as f64 / (2.0 * (spec.hfov_deg.to_radians() / 2.0).tan())
}

pub fn pixel_to_camera_ray(x: f64, y: f64, spec: &ViewportSpec) -> CameraRay {
    let (cx, cy) = spec.principal_point();
    CameraRay {
        x: x - cx,
        y: y - cy,
        z: spec.focal_length(),
    }
}

/// Row-major 3x3 rotation `R_y(yaw) * R_x(pitch)`.
pub(crate) fn rotation(yaw_deg: f64, pitch_deg: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    // R_y = [[cy,0,sy],[0,1,0],[-sy,0,cy]], R_x = [[1,0,0],[0,cp,sp],[0,-sp,cp]]
    [
        [cy, -sy * sp, sy * cp],
        [0.0, cp, sp],
        [-sy, -cy * sp, cy * cp],
    ]
}

pub fn rotate_ray(ray: CameraRay, yaw_deg: f64, pitch_deg: f64) -> WorldRay {
    let r = rotation(yaw_deg, pitch_deg);
    let v = [ray.x, ray.y, ray.z];
    let m = |row: &[f64; 3]| row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    WorldRay {
        x: m(&r[0]),
        y: m(&r[1]),
        z: m(&r[2]),
    }
}

/// Inverse of [`rotate_ray`]: `R_x(pitch)^T * R_y(yaw)^T * ray`.
pub fn unrotate_ray(ray: WorldRay, yaw_deg: f64, pitch_deg: f64) -> CameraRay {
    let r = rotation(yaw_deg, pitch_deg);
    let v = [ray.x, ray.y, ray.z];
    let m = |c: usize| r[0][c] * v[0] + r[1][c] * v[1] + r[2][c] * v[2];
    CameraRay {
        x: m(0),
        y: m(1),
        z: m(2),
    }
}

pub fn spherical_from_ray(ray: WorldRay) -> Result<SphericalCoord> {
    let n = ray.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateRay);
    }
    Ok(SphericalCoord {
        lon_rad: ray.x.atan2(ray.z),
        lat_rad: (ray.y / n).clamp(-1.0, 1.0).asin(),
    })
}

/// Unit world ray pointing at `s`.
pub fn ray_from_spherical(s: SphericalCoord) -> WorldRay {
    let (sl, cl) = s.lon_rad.sin_cos();
    let (sp, cp) = s.lat_rad.sin_cos();
    WorldRay {
        x: cp * sl,
        y: sp,
        z: cp * cl,
    }
}

/// Continuous equirectangular coordinates; `u` is reduced into `[0, W)`.
pub fn erp_pixel_from_spherical(s: SphericalCoord, dims: ErpDims) -> (f64, f64) {
    let w = dims.width as f64;
    let u = (s.lon_rad / TAU + 0.5) * w;
    let v = (s.lat_rad / PI + 0.5) * dims.height as f64;
    let mut u = u.rem_euclid(w);
    if u >= w {
        // rem_euclid can round up to w for tiny negative inputs
        u = 0.0;
    }
    (u, v)
}

pub fn spherical_from_erp_pixel(u: f64, v: f64, dims: ErpDims) -> SphericalCoord {
    SphericalCoord {
        lon_rad: (u / dims.width as f64 - 0.5) * TAU,
        lat_rad: ((v / dims.height as f64 - 0.5) * PI).clamp(-FRAC_PI_2, FRAC_PI_2),
    }
}

/// Projects a camera-frame ray onto the viewport plane; `None` behind the camera.
pub fn camera_ray_to_pixel(ray: CameraRay, spec: &ViewportSpec) -> Option<(f64, f64)> {
    if ray.z <= 0.0 {
        return None;
    }
    let f = spec.focal_length();
    let (cx, cy) = spec.principal_point();
    Some((f * ray.x / ray.z + cx, f * ray.y / ray.z + cy))
}

/// Precomputed camera for per-pixel loops.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Camera {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub rot: [[f64; 3]; 3],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    fn new(spec: &ViewportSpec) -> Self {
        let (cx, cy) = spec.principal_point();
        Self {
            f: spec.focal_length(),
            cx,
            cy,
            rot: rotation(spec.yaw_deg, spec.pitch_deg),
            width: spec.width,
            height: spec.height,
        }
    }

    #[inline]
    pub fn world_dir(&self, x: f64, y: f64) -> [f64; 3] {
        let v = [x - self.cx, y - self.cy, self.f];
        let r = &self.rot;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    #[inline]
    pub fn to_camera(&self, w: [f64; 3]) -> [f64; 3] {
        let r = &self.rot;
        [
            r[0][0] * w[0] + r[1][0] * w[1] + r[2][0] * w[2],
            r[0][1] * w[0] + r[1][1] * w[1] + r[2][1] * w[2],
            r[0][2] * w[0] + r[1][2] * w[1] + r[2][2] * w[2],
        ]
    }

    /// Plane coordinates of a world direction, `None` if behind the camera.
    #[inline]
    pub fn project(&self, w: [f64; 3]) -> Option<(f64, f64)> {
        let c = self.to_camera(w);
        if c[2] <= 0.0 {
            return None;
        }
        Some((self.f * c[0] / c[2] + self.cx, self.f * c[1] / c[2] + self.cy))
    }

    /// Nearest viewport pixel of a world direction, if it lands inside.
    #[inline]
    pub fn nearest_pixel(&self, w: [f64; 3]) -> Option<(usize, usize)> {
        let (x, y) = self.project(w)?;
        let (xi, yi) = ((x + 0.5).floor(), (y + 0.5).floor());
        if xi >= 0.0 && yi >= 0.0 && xi < self.width as f64 && yi < self.height as f64 {
            Some((xi as usize, yi as usize))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(w: usize, h: usize, hfov: f64) -> ViewportSpec {
        ViewportSpec::new(0.0, 0.0, hfov, w, h).unwrap()
    }

    #[test]
    fn focal_length_examples() {
        assert!((spec(1000, 10, 90.0).focal_length() - 500.0).abs() < 1e-9);
        assert!((spec(2000, 10, 90.0).focal_length() - 1000.0).abs() < 1e-9);
        // 500 / tan(30 deg) = 500 * sqrt(3)
        assert!((spec(1000, 10, 60.0).focal_length() - 866.025_403_784_438_6).abs() < 1e-9);
    }

    #[test]
    fn focal_length_decreases_with_fov() {
        let mut prev = f64::INFINITY;
        for fov in (1..180).map(|d| d as f64) {
            let f = spec(640, 480, fov).focal_length();
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(ViewportSpec::new(0.0, 0.0, 180.0, 10, 10), Err(Error::InvalidSpec(_))));
        assert!(matches!(ViewportSpec::new(0.0, 0.0, 0.0, 10, 10), Err(Error::InvalidSpec(_))));
        assert!(matches!(ViewportSpec::new(0.0, 0.0, 90.0, 1, 10), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn camera_ray_examples() {
        let s = spec(101, 101, 90.0);
        let c = pixel_to_camera_ray(50.0, 50.0, &s);
        assert_eq!((c.x, c.y), (0.0, 0.0));
        assert!((c.z - 50.5).abs() < 1e-12);
        let r = pixel_to_camera_ray(0.0, 0.0, &s);
        assert_eq!((r.x, r.y), (-50.0, -50.0));
        assert!((r.z - 50.5).abs() < 1e-12);

        let s = spec(1000, 800, 90.0);
        let (cx, cy) = s.principal_point();
        let r = pixel_to_camera_ray(cx + s.focal_length(), cy, &s);
        assert!((r.x.atan2(r.z).to_degrees() - 45.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_examples() {
        let ray = CameraRay { x: 0.3, y: -0.2, z: 1.7 };
        let w = rotate_ray(ray, 0.0, 0.0);
        assert_eq!((w.x, w.y, w.z), (0.3, -0.2, 1.7));

        let boresight = CameraRay { x: 0.0, y: 0.0, z: 1.0 };
        let s = spherical_from_ray(rotate_ray(boresight, 90.0, 0.0)).unwrap();
        assert!((s.lon_rad - FRAC_PI_2).abs() < 1e-12 && s.lat_rad.abs() < 1e-12);

        // explicit matrix product R_y(37) R_x(-21) e_z
        let (y, p) = (37f64.to_radians(), (-21f64).to_radians());
        let expected = [y.sin() * p.cos(), p.sin(), y.cos() * p.cos()];
        let w = rotate_ray(boresight, 37.0, -21.0);
        assert!((w.x - expected[0]).abs() < 1e-12);
        assert!((w.y - expected[1]).abs() < 1e-12);
        assert!((w.z - expected[2]).abs() < 1e-12);
        let s = spherical_from_ray(w).unwrap();
        assert!((s.lon_rad.to_degrees() - 37.0).abs() < 1e-9);
        assert!((s.lat_rad.to_degrees() + 21.0).abs() < 1e-9);
    }

    #[test]
    fn unrotate_inverts_rotate() {
        let ray = CameraRay { x: -3.0, y: 2.0, z: 5.0 };
        let w = rotate_ray(ray, 123.0, -47.0);
        let back = unrotate_ray(w, 123.0, -47.0);
        assert!((back.x - ray.x).abs() < 1e-12);
        assert!((back.y - ray.y).abs() < 1e-12);
        assert!((back.z - ray.z).abs() < 1e-12);
    }

    #[test]
    fn spherical_examples() {
        let s = spherical_from_ray(WorldRay { x: 0.0, y: 0.0, z: 1.0 }).unwrap();
        assert_eq!((s.lon_rad, s.lat_rad), (0.0, 0.0));
        let s = spherical_from_ray(WorldRay { x: 1.0, y: 0.0, z: 0.0 }).unwrap();
        assert!((s.lon_rad - FRAC_PI_2).abs() < 1e-15 && s.lat_rad == 0.0);
        // atan2(0, 0) is 0 on this host
        let s = spherical_from_ray(WorldRay { x: 0.0, y: 1.0, z: 0.0 }).unwrap();
        assert_eq!(s.lon_rad, 0.0);
        assert!((s.lat_rad - FRAC_PI_2).abs() < 1e-15);
        // non-unit rays are normalized
        let s = spherical_from_ray(WorldRay { x: 0.0, y: 3.0, z: 3.0 }).unwrap();
        assert!((s.lat_rad - PI / 4.0).abs() < 1e-12);
        assert!(matches!(
            spherical_from_ray(WorldRay { x: 0.0, y: 0.0, z: 0.0 }),
            Err(Error::DegenerateRay)
        ));
    }

    #[test]
    fn erp_pixel_examples() {
        let d = ErpDims::new(4000, 2000);
        let (u, v) = erp_pixel_from_spherical(SphericalCoord { lon_rad: 0.0, lat_rad: 0.0 }, d);
        assert_eq!((u, v), (2000.0, 1000.0));
        let (u, v) = erp_pixel_from_spherical(SphericalCoord { lon_rad: FRAC_PI_2, lat_rad: 0.0 }, d);
        assert_eq!((u, v), (3000.0, 1000.0));

        let eps = 1e-4;
        let (a, _) = erp_pixel_from_spherical(SphericalCoord { lon_rad: -PI + eps, lat_rad: 0.0 }, d);
        let (b, _) = erp_pixel_from_spherical(SphericalCoord { lon_rad: PI - eps, lat_rad: 0.0 }, d);
        let gap = (a - b).rem_euclid(4000.0);
        assert!(gap <= 2.0 * eps * 4000.0 / TAU + 1e-9, "gap {gap}");
        let (u, _) = erp_pixel_from_spherical(SphericalCoord { lon_rad: PI, lat_rad: 0.0 }, d);
        assert!((0.0..4000.0).contains(&u));
    }

    #[test]
    fn erp_pixel_inverse() {
        let d = ErpDims::new(360, 180);
        let s = spherical_from_erp_pixel(90.5, 45.5, d);
        let (u, v) = erp_pixel_from_spherical(s, d);
        assert!((u - 90.5).abs() < 1e-9 && (v - 45.5).abs() < 1e-9);
    }
}
