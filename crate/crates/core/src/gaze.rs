//! Adaptive gaze: turning a routed panorama region into a perspective view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{extract_viewport, ray_from_spherical, unrotate_ray, SphericalCoord, ViewportSpec};
use crate::grid::CropRegion;
use crate::raster::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeParams {
    /// Angular slack added on every side of the region.
    pub margin_deg: f64,
    pub max_hfov_deg: f64,
    pub min_hfov_deg: f64,
    pub out_long_side_px: usize,
}

impl Default for GazeParams {
    fn default() -> Self {
        Self {
            margin_deg: 10.0,
            max_hfov_deg: 150.0,
            min_hfov_deg: 20.0,
            out_long_side_px: 1024,
        }
    }
}

impl GazeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..45.0).contains(&self.margin_deg) {
            return Err(Error::Config(format!("gaze margin {} must be in [0, 45)", self.margin_deg)));
        }
        if !(self.min_hfov_deg > 0.0 && self.min_hfov_deg <= self.max_hfov_deg && self.max_hfov_deg < 180.0) {
            return Err(Error::Config(format!(
                "gaze fov bounds need 0 < min ({}) <= max ({}) < 180",
                self.min_hfov_deg, self.max_hfov_deg
            )));
        }
        if self.out_long_side_px < 3 {
            return Err(Error::Config("gaze out_long_side_px must be at least 3".into()));
        }
        Ok(())
    }
}

/// Longitude/latitude extent in degrees. `lon_hi` may exceed 180 for
/// regions crossing the seam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericalBox {
    pub lon_lo_deg: f64,
    pub lon_hi_deg: f64,
    pub lat_lo_deg: f64,
    pub lat_hi_deg: f64,
}

impl SphericalBox {
    pub fn lon_span(&self) -> f64 {
        self.lon_hi_deg - self.lon_lo_deg
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_hi_deg - self.lat_lo_deg
    }

    fn boundary(&self, per_edge: usize) -> Vec<SphericalCoord> {
        let (a, b, c, d) = (self.lon_lo_deg, self.lon_hi_deg, self.lat_lo_deg, self.lat_hi_deg);
        let mut pts = Vec::with_capacity(4 * per_edge + 4);
        for i in 0..=per_edge {
            let t = i as f64 / per_edge as f64;
            let lon = a + (b - a) * t;
            let lat = c + (d - c) * t;
            pts.extend([(lon, c), (lon, d), (a, lat), (b, lat)]);
        }
        pts.into_iter()
            .map(|(lon, lat)| SphericalCoord {
                lon_rad: lon.to_radians(),
                lat_rad: lat.to_radians(),
            })
            .collect()
    }
}

/// Angular extent of a region, by the linear pixel/angle relation of the
/// equirectangular projection.
pub fn region_to_spherical_box(region: &CropRegion, erp_width: usize, erp_height: usize) -> SphericalBox {
    let r = region.erp_rect();
    let lon = |x: f64| (x / erp_width as f64 - 0.5) * 360.0;
    let lat = |y: f64| (y / erp_height as f64 - 0.5) * 180.0;
    let (mut lo, mut hi) = (lon(r.x0), lon(r.x1));
    if lo >= 180.0 {
        lo -= 360.0;
        hi -= 360.0;
    }
    SphericalBox {
        lon_lo_deg: lo,
        lon_hi_deg: hi,
        lat_lo_deg: lat(r.y0).max(-90.0),
        lat_hi_deg: lat(r.y1).min(90.0),
    }
}

const POLE_LIMIT_DEG: f64 = 89.0;
const MAX_VFOV_DEG: f64 = 178.0;
const COVER_SLACK: f64 = 1.002;

fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

fn half_tan(fov_deg: f64) -> f64 {
    (fov_deg.to_radians() / 2.0).tan()
}

fn fov_from_half_tan(t: f64) -> f64 {
    2.0 * t.atan().to_degrees()
}

/// Largest `|X/Z|` and `|Y/Z|` of the box outline in the camera frame, or
/// `None` when part of it lies behind the camera.
fn required_half_tans(b: &SphericalBox, yaw: f64, pitch: f64) -> Option<(f64, f64)> {
    let (mut tx, mut ty) = (0.0f64, 0.0f64);
    for s in b.boundary(128) {
        let c = unrotate_ray(ray_from_spherical(s), yaw, pitch);
        if c.z <= 1e-3 {
            return None;
        }
        tx = tx.max((c.x / c.z).abs());
        ty = ty.max((c.y / c.z).abs());
    }
    Some((tx, ty))
}

/// Horizontal field of view from the region width alone, before clamping.
pub fn base_hfov_deg(b: &SphericalBox, params: &GazeParams) -> f64 {
    b.lon_span() + 2.0 * params.margin_deg
}

/// Chooses gaze direction, field of view and output size for a region.
///
/// The view is centred on the region and sized to its angular extent plus the
/// margin. When the margin alone does not cover the region's projected
/// outline (far from the equator) the field of view is widened until it does,
/// up to `max_hfov_deg`.
pub fn plan_gaze(b: &SphericalBox, params: &GazeParams) -> Result<ViewportSpec> {
    params.validate()?;
    if !(b.lon_span() > 0.0 && b.lat_span() > 0.0) || b.lon_span() > 360.0 + 1e-9 {
        return Err(Error::DegenerateRegion(format!("{b:?}")));
    }
    let yaw = wrap_deg((b.lon_lo_deg + b.lon_hi_deg) / 2.0);
    let mid_lat = (b.lat_lo_deg + b.lat_hi_deg) / 2.0;
    let touches_pole = b.lat_lo_deg <= -90.0 + 1e-9 || b.lat_hi_deg >= 90.0 - 1e-9;

    let mut hfov = base_hfov_deg(b, params).clamp(params.min_hfov_deg, params.max_hfov_deg);
    if touches_pole {
        hfov = params.max_hfov_deg;
    }
    let mut vfov = (b.lat_span() + 2.0 * params.margin_deg).min(MAX_VFOV_DEG);
    for _ in 0..8 {
        let lim = (POLE_LIMIT_DEG - vfov / 2.0).max(0.0);
        let pitch = mid_lat.clamp(-lim, lim);
        match required_half_tans(b, yaw, pitch) {
            Some((tx, ty)) => {
                hfov = hfov.max(fov_from_half_tan(tx * COVER_SLACK)).min(params.max_hfov_deg);
                vfov = vfov.max(fov_from_half_tan(ty * COVER_SLACK)).min(MAX_VFOV_DEG);
            }
            None => hfov = params.max_hfov_deg,
        }
        if half_tan(hfov) < half_tan(vfov) / 3.0 {
            hfov = fov_from_half_tan(half_tan(vfov) / 3.0).min(params.max_hfov_deg);
            vfov = vfov.min(fov_from_half_tan(3.0 * half_tan(hfov)));
        }
    }
    let long = params.out_long_side_px;
    let (th, tv) = (half_tan(hfov), half_tan(vfov));
    let aspect = th / tv;
    let (width, height) = if aspect >= 1.0 {
        let f = long as f64 / (2.0 * th);
        let h = (2.0 * f * tv - 1e-9).ceil() as usize;
        (long, h.max(long.div_ceil(3)).min(long))
    } else {
        let f = long as f64 / (2.0 * tv);
        let w = ((2.0 * f * th - 1e-9).ceil() as usize).max(long.div_ceil(3)).min(long);
        hfov = fov_from_half_tan(w as f64 / (2.0 * f)).min(params.max_hfov_deg);
        (w, long)
    };
    // the aspect clamp can make the view taller than planned
    let f = width as f64 / (2.0 * half_tan(hfov));
    let vfov = fov_from_half_tan(height as f64 / (2.0 * f));
    let lim = (POLE_LIMIT_DEG - vfov / 2.0).max(0.0);
    let pitch = mid_lat.clamp(-lim, lim);
    ViewportSpec::new(yaw, pitch, hfov, width, height)
}

/// Plans the gaze for `region` and renders the perspective patch.
pub fn gaze_extract(erp: &Image, region: &CropRegion, params: &GazeParams) -> Result<(Image, ViewportSpec)> {
    let b = region_to_spherical_box(region, erp.width, erp.height);
    let spec = plan_gaze(&b, params)?;
    Ok((extract_viewport(erp, &spec)?, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reproject_mask_to_erp, ErpDims};
    use crate::grid::{cell_region, merge_cells, AffineMap, GridSpec};
    use crate::raster::BinaryMask;
    use proptest::prelude::*;

    fn sbox(a: f64, b: f64, c: f64, d: f64) -> SphericalBox {
        SphericalBox {
            lon_lo_deg: a,
            lon_hi_deg: b,
            lat_lo_deg: c,
            lat_hi_deg: d,
        }
    }

    fn covered(region: &CropRegion, spec: &ViewportSpec, w: usize, h: usize) -> (usize, usize) {
        let fp = reproject_mask_to_erp(&BinaryMask::ones(spec.width, spec.height), spec, ErpDims::new(w, h)).unwrap();
        let rect = region.erp_rect();
        let (mut total, mut missing) = (0, 0);
        for y in 0..h {
            for x in 0..w {
                if rect.contains_pixel(x, y, w) {
                    total += 1;
                    if !fp.get(x, y) {
                        missing += 1;
                    }
                }
            }
        }
        (total, missing)
    }

    #[test]
    fn full_frame_box() {
        let r = merge_cells(&(1..=12).collect::<Vec<_>>(), &GridSpec::default(), 2000, 1000, false, AffineMap::IDENTITY).unwrap();
        let b = region_to_spherical_box(&r, 2000, 1000);
        assert_eq!(b, sbox(-180.0, 180.0, -90.0, 90.0));
    }

    #[test]
    fn cell_six_box_and_gaze() {
        let g = GridSpec::default();
        let r = cell_region(6, &g, 2400, 1200, AffineMap::IDENTITY).unwrap();
        let b = region_to_spherical_box(&r, 2400, 1200);
        let expect = sbox(-90.0, 0.0, -30.0, 30.0);
        for (a, e) in [(b.lon_lo_deg, -90.0), (b.lon_hi_deg, 0.0), (b.lat_lo_deg, -30.0), (b.lat_hi_deg, 30.0)] {
            assert!((a - e).abs() < 1e-9, "{b:?}");
        }
        let spec = plan_gaze(&expect, &GazeParams::default()).unwrap();
        assert!((spec.yaw_deg + 45.0).abs() < 1e-12);
        assert_eq!(spec.pitch_deg, 0.0);
        assert!((spec.hfov_deg - 110.0).abs() < 1e-12);
        // tan(55)/tan(40) aspect at a 1024 px long side
        assert_eq!((spec.width, spec.height), (1024, 602));

        // cell 6 through a downsampled frame of a 2000x1000 panorama
        let r = cell_region(6, &g, 2000, 1000, AffineMap::IDENTITY).unwrap();
        let b = region_to_spherical_box(&r, 2000, 1000);
        assert!((b.lon_lo_deg + 90.0).abs() < 1e-12 && b.lon_hi_deg.abs() < 1e-12);
        assert!((b.lat_lo_deg + 30.06).abs() < 1e-9 && (b.lat_hi_deg - 29.88).abs() < 1e-9);
    }

    #[test]
    fn seam_region_is_unwrapped() {
        let r = merge_cells(&[4, 1], &GridSpec::default(), 2000, 1000, true, AffineMap::IDENTITY).unwrap();
        let b = region_to_spherical_box(&r, 2000, 1000);
        assert_eq!((b.lon_lo_deg, b.lon_hi_deg), (90.0, 270.0));
        let spec = plan_gaze(&b, &GazeParams::default()).unwrap();
        assert_eq!(spec.yaw_deg, 180.0);
    }

    #[test]
    fn wide_region_clamps_to_max() {
        let p = GazeParams::default();
        let spec = plan_gaze(&sbox(-180.0, 180.0, -10.0, 10.0), &p).unwrap();
        assert_eq!(spec.hfov_deg, p.max_hfov_deg);
        let tight = GazeParams { margin_deg: 0.0, ..p };
        let spec = plan_gaze(&sbox(0.0, 4.0, -2.0, 2.0), &tight).unwrap();
        assert_eq!(spec.hfov_deg, p.min_hfov_deg, "{spec:?}");
    }

    #[test]
    fn pitch_clamped_near_pole() {
        let spec = plan_gaze(&sbox(-10.0, 10.0, 70.0, 90.0), &GazeParams::default()).unwrap();
        assert!(spec.pitch_deg + spec.vfov_deg() / 2.0 <= 89.0 + 1e-9, "{spec:?}");
        assert!(spec.pitch_deg < 80.0);
        assert_eq!(spec.hfov_deg, 150.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = plan_gaze(&sbox(10.0, 10.0, 0.0, 5.0), &GazeParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegion(_)));
    }

    #[test]
    fn aspect_is_bounded() {
        let p = GazeParams::default();
        for b in [sbox(0.0, 2.0, -60.0, 60.0), sbox(-70.0, 70.0, 0.0, 1.0)] {
            let s = plan_gaze(&b, &p).unwrap();
            let a = s.width as f64 / s.height as f64;
            assert!((1.0 / 3.0 - 1e-2..=3.0 + 1e-2).contains(&a), "{s:?}");
            assert_eq!(s.width.max(s.height), 1024);
        }
    }

    #[test]
    fn constant_erp_gives_constant_view() {
        let erp = Image::filled(400, 200, &[90, 120, 30]);
        let r = cell_region(6, &GridSpec::default(), 400, 200, AffineMap::IDENTITY).unwrap();
        let (img, spec) = gaze_extract(&erp, &r, &GazeParams { out_long_side_px: 128, ..Default::default() }).unwrap();
        assert_eq!(img.dims(), (spec.width, spec.height));
        assert!(img.data.chunks(3).all(|p| p == [90, 120, 30]));
    }

    #[test]
    fn every_depth0_cell_is_covered() {
        let g = GridSpec::default();
        let p = GazeParams { out_long_side_px: 256, ..Default::default() };
        for i in 1..=12 {
            let r = cell_region(i, &g, 800, 400, AffineMap::IDENTITY).unwrap();
            let spec = plan_gaze(&region_to_spherical_box(&r, 800, 400), &p).unwrap();
            let (total, missing) = covered(&r, &spec, 800, 400);
            // polar caps cannot be seen from a pitch-clamped camera
            if (5..=8).contains(&i) {
                assert_eq!(missing, 0, "cell {i}");
            } else {
                assert!((missing as f64) < 0.2 * total as f64, "cell {i}: {missing}/{total}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn coverage_superset(lon0 in -180.0f64..180.0, span in 2.0f64..130.0, lat0 in -60.0f64..55.0, lspan in 2.0f64..60.0) {
            let lat1 = (lat0 + lspan).min(60.0);
            let (w, h) = (720usize, 360usize);
            let x0 = ((lon0 / 360.0 + 0.5) * w as f64).floor() as usize;
            let x1 = x0 + ((span / 360.0) * w as f64).ceil() as usize;
            let y0 = ((lat0 / 180.0 + 0.5) * h as f64).floor() as usize;
            let y1 = (((lat1 / 180.0 + 0.5) * h as f64).ceil() as usize).max(y0 + 1);
            let r = CropRegion {
                frame_width: w, frame_height: h, x0, y0, width: x1 - x0, height: y1 - y0,
                wraps_seam: x1 > w, frame_to_erp: AffineMap::IDENTITY,
            };
            let spec = plan_gaze(&region_to_spherical_box(&r, w, h), &GazeParams { out_long_side_px: 256, ..Default::default() }).unwrap();
            let (total, missing) = covered(&r, &spec, w, h);
            prop_assert!(total > 0);
            prop_assert_eq!(missing, 0, "{:?}", spec);
        }

        #[test]
        fn yaw_equivariance(lon0 in -180.0f64..180.0, span in 1.0f64..200.0, lat0 in -80.0f64..70.0, lspan in 1.0f64..40.0, d in -400.0f64..400.0) {
            let p = GazeParams::default();
            let b = sbox(lon0, lon0 + span, lat0, (lat0 + lspan).min(90.0));
            let moved = sbox(lon0 + d, lon0 + span + d, b.lat_lo_deg, b.lat_hi_deg);
            let (s0, s1) = (plan_gaze(&b, &p).unwrap(), plan_gaze(&moved, &p).unwrap());
            let dy = wrap_deg(s1.yaw_deg - s0.yaw_deg - d);
            prop_assert!(dy.abs() < 1e-9, "{} {}", s0.yaw_deg, s1.yaw_deg);
            prop_assert!((s0.pitch_deg - s1.pitch_deg).abs() < 1e-9);
            prop_assert!((s0.hfov_deg - s1.hfov_deg).abs() < 1e-9);
            prop_assert_eq!((s0.width, s0.height), (s1.width, s1.height));
        }

        #[test]
        fn enlarging_never_shrinks_hfov(lon0 in -180.0f64..180.0, span in 1.0f64..200.0, lat0 in -50.0f64..40.0, lspan in 1.0f64..40.0, grow in 0.0f64..60.0, lgrow in 0.0f64..10.0) {
            let p = GazeParams::default();
            let small = sbox(lon0, lon0 + span, lat0, lat0 + lspan);
            let big = sbox(lon0 - grow, lon0 + span + grow, lat0 - lgrow, lat0 + lspan + lgrow);
            prop_assert!(base_hfov_deg(&big, &p) >= base_hfov_deg(&small, &p));
            let (a, b) = (plan_gaze(&small, &p).unwrap(), plan_gaze(&big, &p).unwrap());
            // integer output sizes can nudge the final fov by a fraction of a degree
            prop_assert!(b.hfov_deg >= a.hfov_deg - 0.2, "{:?} {:?}", a, b);
        }
    }
}
