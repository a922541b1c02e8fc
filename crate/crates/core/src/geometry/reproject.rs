use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use super::{Camera, ErpDims, SphericalCoord, ViewportSpec};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// ERP pixels that may receive viewport samples.
///
/// `col_start` may be negative and `col_start + col_count` may exceed the
/// panorama width; columns are visited modulo the width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Footprint {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: i64,
    pub col_count: usize,
}

impl Footprint {
    pub fn full(dims: ErpDims) -> Self {
        Self {
            row_start: 0,
            row_end: dims.height,
            col_start: 0,
            col_count: dims.width,
        }
    }

    pub fn is_full(&self, dims: ErpDims) -> bool {
        *self == Self::full(dims)
    }
}

const PAD_PX: f64 = 2.0;

/// Samples the outline of the nearest-neighbour frustum (`[-0.5, W-0.5) x
/// [-0.5, H-0.5)`) as spherical coordinates, one sample per `step` px.
pub fn frustum_boundary(spec: &ViewportSpec, samples_per_edge: usize) -> Vec<SphericalCoord> {
    let cam = spec.camera();
    let n = samples_per_edge.max(2);
    let (x0, y0) = (-0.5, -0.5);
    let (x1, y1) = (spec.width as f64 - 0.5, spec.height as f64 - 0.5);
    let corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    let mut out = Vec::with_capacity(4 * n);
    for k in 0..4 {
        let (ax, ay) = corners[k];
        let (bx, by) = corners[(k + 1) % 4];
        for i in 0..n {
            let t = i as f64 / n as f64;
            let d = cam.world_dir(ax + (bx - ax) * t, ay + (by - ay) * t);
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            out.push(SphericalCoord {
                lon_rad: d[0].atan2(d[2]),
                lat_rad: (d[1] / norm).clamp(-1.0, 1.0).asin(),
            });
        }
    }
    out
}

fn contains_pole(cam: &Camera) -> bool {
    [[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]].iter().any(|&pole| {
        cam.project(pole).is_some_and(|(x, y)| {
            let m = PAD_PX + 0.5;
            x >= -m && y >= -m && x < cam.width as f64 + m && y < cam.height as f64 + m
        })
    })
}

/// Bounding latitude/longitude strip of the viewport frustum in ERP pixels.
///
/// The outline is sampled once per viewport pixel and padded by two ERP
/// pixels. Frusta containing a pole fall back to the full panorama.
pub fn frustum_footprint(spec: &ViewportSpec, dims: ErpDims) -> Footprint {
    let cam = spec.camera();
    if contains_pole(&cam) {
        return Footprint::full(dims);
    }
    let per_edge = spec.width.max(spec.height).max(64);
    let boundary = frustum_boundary(spec, per_edge);

    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lon_lo, mut lon_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut unwrapped = boundary[0].lon_rad;
    for (i, s) in boundary.iter().enumerate() {
        if i > 0 {
            let mut d = s.lon_rad - boundary[i - 1].lon_rad;
            d -= TAU * (d / TAU).round();
            unwrapped += d;
        }
        lat_lo = lat_lo.min(s.lat_rad);
        lat_hi = lat_hi.max(s.lat_rad);
        lon_lo = lon_lo.min(unwrapped);
        lon_hi = lon_hi.max(unwrapped);
    }
    // closing the loop: a non-zero winding means the outline circles a pole
    let mut d = boundary[0].lon_rad - boundary[boundary.len() - 1].lon_rad;
    d -= TAU * (d / TAU).round();
    if (unwrapped + d - boundary[0].lon_rad).abs() > PI {
        return Footprint::full(dims);
    }

    let (w, h) = (dims.width as f64, dims.height as f64);
    let row_start = (((lat_lo / PI + 0.5) * h - PAD_PX).floor().max(0.0)) as usize;
    let row_end = (((lat_hi / PI + 0.5) * h + PAD_PX).ceil().min(h)) as usize;

    // Near a pole longitude sweeps fast between outline samples; do not trust
    // the column bounds there.
    let near_pole = lat_lo.abs().max(lat_hi.abs()) > 80f64.to_radians();
    let u_lo = ((lon_lo / TAU + 0.5) * w - PAD_PX).floor();
    let u_hi = ((lon_hi / TAU + 0.5) * w + PAD_PX).ceil();
    let col_count = (u_hi - u_lo) as i64;
    if near_pole || col_count >= dims.width as i64 {
        return Footprint {
            row_start,
            row_end: row_end.max(row_start),
            col_start: 0,
            col_count: dims.width,
        };
    }
    Footprint {
        row_start,
        row_end: row_end.max(row_start),
        col_start: u_lo as i64,
        col_count: col_count.max(0) as usize,
    }
}

fn check_mask(mask: &BinaryMask, spec: &ViewportSpec) -> Result<()> {
    spec.validate()?;
    if mask.dims() != (spec.width, spec.height) {
        return Err(Error::DimensionMismatch {
            expected: (spec.width, spec.height),
            actual: mask.dims(),
        });
    }
    Ok(())
}

fn reproject_region(mask: &BinaryMask, spec: &ViewportSpec, dims: ErpDims, fp: Footprint) -> BinaryMask {
    let cam = spec.camera();
    let (w, h) = (dims.width, dims.height);
    let lon_of = |col: usize| ((col as f64 + 0.5) / w as f64 - 0.5) * TAU;
    let cols: Vec<(usize, f64, f64)> = (0..fp.col_count)
        .map(|k| {
            let col = (fp.col_start + k as i64).rem_euclid(w as i64) as usize;
            let (s, c) = lon_of(col).sin_cos();
            (col, s, c)
        })
        .collect();

    let mut out = BinaryMask::new(w, h);
    out.bits
        .par_chunks_mut(w)
        .enumerate()
        .skip(fp.row_start)
        .take(fp.row_end - fp.row_start)
        .for_each(|(row, bits)| {
            let lat = ((row as f64 + 0.5) / h as f64 - 0.5) * PI;
            let (sp, cp) = lat.sin_cos();
            for &(col, sl, cl) in &cols {
                let dir = [cp * sl, sp, cp * cl];
                if let Some((x, y)) = cam.nearest_pixel(dir) {
                    bits[col] = mask.bits[y * mask.width + x];
                }
            }
        });
    out
}

/// Maps a viewport-frame mask back onto the panorama.
///
/// Each ERP pixel center is rotated into the camera frame and takes the
/// nearest viewport mask sample; directions behind the camera or outside the
/// image stay unset. Only the frustum footprint is scanned.
pub fn reproject_mask_to_erp(mask: &BinaryMask, spec: &ViewportSpec, dims: ErpDims) -> Result<BinaryMask> {
    check_mask(mask, spec)?;
    let fp = frustum_footprint(spec, dims);
    Ok(reproject_region(mask, spec, dims, fp))
}

/// Reference variant of [`reproject_mask_to_erp`] that visits every ERP pixel.
pub fn reproject_mask_to_erp_full_scan(
    mask: &BinaryMask,
    spec: &ViewportSpec,
    dims: ErpDims,
) -> Result<BinaryMask> {
    check_mask(mask, spec)?;
    Ok(reproject_region(mask, spec, dims, Footprint::full(dims)))
}

/// Solid angle (steradians) covered by the set pixels of an ERP-frame mask.
pub fn mask_solid_angle(mask: &BinaryMask) -> f64 {
    let (w, h) = (mask.width as f64, mask.height as f64);
    let dlon = TAU / w;
    (0..mask.height)
        .map(|row| {
            let top = (row as f64 / h - 0.5) * PI;
            let bot = ((row + 1) as f64 / h - 0.5) * PI;
            let n = mask.bits[row * mask.width..(row + 1) * mask.width]
                .iter()
                .filter(|&&b| b != 0)
                .count();
            n as f64 * dlon * (bot.sin() - top.sin())
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{spherical_from_erp_pixel, ray_from_spherical, unrotate_ray, camera_ray_to_pixel};

    #[test]
    fn all_zero_mask_stays_empty() {
        let spec = ViewportSpec::new(20.0, 5.0, 80.0, 64, 48).unwrap();
        let m = reproject_mask_to_erp(&BinaryMask::new(64, 48), &spec, ErpDims::new(400, 200)).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn ones_mask_is_frustum_indicator() {
        let spec = ViewportSpec::new(-70.0, 25.0, 100.0, 80, 50).unwrap();
        let dims = ErpDims::new(360, 180);
        let m = reproject_mask_to_erp(&BinaryMask::ones(80, 50), &spec, dims).unwrap();
        assert!(m.area() > 0);
        for row in 0..dims.height {
            for col in 0..dims.width {
                let s = spherical_from_erp_pixel(col as f64 + 0.5, row as f64 + 0.5, dims);
                let cam = unrotate_ray(ray_from_spherical(s), spec.yaw_deg, spec.pitch_deg);
                let inside = camera_ray_to_pixel(cam, &spec).is_some_and(|(x, y)| {
                    let (xi, yi) = ((x + 0.5).floor(), (y + 0.5).floor());
                    xi >= 0.0 && yi >= 0.0 && xi < 80.0 && yi < 50.0
                });
                assert_eq!(m.get(col, row), inside, "pixel ({col},{row})");
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let spec = ViewportSpec::new(0.0, 0.0, 90.0, 10, 10).unwrap();
        assert!(matches!(
            reproject_mask_to_erp(&BinaryMask::new(11, 10), &spec, ErpDims::new(40, 20)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn footprint_wraps_seam_and_falls_back_at_pole() {
        let dims = ErpDims::new(2000, 1000);
        let seam = frustum_footprint(&ViewportSpec::new(180.0, 0.0, 60.0, 100, 100).unwrap(), dims);
        assert!(seam.col_count < dims.width);
        assert!(seam.col_start < 0 || seam.col_start as usize + seam.col_count > dims.width);
        let pole = frustum_footprint(&ViewportSpec::new(0.0, 85.0, 60.0, 100, 100).unwrap(), dims);
        assert!(pole.is_full(dims));
    }

    #[test]
    fn solid_angle_of_full_sphere() {
        let m = BinaryMask::ones(64, 32);
        assert!((mask_solid_angle(&m) - 4.0 * PI).abs() < 1e-9);
    }
}
