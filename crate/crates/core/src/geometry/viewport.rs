use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use super::{ErpDims, ViewportSpec};
use crate::error::Result;
use crate::raster::{BinaryMask, Image};

/// Bilinear sample at edge-anchored ERP coordinates `(u, v)`.
///
/// Columns wrap around the seam; rows clamp at the poles. Writes one value
/// per channel into `out`.
#[inline]
pub fn sample_erp_bilinear(erp: &Image, u: f64, v: f64, out: &mut [f64]) {
    let w = erp.width as i64;
    let h = erp.height as i64;
    let sx = u - 0.5;
    let sy = v - 0.5;
    let fx = sx.floor();
    let fy = sy.floor();
    let tx = sx - fx;
    let ty = sy - fy;
    let x0 = (fx as i64).rem_euclid(w) as usize;
    let x1 = (fx as i64 + 1).rem_euclid(w) as usize;
    let y0 = (fy as i64).clamp(0, h - 1) as usize;
    let y1 = (fy as i64 + 1).clamp(0, h - 1) as usize;
    let c = erp.channels;
    let row0 = y0 * erp.width;
    let row1 = y1 * erp.width;
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let p00 = erp.data[(row0 + x0) * c + ch] as f64;
        let p10 = erp.data[(row0 + x1) * c + ch] as f64;
        let p01 = erp.data[(row1 + x0) * c + ch] as f64;
        let p11 = erp.data[(row1 + x1) * c + ch] as f64;
        let top = p00 + (p10 - p00) * tx;
        let bot = p01 + (p11 - p01) * tx;
        *o = top + (bot - top) * ty;
    }
}

#[inline]
fn erp_coords(dir: [f64; 3], w: f64, h: f64) -> (f64, f64) {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    let lon = dir[0].atan2(dir[2]);
    let lat = (dir[1] / n).clamp(-1.0, 1.0).asin();
    ((lon / TAU + 0.5) * w, (lat / PI + 0.5) * h)
}

/// Renders the rectilinear view described by `spec` with bilinear sampling.
///
/// Rows are computed in parallel; output does not depend on the thread count.
pub fn extract_viewport(erp: &Image, spec: &ViewportSpec) -> Result<Image> {
    spec.validate()?;
    erp.validate_erp(false)?;
    let cam = spec.camera();
    let c = erp.channels;
    let (ew, eh) = (erp.width as f64, erp.height as f64);
    let mut out = Image::new(spec.width, spec.height, c);
    out.data
        .par_chunks_mut(spec.width * c)
        .enumerate()
        .for_each(|(y, row)| {
            let mut px = [0f64; 3];
            for x in 0..spec.width {
                let dir = cam.world_dir(x as f64, y as f64);
                let (u, v) = erp_coords(dir, ew, eh);
                sample_erp_bilinear(erp, u, v, &mut px);
                for ch in 0..c {
                    row[x * c + ch] = px[ch].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    Ok(out)
}

/// Nearest-neighbour transfer of an ERP-frame mask into the viewport frame.
pub fn sample_mask_into_viewport(mask: &BinaryMask, spec: &ViewportSpec) -> Result<BinaryMask> {
    spec.validate()?;
    let cam = spec.camera();
    let dims = ErpDims::new(mask.width, mask.height);
    let (ew, eh) = (dims.width as f64, dims.height as f64);
    let mut out = BinaryMask::new(spec.width, spec.height);
    out.bits
        .par_chunks_mut(spec.width)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, bit) in row.iter_mut().enumerate() {
                let (u, v) = erp_coords(cam.world_dir(x as f64, y as f64), ew, eh);
                let col = (u.floor() as i64).rem_euclid(mask.width as i64) as usize;
                let r = (v.floor() as i64).clamp(0, mask.height as i64 - 1) as usize;
                *bit = mask.bits[r * mask.width + col];
            }
        });
    Ok(out)
}
