//! Synthetic panoramas with painted ground-truth objects.
//!
//! Objects are flat rectangles or disks lying on the plane tangent to the
//! sphere at their center, so they look undistorted in a perspective view and
//! bend in the panorama the way real objects do.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{write_annotations, AnnotationRecord};
use crate::raster::{BinaryMask, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    /// Half extents as angles seen from the sphere center, degrees.
    Rect { half_w_deg: f64, half_h_deg: f64 },
    Disk { radius_deg: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub name: String,
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub shape: ObjectShape,
    /// In-plane rotation, degrees.
    pub roll_deg: f64,
    pub color: [u8; 3],
}

impl SyntheticObject {
    /// Tangent-plane coordinates of a unit direction, or `None` on the far
    /// hemisphere.
    fn plane_coords(&self, d: [f64; 3]) -> Option<(f64, f64)> {
        let (sl, cl) = self.lon_deg.to_radians().sin_cos();
        let (sp, cp) = self.lat_deg.to_radians().sin_cos();
        let c = [cp * sl, sp, cp * cl];
        let e1 = [cl, 0.0, -sl];
        let e2 = [-sp * sl, cp, -sp * cl];
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let k = dot(d, c);
        if k <= 1e-6 {
            return None;
        }
        let (u, v) = (dot(d, e1) / k, dot(d, e2) / k);
        let (sr, cr) = self.roll_deg.to_radians().sin_cos();
        Some((cr * u + sr * v, -sr * u + cr * v))
    }

    pub fn contains(&self, d: [f64; 3]) -> bool {
        let Some((u, v)) = self.plane_coords(d) else { return false };
        match self.shape {
            ObjectShape::Rect { half_w_deg, half_h_deg } => {
                u.abs() < half_w_deg.to_radians().tan() && v.abs() < half_h_deg.to_radians().tan()
            }
            ObjectShape::Disk { radius_deg } => u.hypot(v) < radius_deg.to_radians().tan(),
        }
    }
}

fn pixel_dir(x: usize, y: usize, w: usize, h: usize) -> [f64; 3] {
    let lon = ((x as f64 + 0.5) / w as f64 - 0.5) * std::f64::consts::TAU;
    let lat = ((y as f64 + 0.5) / h as f64 - 0.5) * std::f64::consts::PI;
    let (sl, cl) = lon.sin_cos();
    let (sp, cp) = lat.sin_cos();
    [cp * sl, sp, cp * cl]
}

/// ERP pixels whose centers see the object.
pub fn rasterize_object(obj: &SyntheticObject, width: usize, height: usize) -> BinaryMask {
    let bits: Vec<u8> = (0..height)
        .into_par_iter()
        .flat_map_iter(|y| (0..width).map(move |x| obj.contains(pixel_dir(x, y, width, height)) as u8))
        .collect();
    BinaryMask { width, height, bits }
}

/// Smooth, seam-continuous background texture.
pub fn background(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let data: Vec<u8> = (0..height)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..width).flat_map(move |x| {
                let lon = (x as f64 + 0.5) / width as f64 * std::f64::consts::TAU;
                let lat = ((y as f64 + 0.5) / height as f64 - 0.5) * std::f64::consts::PI;
                (0..3).map(move |c| {
                    let k = c as f64 + 2.0;
                    let v = 110.0
                        + 50.0 * (k * lon + phase[c]).sin() * (2.0 * lat + phase[c + 3]).cos()
                        + 25.0 * (7.0 * lon - 5.0 * lat + phase[c]).sin();
                    v.clamp(0.0, 255.0) as u8
                })
            })
        })
        .collect();
    Image {
        width,
        height,
        channels: 3,
        data,
    }
}

/// Paints `mask` onto `img` with a flat colour and a light stripe pattern.
pub fn paint(img: &mut Image, mask: &BinaryMask, color: [u8; 3]) {
    for y in 0..img.height {
        for x in 0..img.width {
            if mask.get(x, y) {
                let shade = if (x / 6 + y / 6) % 2 == 0 { 0 } else { 24 };
                let p = img.pixel_mut(x, y);
                for c in 0..3 {
                    p[c] = color[c].saturating_sub(shade);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Mid-sized object away from the seam.
    Normal,
    /// Object straddling the left/right edge of the panorama.
    SeamSplit,
    /// Object under 0.1% of the panorama, inside one coarse grid cell.
    Tiny,
}

impl SceneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SceneKind::Normal => "normal",
            SceneKind::SeamSplit => "seam_split",
            SceneKind::Tiny => "tiny",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub id: String,
    pub kind: SceneKind,
    pub question: String,
    pub object: SyntheticObject,
    pub image: Image,
    pub mask: BinaryMask,
}

const AFFORDANCES: [(&str, &str); 8] = [
    ("mug", "Where can I pour myself some coffee?"),
    ("door handle", "How do I get out of this room?"),
    ("light switch", "I want to turn the lights off."),
    ("kettle", "I need to boil some water."),
    ("towel", "Where can I dry my hands?"),
    ("remote control", "How can I change the TV channel?"),
    ("chair", "Where can I sit down?"),
    ("book", "Give me something to read."),
];

fn random_shape(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ObjectShape {
    if rng.gen_bool(0.5) {
        ObjectShape::Rect {
            half_w_deg: rng.gen_range(lo..hi),
            half_h_deg: rng.gen_range(lo..hi) * 0.8,
        }
    } else {
        ObjectShape::Disk {
            radius_deg: rng.gen_range(lo..hi),
        }
    }
}

/// Draws the target object for a scene of the given kind.
pub fn random_object(kind: SceneKind, rng: &mut ChaCha8Rng) -> SyntheticObject {
    let (name, _) = AFFORDANCES[rng.gen_range(0..AFFORDANCES.len())];
    let (lon, lat, shape) = match kind {
        SceneKind::Normal => (
            rng.gen_range(-140.0..140.0),
            rng.gen_range(-30.0..30.0),
            random_shape(rng, 10.0, 20.0),
        ),
        SceneKind::SeamSplit => (
            180.0 + rng.gen_range(-6.0..6.0),
            rng.gen_range(-25.0..25.0),
            random_shape(rng, 12.0, 22.0),
        ),
        SceneKind::Tiny => {
            // center of a coarse 4x3 cell, middle or outer row
            let col = rng.gen_range(0..4) as f64;
            let lat = [-50.0, 0.0, 0.0, 50.0][rng.gen_range(0..4)];
            (
                -180.0 + 45.0 + 90.0 * col + rng.gen_range(-15.0..15.0),
                lat + rng.gen_range(-6.0..6.0),
                random_shape(rng, 1.6, 2.6),
            )
        }
    };
    SyntheticObject {
        name: name.to_string(),
        lon_deg: lon,
        lat_deg: lat,
        shape,
        // upright, like doors, screens and frames
        roll_deg: 0.0,
        color: [rng.gen_range(200..=255), rng.gen_range(0..60), rng.gen_range(120..220)],
    }
}

pub fn render_scene(id: &str, kind: SceneKind, width: usize, height: usize, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let object = random_object(kind, &mut rng);
    let question = AFFORDANCES
        .iter()
        .find(|(n, _)| *n == object.name)
        .map(|(_, q)| q.to_string())
        .unwrap_or_default();
    let mask = rasterize_object(&object, width, height);
    let mut image = background(width, height, seed ^ 0x5eed);
    paint(&mut image, &mask, object.color);
    SyntheticScene {
        id: id.to_string(),
        kind,
        question,
        object,
        image,
        mask,
    }
}

/// `count` scenes cycling through the kinds and alternating between
/// 2000x1000 and 4000x2000 panoramas.
pub fn standard_scenes(count: usize, seed: u64) -> Vec<SyntheticScene> {
    let kinds = [SceneKind::Normal, SceneKind::SeamSplit, SceneKind::Tiny];
    (0..count)
        .into_par_iter()
        .map(|i| {
            let kind = kinds[i % 3];
            let (w, h) = if (i / 3) % 2 == 0 { (2000, 1000) } else { (4000, 2000) };
            render_scene(&format!("scene_{i:03}"), kind, w, h, seed.wrapping_add(i as u64 * 7919))
        })
        .collect()
}

/// Writes images, masks and `annotations.jsonl` into `dir`.
pub fn write_dataset(dir: &Path, scenes: &[SyntheticScene]) -> Result<Vec<AnnotationRecord>> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let records: Vec<AnnotationRecord> = scenes
        .par_iter()
        .map(|s| -> Result<AnnotationRecord> {
            let rec = AnnotationRecord {
                id: s.id.clone(),
                image_path: format!("images/{}.png", s.id),
                question: s.question.clone(),
                object_name: s.object.name.clone(),
                mask_path: format!("masks/{}.png", s.id),
                scene_category: Some(s.kind.as_str().to_string()),
                subset: None,
            };
            s.image.save_png(&dir.join(&rec.image_path))?;
            s.mask.save_png(&dir.join(&rec.mask_path))?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    write_annotations(dir, &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seam_objects_touch_both_edges() {
        for seed in 0..4 {
            let s = render_scene("s", SceneKind::SeamSplit, 400, 200, seed);
            let m = &s.mask;
            assert!((0..200).any(|y| m.get(0, y)) && (0..200).any(|y| m.get(399, y)));
            assert_eq!(m.connected_components(true), 1);
            assert_eq!(m.connected_components(false), 2);
        }
    }

    #[test]
    fn tiny_objects_are_tiny_but_visible() {
        for seed in 0..20 {
            let s = render_scene("t", SceneKind::Tiny, 2000, 1000, seed);
            let frac = s.mask.area() as f64 / 2e6;
            assert!(frac < 0.001 && frac > 1.0 / 12.0 * 0.001, "seed {seed}: {frac}");
            // one coarse column: 500 px per column
            let (x0, _, x1, _) = s.mask.bbox().unwrap();
            assert_eq!(x0 / 500, (x1 - 1) / 500, "seed {seed}");
        }
    }

    #[test]
    fn disk_matches_angular_radius() {
        let obj = SyntheticObject {
            name: "x".into(),
            lon_deg: 0.0,
            lat_deg: 0.0,
            shape: ObjectShape::Disk { radius_deg: 10.0 },
            roll_deg: 0.0,
            color: [255, 0, 0],
        };
        let m = rasterize_object(&obj, 3600, 1800);
        // at the equator one pixel is 0.1 degree on both axes
        let (x0, y0, x1, y1) = m.bbox().unwrap();
        assert!(((x1 - x0) as f64 - 200.0).abs() <= 2.0);
        assert!(((y1 - y0) as f64 - 200.0).abs() <= 2.0);
    }

    #[test]
    fn background_is_seam_continuous() {
        let img = background(720, 360, 1);
        for y in (0..360).step_by(37) {
            for c in 0..3 {
                let a = img.pixel(0, y)[c] as i32;
                let b = img.pixel(719, y)[c] as i32;
                assert!((a - b).abs() <= 12, "row {y}");
            }
        }
    }
}
