//! Ground-truth backends for tests and desk-scale evaluation.
//!
//! The oracle knows each sample's panoramic mask and answers every role from
//! it, using the geometry carried in the request extensions: grid cells are
//! read off the mask, detections and segmentations are the mask projected
//! into the requested view.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Detection, GridExt, OpenVocabularyDetector, PromptableSegmenter, RawDetections, RequestExt, ViewExt, VisionLanguageModel};
use crate::error::{Error, Result};
use crate::eval::load_annotations;
use crate::geometry::sample_mask_into_viewport;
use crate::grid::GridSpec;
use crate::raster::{BinaryMask, Image};

/// Area fraction of the queried frame below which targets are reported small.
pub const SMALL_AREA_FRACTION: f64 = 0.001;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Probability of replacing each reported grid cell with a neighbour.
    pub grid_p: f64,
    /// Uniform jitter applied to every box coordinate, in pixels.
    pub jitter_px: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterMode {
    /// Ground truth restricted to the prompt box.
    #[default]
    Oracle,
    /// Fills the prompt box; sensitive to projection distortion.
    RectangleFill,
}

#[derive(Clone, Debug)]
pub struct OracleSample {
    pub object_name: String,
    pub mask: BinaryMask,
    pixels: Vec<(u32, u32)>,
}

impl OracleSample {
    pub fn new(object_name: impl Into<String>, mask: BinaryMask) -> Self {
        let mut pixels = Vec::new();
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(x, y) {
                    pixels.push((x as u32, y as u32));
                }
            }
        }
        Self {
            object_name: object_name.into(),
            mask,
            pixels,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleMock {
    samples: std::sync::Arc<HashMap<String, OracleSample>>,
    noise: NoiseConfig,
    segmenter: SegmenterMode,
}

fn bad_request(msg: impl Into<String>) -> Error {
    Error::Backend {
        status: 422,
        body: msg.into(),
    }
}

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

impl OracleMock {
    pub fn new(samples: HashMap<String, OracleSample>, noise: NoiseConfig) -> Self {
        Self {
            samples: std::sync::Arc::new(samples),
            noise,
            segmenter: SegmenterMode::Oracle,
        }
    }

    /// Loads `annotations.jsonl` and the referenced masks.
    pub fn from_dataset(dir: &Path, noise: NoiseConfig) -> Result<Self> {
        let mut samples = HashMap::new();
        for rec in load_annotations(dir)? {
            let mask = BinaryMask::load_png(&dir.join(&rec.mask_path)).map_err(|e| Error::DatasetFormat {
                id: rec.id.clone(),
                reason: format!("cannot read mask: {e}"),
            })?;
            samples.insert(rec.id.clone(), OracleSample::new(rec.object_name.clone(), mask));
        }
        Ok(Self::new(samples, noise))
    }

    /// Shares the loaded samples with different noise and segmenter settings.
    pub fn with_settings(&self, noise: NoiseConfig, segmenter: SegmenterMode) -> Self {
        Self {
            samples: self.samples.clone(),
            noise,
            segmenter,
        }
    }

    pub fn with_segmenter(mut self, segmenter: SegmenterMode) -> Self {
        self.segmenter = segmenter;
        self
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    fn sample(&self, ext: &RequestExt) -> Result<&OracleSample> {
        let id = ext.sample_id.as_deref().ok_or_else(|| bad_request("sample_id is required by the oracle"))?;
        self.samples.get(id).ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    fn rng(&self, ext: &RequestExt, role: &str) -> ChaCha8Rng {
        let depth = ext.grid.map(|g| g.depth as u64).unwrap_or(0);
        let id = ext.sample_id.as_deref().unwrap_or("");
        ChaCha8Rng::seed_from_u64(fnv(&[
            &self.noise.seed.to_le_bytes(),
            id.as_bytes(),
            role.as_bytes(),
            &depth.to_le_bytes(),
        ]))
    }

    /// Cells of the queried frame touched by the mask, and whether the mask
    /// covers less than [`SMALL_AREA_FRACTION`] of the frame.
    pub fn grid_answer(&self, sample: &OracleSample, g: &GridExt) -> (BTreeSet<usize>, bool) {
        let grid = GridSpec::new(g.cols, g.rows);
        let m = &g.frame_to_erp;
        let w = sample.mask.width as f64;
        let (fw, fh) = (g.frame_width as f64, g.frame_height as f64);
        let mut cells = BTreeSet::new();
        let mut inside = 0usize;
        for &(c, r) in &sample.pixels {
            let y = r as f64 + 0.5;
            let fy = (y - m.offset_y) / m.scale_y;
            if !(0.0..fh).contains(&fy) {
                continue;
            }
            for x in [c as f64 + 0.5, c as f64 + 0.5 + w, c as f64 + 0.5 - w] {
                let fx = (x - m.offset_x) / m.scale_x;
                if (0.0..fw).contains(&fx) {
                    if let Some(i) = grid.cell_index_at(fx as usize, fy as usize, g.frame_width, g.frame_height) {
                        cells.insert(i);
                    }
                    inside += 1;
                    break;
                }
            }
        }
        let frame_area = fw * m.scale_x * fh * m.scale_y;
        let small = (inside as f64) < SMALL_AREA_FRACTION * frame_area;
        (cells, small)
    }

    fn perturb(&self, cells: BTreeSet<usize>, g: &GridExt, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
        if self.noise.grid_p <= 0.0 {
            return cells;
        }
        let grid = GridSpec::new(g.cols, g.rows);
        cells
            .into_iter()
            .map(|i| {
                if !rng.gen_bool(self.noise.grid_p.min(1.0)) {
                    return i;
                }
                let (c, r) = grid.cell_position(i);
                let mut nbrs = Vec::new();
                if c > 0 {
                    nbrs.push(i - 1);
                }
                if c + 1 < g.cols {
                    nbrs.push(i + 1);
                }
                if r > 0 {
                    nbrs.push(i - g.cols);
                }
                if r + 1 < g.rows {
                    nbrs.push(i + g.cols);
                }
                if nbrs.is_empty() {
                    i
                } else {
                    nbrs[rng.gen_range(0..nbrs.len())]
                }
            })
            .collect()
    }

    /// Ground-truth mask as seen in the requested view.
    pub fn project(&self, sample: &OracleSample, view: &ViewExt) -> Result<BinaryMask> {
        match *view {
            ViewExt::Perspective {
                spec,
                erp_width,
                erp_height,
            } => {
                if (erp_width, erp_height) != sample.mask.dims() {
                    return Err(bad_request("viewport erp dims do not match the sample"));
                }
                sample_mask_into_viewport(&sample.mask, &spec)
            }
            ViewExt::ErpCrop {
                x0,
                y0,
                width,
                height,
                erp_width,
                erp_height,
            } => {
                if (erp_width, erp_height) != sample.mask.dims() || y0 + height > erp_height {
                    return Err(bad_request("crop does not fit the sample"));
                }
                let w = erp_width as i64;
                Ok(BinaryMask::from_fn(width, height, |x, y| {
                    let sx = (x0 + x as i64).rem_euclid(w) as usize;
                    sample.mask.get(sx, y0 + y)
                }))
            }
        }
    }

    fn view<'a>(&self, image: &Image, ext: &'a RequestExt) -> Result<&'a ViewExt> {
        let view = ext.viewport.as_ref().ok_or_else(|| bad_request("viewport extension is required by the oracle"))?;
        if view.dims() != image.dims() {
            return Err(bad_request(format!(
                "image {:?} does not match viewport {:?}",
                image.dims(),
                view.dims()
            )));
        }
        Ok(view)
    }
}

impl VisionLanguageModel for OracleMock {
    fn id(&self) -> String {
        "oracle-vlm".into()
    }

    fn complete(&self, _image: &Image, _prompt: &str, ext: &RequestExt) -> Result<String> {
        let g = ext.grid.ok_or_else(|| bad_request("grid extension is required by the oracle"))?;
        let sample = self.sample(ext)?;
        let (cells, small) = self.grid_answer(sample, &g);
        let cells = self.perturb(cells, &g, &mut self.rng(ext, "vlm"));
        let answer = serde_json::json!({
            "grid_boxes": cells.into_iter().collect::<Vec<_>>(),
            "task": "",
            "object_name": sample.object_name,
            "object_part": sample.object_name,
            "small": small,
        });
        Ok(format!(
            "Thinking\nOracle answer read from the ground-truth mask.\n\nOutput\n```json\n{answer}\n```"
        ))
    }
}

impl OpenVocabularyDetector for OracleMock {
    fn id(&self) -> String {
        "oracle-ovd".into()
    }

    fn detect(&self, image: &Image, _query: &str, ext: &RequestExt) -> Result<RawDetections> {
        let view = self.view(image, ext)?;
        let sample = self.sample(ext)?;
        let projected = self.project(sample, view)?;
        let Some((x0, y0, x1, y1)) = projected.bbox() else {
            return Ok(RawDetections::default());
        };
        let mut bbox = [x0 as f64, y0 as f64, x1 as f64, y1 as f64];
        if self.noise.jitter_px > 0.0 {
            let mut rng = self.rng(ext, "ovd");
            let j = self.noise.jitter_px;
            for v in &mut bbox {
                *v += rng.gen_range(-j..=j);
            }
        }
        let (cx, cy) = projected.centroid().expect("non-empty mask");
        Ok(RawDetections {
            boxes: vec![bbox],
            points: vec![[cx, cy]],
            scores: vec![1.0],
        })
    }
}

impl PromptableSegmenter for OracleMock {
    fn id(&self) -> String {
        match self.segmenter {
            SegmenterMode::Oracle => "oracle-sam".into(),
            SegmenterMode::RectangleFill => "rectangle-fill-sam".into(),
        }
    }

    fn segment(&self, image: &Image, prompt: &Detection, ext: &RequestExt) -> Result<Image> {
        let (w, h) = image.dims();
        let boxed = prompt.box_mask(w, h);
        let mask = match self.segmenter {
            SegmenterMode::RectangleFill => boxed,
            SegmenterMode::Oracle => {
                let view = self.view(image, ext)?;
                let projected = self.project(self.sample(ext)?, view)?;
                BinaryMask {
                    width: w,
                    height: h,
                    bits: projected.bits.iter().zip(&boxed.bits).map(|(&a, &b)| a & b).collect(),
                }
            }
        };
        Ok(mask.to_gray())
    }
}
