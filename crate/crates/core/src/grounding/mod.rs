//! Model backends and the cascaded grounding pipeline.
//!
//! Three roles are pluggable: a vision-language model answering the grid
//! routing prompt, an open-vocabulary detector, and a promptable segmenter.
//! Each can be served over the `pap-wire/1` JSON-over-HTTP protocol
//! ([`HttpBackend`]) or answered in-process by the ground-truth
//! [`OracleMock`].

mod http;
mod oracle;
mod pipeline;
mod server;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ViewportSpec;
use crate::grid::AffineMap;
use crate::raster::{BinaryMask, Image};

pub use http::{BackendKind, HttpBackend, ModelBackendConfig, AUTH_TOKEN_ENV};
pub use oracle::{NoiseConfig, OracleMock, OracleSample, SegmenterMode};
pub use pipeline::{
    ovd_detect, ovd_detect_with_fallback, run_pipeline, sam_segment, PartialResult, PipelineConfig, PipelineError,
    PipelineResult, Stage, StageTimings, ViewGeometry,
};
pub use server::{mock_serve, MockServer};

/// Routing frame geometry attached to VLM requests so that oracle backends
/// can answer exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridExt {
    pub cols: usize,
    pub rows: usize,
    pub depth: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Whether the frame's left and right edges meet (full panorama).
    pub periodic: bool,
    pub frame_to_erp: AffineMap,
    pub erp_width: usize,
    pub erp_height: usize,
}

/// How the image sent to the detector/segmenter was cut from the panorama.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViewExt {
    Perspective {
        spec: ViewportSpec,
        erp_width: usize,
        erp_height: usize,
    },
    /// Raw panorama crop; `x0` may be negative or run past the seam.
    ErpCrop {
        x0: i64,
        y0: usize,
        width: usize,
        height: usize,
        erp_width: usize,
        erp_height: usize,
    },
}

impl ViewExt {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ViewExt::Perspective { spec, .. } => (spec.width, spec.height),
            ViewExt::ErpCrop { width, height, .. } => (*width, *height),
        }
    }
}

/// Optional request context shared by all three roles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RequestExt {
    pub sample_id: Option<String>,
    pub grid: Option<GridExt>,
    pub viewport: Option<ViewExt>,
}

/// Detector output before selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawDetections {
    pub boxes: Vec<[f64; 4]>,
    pub points: Vec<[f64; 2]>,
    pub scores: Vec<f64>,
}

/// Selected detection in image coordinates.
///
/// Boxes and points are edge-anchored (pixel `(i, j)` spans
/// `[i, i+1) x [j, j+1)`); a pixel is inside the box when its center is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub points: Vec<[f64; 2]>,
    pub score: f64,
    pub label: String,
}

impl Detection {
    /// Detection covering the whole image, prompted at its center.
    pub fn whole_image(width: usize, height: usize, label: &str) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            bbox: [0.0, 0.0, w, h],
            points: vec![[w / 2.0, h / 2.0]],
            score: 0.0,
            label: label.to_string(),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.bbox;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    /// Mask of pixels whose centers fall inside the box.
    pub fn box_mask(&self, width: usize, height: usize) -> BinaryMask {
        let [x0, y0, x1, y1] = self.bbox;
        BinaryMask::from_fn(width, height, |x, y| {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            cx >= x0 && cx < x1 && cy >= y0 && cy < y1
        })
    }
}

pub trait VisionLanguageModel: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, image: &Image, prompt: &str, ext: &RequestExt) -> Result<String>;
}

pub trait OpenVocabularyDetector: Send + Sync {
    fn id(&self) -> String;
    fn detect(&self, image: &Image, query: &str, ext: &RequestExt) -> Result<RawDetections>;
}

pub trait PromptableSegmenter: Send + Sync {
    fn id(&self) -> String;
    /// Returns a single-channel mask; values `>= 128` are foreground.
    fn segment(&self, image: &Image, prompt: &Detection, ext: &RequestExt) -> Result<Image>;
}

/// The three model roles used by the pipeline.
#[derive(Clone)]
pub struct Backends {
    pub vlm: Arc<dyn VisionLanguageModel>,
    pub ovd: Arc<dyn OpenVocabularyDetector>,
    pub sam: Arc<dyn PromptableSegmenter>,
}

impl Backends {
    /// Uses one object for all three roles.
    pub fn uniform<B>(backend: Arc<B>) -> Self
    where
        B: VisionLanguageModel + OpenVocabularyDetector + PromptableSegmenter + 'static,
    {
        Self {
            vlm: backend.clone(),
            ovd: backend.clone(),
            sam: backend,
        }
    }

    /// Builds HTTP backends (or in-process oracles) from configuration.
    pub fn from_configs(vlm: &ModelBackendConfig, ovd: &ModelBackendConfig, sam: &ModelBackendConfig) -> Result<Self> {
        for (cfg, kind) in [(vlm, BackendKind::Vlm), (ovd, BackendKind::Ovd), (sam, BackendKind::Sam)] {
            if cfg.kind != kind {
                return Err(Error::Config(format!("backend configured as {:?} used for {kind:?}", cfg.kind)));
            }
        }
        let mut oracles: Vec<(std::path::PathBuf, Arc<OracleMock>)> = Vec::new();
        let mut oracle_for = |cfg: &ModelBackendConfig| -> Result<Option<Arc<OracleMock>>> {
            let Some(o) = &cfg.oracle else { return Ok(None) };
            let base = match oracles.iter().find(|(p, _)| *p == o.dataset) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = Arc::new(OracleMock::from_dataset(&o.dataset, NoiseConfig::default())?);
                    oracles.push((o.dataset.clone(), m.clone()));
                    m
                }
            };
            Ok(Some(Arc::new(base.with_settings(o.noise, o.segmenter))))
        };
        let vlm_b: Arc<dyn VisionLanguageModel> = match oracle_for(vlm)? {
            Some(m) => m,
            None => Arc::new(HttpBackend::new(vlm.clone())?),
        };
        let ovd_b: Arc<dyn OpenVocabularyDetector> = match oracle_for(ovd)? {
            Some(m) => m,
            None => Arc::new(HttpBackend::new(ovd.clone())?),
        };
        let sam_b: Arc<dyn PromptableSegmenter> = match oracle_for(sam)? {
            Some(m) => m,
            None => Arc::new(HttpBackend::new(sam.clone())?),
        };
        Ok(Self {
            vlm: vlm_b,
            ovd: ovd_b,
            sam: sam_b,
        })
    }

    pub fn ids(&self) -> [String; 3] {
        [self.vlm.id(), self.ovd.id(), self.sam.id()]
    }
}
