use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Backends, Detection, OpenVocabularyDetector, PromptableSegmenter, RequestExt, ViewExt};
use crate::error::{Error, Result};
use crate::gaze::{gaze_extract, GazeParams};
use crate::geometry::{reproject_mask_to_erp, ErpDims};
use crate::grid::{route, CropRegion, RoutingConfig, RoutingResult, RoutingStep};
use crate::raster::{BinaryMask, Image};

pub const MASK_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub routing: RoutingConfig,
    pub gaze: GazeParams,
    /// When false the detector sees the raw panorama crop of the routed region.
    pub adaptive_gaze: bool,
    /// Last rung of the detection fallback: prompt the segmenter with the
    /// whole view instead of failing.
    pub whole_view_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            routing: RoutingConfig::default(),
            gaze: GazeParams::default(),
            adaptive_gaze: true,
            whole_view_fallback: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        self.gaze.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Route,
    Gaze,
    Detect,
    Segment,
    Reproject,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Route => "route",
            Stage::Gaze => "gaze",
            Stage::Detect => "detect",
            Stage::Segment => "segment",
            Stage::Reproject => "reproject",
        };
        f.write_str(s)
    }
}

/// Wall time per stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub route_ms: f64,
    pub gaze_ms: f64,
    pub detect_ms: f64,
    pub segment_ms: f64,
    pub reproject_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.route_ms + self.gaze_ms + self.detect_ms + self.segment_ms + self.reproject_ms
    }

    fn slot(&mut self, stage: Stage) -> &mut f64 {
        match stage {
            Stage::Route => &mut self.route_ms,
            Stage::Gaze => &mut self.gaze_ms,
            Stage::Detect => &mut self.detect_ms,
            Stage::Segment => &mut self.segment_ms,
            Stage::Reproject => &mut self.reproject_ms,
        }
    }
}

/// How the detector's input was cut from the panorama.
pub type ViewGeometry = ViewExt;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    pub routing: RoutingResult,
    pub routing_history: Vec<RoutingStep>,
    /// Depth at which routing stopped.
    pub depth: usize,
    pub region: CropRegion,
    /// Last grid overlay shown to the VLM.
    pub overlay: Image,
    pub view: ViewGeometry,
    pub view_image: Image,
    /// Query that produced `detection`; empty for the whole-view fallback.
    pub query: String,
    pub detection: Detection,
    pub mask_persp: BinaryMask,
    pub mask_erp: BinaryMask,
    pub timings: StageTimings,
    /// VLM, detector and segmenter identifiers.
    pub backend_ids: [String; 3],
}

impl PipelineResult {
    pub fn viewport_spec(&self) -> Option<crate::geometry::ViewportSpec> {
        match self.view {
            ViewExt::Perspective { spec, .. } => Some(spec),
            ViewExt::ErpCrop { .. } => None,
        }
    }
}

/// Intermediates available when a stage failed.
#[derive(Clone, Debug, Default)]
pub struct PartialResult {
    pub routing: Option<RoutingResult>,
    pub routing_history: Vec<RoutingStep>,
    pub region: Option<CropRegion>,
    pub overlay: Option<Image>,
    pub view: Option<ViewGeometry>,
    pub view_image: Option<Image>,
    pub detection: Option<Detection>,
    pub mask_persp: Option<BinaryMask>,
    pub timings: StageTimings,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
    pub partial: Box<PartialResult>,
}

/// Runs the detector and picks the highest-scoring box.
///
/// Boxes are clamped to the image; the selection keeps the returned points
/// that fall inside it, or the box center when there are none.
pub fn ovd_detect(ovd: &dyn OpenVocabularyDetector, image: &Image, query: &str, ext: &RequestExt) -> Result<Detection> {
    if query.trim().is_empty() {
        return Err(Error::NoDetection);
    }
    let raw = ovd.detect(image, query, ext)?;
    let (w, h) = (image.width as f64, image.height as f64);
    let mut best: Option<([f64; 4], f64)> = None;
    for (i, b) in raw.boxes.iter().enumerate() {
        if b.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let bbox = [b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)];
        if !(bbox[0] < bbox[2] && bbox[1] < bbox[3]) {
            continue;
        }
        let score = raw.scores.get(i).copied().unwrap_or(0.0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((bbox, score));
        }
    }
    let (bbox, score) = best.ok_or(Error::NoDetection)?;
    let mut det = Detection {
        bbox,
        points: Vec::new(),
        score,
        label: query.to_string(),
    };
    det.points = raw.points.iter().copied().filter(|p| det.contains_point(p[0], p[1])).collect();
    if det.points.is_empty() {
        det.points.push([(bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0]);
    }
    Ok(det)
}

/// Tries each query in turn, then optionally the whole view.
pub fn ovd_detect_with_fallback(
    ovd: &dyn OpenVocabularyDetector,
    image: &Image,
    queries: &[&str],
    whole_view: bool,
    ext: &RequestExt,
) -> Result<(Detection, String)> {
    let mut tried: Vec<&str> = Vec::new();
    for &q in queries {
        if q.trim().is_empty() || tried.contains(&q) {
            continue;
        }
        tried.push(q);
        match ovd_detect(ovd, image, q, ext) {
            Ok(d) => return Ok((d, q.to_string())),
            Err(Error::NoDetection) => log::debug!("no detection for {q:?}"),
            Err(e) => return Err(e),
        }
    }
    if whole_view {
        let label = tried.last().copied().unwrap_or("");
        return Ok((Detection::whole_image(image.width, image.height, label), String::new()));
    }
    Err(Error::GroundingFailed(format!("no detection for {tried:?}")))
}

/// Segments `image` from a detection prompt and binarizes the result.
pub fn sam_segment(sam: &dyn PromptableSegmenter, image: &Image, det: &Detection, ext: &RequestExt) -> Result<BinaryMask> {
    let gray = sam.segment(image, det, ext)?;
    if gray.dims() != image.dims() {
        return Err(Error::MaskDimMismatch {
            expected: image.dims(),
            actual: gray.dims(),
        });
    }
    BinaryMask::from_gray(&gray, MASK_THRESHOLD)
}

/// Integer ERP window of a region, as used for the raw-crop view.
fn erp_window(region: &CropRegion, erp_width: usize, erp_height: usize) -> (i64, usize, usize, usize) {
    let r = region.erp_rect();
    let x0 = r.x0.floor() as i64;
    let y0 = (r.y0.floor().max(0.0) as usize).min(erp_height - 1);
    let w = ((r.x1.ceil() as i64 - x0).max(1) as usize).min(erp_width);
    let h = ((r.y1.ceil() as usize).min(erp_height) - y0).max(1);
    (x0, y0, w, h)
}

/// Route, look, detect, segment and map the mask back to the panorama.
pub fn run_pipeline(
    erp: &Image,
    task: &str,
    backends: &Backends,
    cfg: &PipelineConfig,
    sample_id: Option<&str>,
) -> std::result::Result<PipelineResult, PipelineError> {
    let mut partial = PartialResult::default();
    macro_rules! stage {
        ($stage:expr, $body:expr) => {{
            let t = Instant::now();
            let r: Result<_> = $body;
            *partial.timings.slot($stage) = t.elapsed().as_secs_f64() * 1e3;
            match r {
                Ok(v) => v,
                Err(source) => {
                    return Err(PipelineError {
                        stage: $stage,
                        source,
                        partial: Box::new(partial),
                    })
                }
            }
        }};
    }

    let (state, routing) = stage!(Stage::Route, cfg.validate().and_then(|_| route(erp, task, backends.vlm.as_ref(), &cfg.routing, sample_id)));
    partial.routing = Some(routing.clone());
    partial.routing_history = state.history.clone();
    partial.region = Some(state.crop_region);
    partial.overlay = Some(state.overlay.clone());
    let region = state.crop_region;
    let (ew, eh) = erp.dims();

    let (view, view_image) = stage!(Stage::Gaze, {
        if cfg.adaptive_gaze {
            gaze_extract(erp, &region, &cfg.gaze).map(|(img, spec)| {
                (
                    ViewExt::Perspective {
                        spec,
                        erp_width: ew,
                        erp_height: eh,
                    },
                    img,
                )
            })
        } else {
            let (x0, y0, width, height) = erp_window(&region, ew, eh);
            erp.crop_wrapped(x0, y0, width, height).map(|img| {
                (
                    ViewExt::ErpCrop {
                        x0,
                        y0,
                        width,
                        height,
                        erp_width: ew,
                        erp_height: eh,
                    },
                    img,
                )
            })
        }
    });
    partial.view = Some(view);
    partial.view_image = Some(view_image.clone());
    let ext = RequestExt {
        sample_id: sample_id.map(str::to_string),
        grid: None,
        viewport: Some(view),
    };

    let (detection, query) = stage!(
        Stage::Detect,
        ovd_detect_with_fallback(
            backends.ovd.as_ref(),
            &view_image,
            &[&routing.object_part, &routing.object_name],
            cfg.whole_view_fallback,
            &ext,
        )
    );
    partial.detection = Some(detection.clone());

    let mask_persp = stage!(Stage::Segment, sam_segment(backends.sam.as_ref(), &view_image, &detection, &ext));
    partial.mask_persp = Some(mask_persp.clone());

    let mask_erp = stage!(Stage::Reproject, {
        match view {
            ViewExt::Perspective { spec, .. } => reproject_mask_to_erp(&mask_persp, &spec, ErpDims::new(ew, eh)),
            ViewExt::ErpCrop { x0, y0, .. } => {
                let mut out = BinaryMask::new(ew, eh);
                for y in 0..mask_persp.height {
                    for x in 0..mask_persp.width {
                        if mask_persp.get(x, y) {
                            out.set((x0 + x as i64).rem_euclid(ew as i64) as usize, y0 + y, true);
                        }
                    }
                }
                Ok(out)
            }
        }
    });

    Ok(PipelineResult {
        routing,
        routing_history: state.history,
        depth: state.depth,
        region,
        overlay: state.overlay,
        view,
        view_image,
        query,
        detection,
        mask_persp,
        mask_erp,
        timings: partial.timings,
        backend_ids: backends.ids(),
    })
}
