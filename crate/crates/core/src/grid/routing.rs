use serde::{Deserialize, Serialize};

use super::{build_routing_prompt, merge_cells, parse_vlm_response, render_grid_overlay, AffineMap, CropRegion, GridSpec, RoutingResult, STRICT_JSON_SUFFIX};
use crate::error::{Error, Result};
use crate::grounding::{GridExt, RequestExt, VisionLanguageModel};
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub grid: GridSpec,
    /// Query resolution per depth; the last entry is reused for deeper levels.
    pub resolutions: Vec<(usize, usize)>,
    pub max_depth: usize,
    /// Extra queries after an unparseable reply.
    pub reprompt_retries: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            resolutions: vec![(2000, 1000), (1500, 1000)],
            max_depth: 2,
            reprompt_retries: 2,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.cell_count() < 2 {
            return Err(Error::Config("routing grid needs at least two cells".into()));
        }
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&(w, h)| w < 2 || h < 2) {
            return Err(Error::Config("routing resolutions must be non-empty and at least 2x2".into()));
        }
        Ok(())
    }

    pub fn resolution(&self, depth: usize) -> (usize, usize) {
        self.resolutions[depth.min(self.resolutions.len() - 1)]
    }
}

/// One query of the routing loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingStep {
    pub depth: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub frame_to_erp: AffineMap,
    pub result: RoutingResult,
    pub region: CropRegion,
}

#[derive(Clone, Debug)]
pub struct RoutingState {
    pub depth: usize,
    /// Frame shown to the model at `depth`, without the grid.
    pub image: Image,
    /// `image` with the grid drawn on it.
    pub overlay: Image,
    /// Selected region of the final frame, mapped to the full panorama.
    pub crop_region: CropRegion,
    pub task_text: String,
    pub history: Vec<RoutingStep>,
}

fn query(
    vlm: &dyn VisionLanguageModel,
    overlay: &Image,
    task: &str,
    cfg: &RoutingConfig,
    ext: &RequestExt,
) -> Result<RoutingResult> {
    let base = build_routing_prompt(task);
    let mut prompt = base.clone();
    let mut attempt = 0;
    loop {
        let text = vlm.complete(overlay, &prompt, ext)?;
        match parse_vlm_response(&text, &cfg.grid) {
            Err(Error::UnparseableResponse(why)) if attempt < cfg.reprompt_retries => {
                log::debug!("unparseable routing reply ({why}), re-prompting");
                attempt += 1;
                prompt = format!("{base}\n\n{STRICT_JSON_SUFFIX}");
            }
            other => return other,
        }
    }
}

/// Coarse-to-fine localization of the task target.
///
/// Depth 0 shows the whole panorama at `resolutions[0]`. A reply naming a
/// single cell flagged `small` crops that cell from the full-resolution
/// panorama, resizes it to the next resolution and asks again; any other
/// reply, or reaching `max_depth`, stops.
pub fn route(
    erp: &Image,
    task: &str,
    vlm: &dyn VisionLanguageModel,
    cfg: &RoutingConfig,
    sample_id: Option<&str>,
) -> Result<(RoutingState, RoutingResult)> {
    cfg.validate()?;
    erp.validate_erp(true)?;
    let grid = cfg.grid;
    let (fw, fh) = cfg.resolution(0);
    let mut frame = erp.resize(fw, fh);
    let mut to_erp = AffineMap::scale(erp.width as f64 / fw as f64, erp.height as f64 / fh as f64);
    let mut periodic = true;
    let mut depth = 0;
    let mut history = Vec::new();

    loop {
        let overlay = render_grid_overlay(&frame, &grid)?;
        let ext = RequestExt {
            sample_id: sample_id.map(str::to_string),
            grid: Some(GridExt {
                cols: grid.cols,
                rows: grid.rows,
                depth,
                frame_width: frame.width,
                frame_height: frame.height,
                periodic,
                frame_to_erp: to_erp,
                erp_width: erp.width,
                erp_height: erp.height,
            }),
            viewport: None,
        };
        let result = query(vlm, &overlay, task, cfg, &ext)?;
        let indices: Vec<i64> = result.grid_boxes.iter().map(|&i| i as i64).collect();
        let region = merge_cells(&indices, &grid, frame.width, frame.height, periodic, to_erp)?;
        history.push(RoutingStep {
            depth,
            frame_width: frame.width,
            frame_height: frame.height,
            frame_to_erp: to_erp,
            result: result.clone(),
            region,
        });

        if result.grid_boxes.len() >= 2 || !result.small || depth >= cfg.max_depth {
            let state = RoutingState {
                depth,
                image: frame,
                overlay,
                crop_region: region,
                task_text: task.to_string(),
                history,
            };
            return Ok((state, result));
        }

        let rect = region.erp_rect();
        let x0 = rect.x0.round() as i64;
        let y0 = (rect.y0.round().max(0.0) as usize).min(erp.height - 1);
        let cw = ((rect.x1.round() as i64 - x0).max(1) as usize).min(erp.width);
        let ch = ((rect.y1.round() as usize).min(erp.height).saturating_sub(y0)).max(1);
        let crop = erp.crop_wrapped(x0, y0, cw, ch)?;
        depth += 1;
        let (tw, th) = cfg.resolution(depth);
        frame = crop.resize(tw, th);
        to_erp = AffineMap {
            offset_x: x0 as f64,
            offset_y: y0 as f64,
            scale_x: cw as f64 / tw as f64,
            scale_y: ch as f64 / th as f64,
        };
        periodic = false;
    }
}
