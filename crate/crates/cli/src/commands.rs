use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use pap_core::config::{BackendsSection, Config};
use pap_core::eval::{self, EvalConfig};
use pap_core::geometry::{
    extract_viewport, frustum_boundary, spherical_from_erp_pixel, ErpDims, SphericalCoord, ViewportSpec,
};
use pap_core::grid::{render_grid_overlay, GridSpec};
use pap_core::grounding::{self, run_pipeline, NoiseConfig, PipelineResult, ViewExt, AUTH_TOKEN_ENV};
use pap_core::raster::Image;
use pap_core::synthetic;
use serde_json::json;

use crate::*;

const FOOTPRINT_SAMPLES_PER_EDGE: usize = 32;

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn load_image(path: &Path) -> Result<Image> {
    if !path.is_file() {
        return Err(UsageError(format!("image not found: {}", path.display())).into());
    }
    Image::load(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

fn deg(s: SphericalCoord) -> [f64; 2] {
    [s.lon_rad.to_degrees(), s.lat_rad.to_degrees()]
}

/// Outline of the view on the sphere as `[lon, lat]` degrees. Crops past the
/// seam keep increasing in longitude.
fn footprint(view: &ViewExt) -> Vec<[f64; 2]> {
    match *view {
        ViewExt::Perspective { spec, .. } => frustum_boundary(&spec, FOOTPRINT_SAMPLES_PER_EDGE).into_iter().map(deg).collect(),
        ViewExt::ErpCrop {
            x0,
            y0,
            width,
            height,
            erp_width,
            erp_height,
        } => {
            let dims = ErpDims::new(erp_width, erp_height);
            let (x1, y1) = (x0 as f64 + width as f64, (y0 + height) as f64);
            [(x0 as f64, y0 as f64), (x1, y0 as f64), (x1, y1), (x0 as f64, y1)]
                .into_iter()
                .map(|(u, v)| deg(spherical_from_erp_pixel(u, v, dims)))
                .collect()
        }
    }
}

fn write_debug(dir: &Path, r: &PipelineResult) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    r.overlay.save_png(&dir.join("overlay.png"))?;
    r.view_image.save_png(&dir.join("viewport.png"))?;
    r.mask_persp.save_png(&dir.join("mask_persp.png"))?;
    write_json(
        &dir.join("spec.json"),
        &json!({
            "view": r.view,
            "footprint_lon_lat_deg": footprint(&r.view),
            "query": r.query,
            "detection": r.detection,
        }),
    )?;
    write_json(
        &dir.join("routing.json"),
        &json!({
            "depth": r.depth,
            "result": r.routing,
            "region": r.region,
            "history": r.routing_history,
            "backends": r.backend_ids,
        }),
    )
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let erp = load_image(&a.image)?;
    let backends = cfg.backends.build()?;
    let sample_id = a
        .sample_id
        .or_else(|| a.image.file_stem().map(|s| s.to_string_lossy().into_owned()));
    let r = run_pipeline(&erp, &a.task, &backends, &cfg.pipeline(), sample_id.as_deref())?;
    create_parent(&a.out)?;
    r.mask_erp.save_png(&a.out)?;
    if let Some(dir) = &a.debug_dir {
        write_debug(dir, &r)?;
    }
    let summary = json!({
        "mask": a.out,
        "depth": r.depth,
        "grid_boxes": r.routing.grid_boxes,
        "object_name": r.routing.object_name,
        "object_part": r.routing.object_part,
        "query": r.query,
        "mask_area_px": r.mask_erp.area(),
        "timings_ms": r.timings,
    });
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.oracle {
        cfg.backends = BackendsSection::oracle(&a.dataset);
    }
    let eval_cfg = EvalConfig {
        concurrency: a.concurrency.or(cfg.eval.concurrency),
        subset: a.subset.or(cfg.eval.subset),
    };
    if eval_cfg.concurrency == Some(0) {
        return Err(UsageError("--concurrency must be at least 1".into()).into());
    }
    let records = eval::load_annotations(&a.dataset)?;
    if records.is_empty() {
        return Err(UsageError(format!("dataset {} has no records", a.dataset.display())).into());
    }
    let backends = cfg.backends.build()?;
    let report = eval::evaluate_dataset(&a.dataset, &backends, &cfg.pipeline(), &eval_cfg)?;
    eval::write_report(&report, &a.report)?;
    let failed = report.per_sample.iter().filter(|s| s.error.is_some()).count();
    println!(
        "{}",
        serde_json::to_string(&json!({
            "overall": report.overall,
            "subsets": report.subsets,
            "failed": failed,
            "report": a.report,
        }))?
    );
    Ok(())
}

pub fn viewport(a: ViewportArgs) -> Result<()> {
    let erp = load_image(&a.image)?;
    let spec = ViewportSpec::new(a.yaw, a.pitch, a.fov, a.width, a.height)?;
    let view = extract_viewport(&erp, &spec)?;
    create_parent(&a.out)?;
    view.save_png(&a.out)?;
    Ok(())
}

pub fn grid(a: GridArgs) -> Result<()> {
    let img = load_image(&a.image)?;
    let spec = GridSpec {
        cols: a.cols,
        rows: a.rows,
        line_width_px: a.line_width,
        font_size_px: a.font_size,
    };
    let out = render_grid_overlay(&img, &spec)?;
    create_parent(&a.out)?;
    out.save_png(&a.out)?;
    Ok(())
}

pub fn split(a: SplitArgs) -> Result<()> {
    let mut records = eval::split_dataset(&a.dataset)?;
    if records.is_empty() {
        return Err(UsageError(format!("dataset {} has no records", a.dataset.display())).into());
    }
    let base = fs::canonicalize(&a.dataset).with_context(|| format!("cannot resolve {}", a.dataset.display()))?;
    for r in &mut records {
        r.image_path = base.join(&r.image_path).to_string_lossy().into_owned();
        r.mask_path = base.join(&r.mask_path).to_string_lossy().into_owned();
    }
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    eval::write_annotations(&a.out, &records)?;
    let ids = |s: eval::Subset| {
        records
            .iter()
            .filter(|r| r.subset == Some(s))
            .map(|r| r.id.as_str())
            .collect::<Vec<_>>()
    };
    let (hard, normal) = (ids(eval::Subset::Hard), ids(eval::Subset::Normal));
    println!("hard {} normal {}", hard.len(), normal.len());
    write_json(&a.out.join("split.json"), &json!({ "hard": hard, "normal": normal }))
}

pub fn mock_serve(a: MockServeArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.noise_p) || !(a.jitter >= 0.0) {
        return Err(UsageError("--noise-p must be in [0, 1] and --jitter non-negative".into()).into());
    }
    let noise = NoiseConfig {
        grid_p: a.noise_p,
        jitter_px: a.jitter,
        seed: a.seed,
    };
    let token = std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty());
    grounding::mock_serve(&a.dataset, noise, a.port, token)?;
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.count == 0 {
        return Err(UsageError("--count must be at least 1".into()).into());
    }
    let scenes = synthetic::standard_scenes(a.count, a.seed);
    synthetic::write_dataset(&a.out, &scenes)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}
