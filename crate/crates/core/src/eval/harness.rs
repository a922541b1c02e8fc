use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::load_mask;
use super::{classify_difficulty, load_annotations, load_sample, MetricReport, SampleScore, Subset};
use crate::error::{Error, Result};
use crate::grounding::{run_pipeline, Backends, PipelineConfig, StageTimings};

pub const REPORT_FILE: &str = "report.json";
pub const PER_SAMPLE_FILE: &str = "per_sample.csv";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Pipelines run at once; defaults to the CPU count.
    pub concurrency: Option<usize>,
    /// Only evaluate records of this subset.
    pub subset: Option<Subset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub subset: Subset,
    #[serde(flatten)]
    pub score: SampleScore,
    /// Routing depth reached, when routing succeeded.
    pub depth: Option<usize>,
    /// Failing stage and error, if the pipeline failed.
    pub error: Option<String>,
    pub timings: StageTimings,
}

/// Runs the pipeline on every record of `dataset_dir` and aggregates.
///
/// Failed samples count with IoU 0. Dataset problems abort the evaluation.
pub fn evaluate_dataset(
    dataset_dir: &Path,
    backends: &Backends,
    pipeline: &PipelineConfig,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    pipeline.validate()?;
    let records = load_annotations(dataset_dir)?;
    let threads = cfg
        .concurrency
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} workers: {e}")))?;

    let outcomes: Vec<Option<SampleOutcome>> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| -> Result<Option<SampleOutcome>> {
                let gt = load_mask(dataset_dir, rec)?;
                let subset = rec.subset.unwrap_or_else(|| classify_difficulty(&gt));
                if cfg.subset.is_some_and(|s| s != subset) {
                    return Ok(None);
                }
                let (image, gt) = load_sample(dataset_dir, rec)?;
                let outcome = match run_pipeline(&image, &rec.question, backends, pipeline, Some(&rec.id)) {
                    Ok(r) => SampleOutcome {
                        id: rec.id.clone(),
                        subset,
                        score: SampleScore::from_masks(&r.mask_erp, &gt)?,
                        depth: Some(r.depth),
                        error: None,
                        timings: r.timings,
                    },
                    Err(e) => {
                        log::warn!("{}: {e}", rec.id);
                        SampleOutcome {
                            id: rec.id.clone(),
                            subset,
                            score: SampleScore::failed(gt.area() as u64),
                            depth: e.partial.routing_history.last().map(|s| s.depth),
                            error: Some(e.to_string()),
                            timings: e.partial.timings,
                        }
                    }
                };
                Ok(Some(outcome))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    MetricReport::from_outcomes(outcomes.into_iter().flatten().collect())
}

/// Writes `report.json` and `per_sample.csv` into `dir`.
pub fn write_report(report: &MetricReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join(REPORT_FILE), json + "\n")?;
    let mut w = csv::Writer::from_path(dir.join(PER_SAMPLE_FILE)).map_err(csv_err)?;
    w.write_record([
        "id",
        "subset",
        "iou",
        "inter",
        "union",
        "depth",
        "error",
        "route_ms",
        "gaze_ms",
        "detect_ms",
        "segment_ms",
        "reproject_ms",
    ])
    .map_err(csv_err)?;
    for s in &report.per_sample {
        let t = &s.timings;
        w.write_record([
            s.id.clone(),
            s.subset.as_str().to_string(),
            format!("{:.6}", s.score.iou),
            s.score.inter.to_string(),
            s.score.union.to_string(),
            s.depth.map(|d| d.to_string()).unwrap_or_default(),
            s.error.clone().unwrap_or_default(),
            format!("{:.3}", t.route_ms),
            format!("{:.3}", t.gaze_ms),
            format!("{:.3}", t.detect_ms),
            format!("{:.3}", t.segment_ms),
            format!("{:.3}", t.reproject_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
