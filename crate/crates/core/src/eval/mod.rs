//! Metrics, Hard/Normal splitting and dataset evaluation.

mod dataset;
mod harness;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub use dataset::{load_annotations, load_sample, split_dataset, write_annotations, AnnotationRecord, ANNOTATIONS_FILE};
pub use harness::{evaluate_dataset, write_report, EvalConfig, SampleOutcome, PER_SAMPLE_FILE, REPORT_FILE};

/// IoU thresholds of the P@50:95 curve.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// `inter / union`, with two empty masks counting as a perfect match.
pub fn iou_from_counts(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = a.overlap(b)?;
    Ok(iou_from_counts(inter, union))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub inter: u64,
    pub union: u64,
    pub iou: f64,
}

impl SampleScore {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let (inter, union) = pred.overlap(gt)?;
        Ok(Self {
            inter,
            union,
            iou: iou_from_counts(inter, union),
        })
    }

    /// A sample whose pipeline failed: empty prediction, IoU 0.
    pub fn failed(gt_area: u64) -> Self {
        Self {
            inter: 0,
            union: gt_area,
            iou: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub giou: f64,
    pub ciou: f64,
    pub p50: f64,
    pub p50_95: f64,
}

/// Mean IoU, cumulative IoU and precision at IoU thresholds. A sample
/// passes threshold `t` when its IoU is strictly greater than `t`.
pub fn aggregate(scores: &[SampleScore]) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = scores.len() as f64;
    let giou = scores.iter().map(|s| s.iou).sum::<f64>() / n;
    let (inter, union) = scores.iter().fold((0u64, 0u64), |(i, u), s| (i + s.inter, u + s.union));
    let above = |t: f64| scores.iter().filter(|s| s.iou > t).count();
    let thresholds = iou_thresholds();
    let passes: usize = thresholds.iter().map(|&t| above(t)).sum();
    Ok(Metrics {
        n: scores.len(),
        giou,
        ciou: iou_from_counts(inter, union),
        p50: above(0.5) as f64 / n,
        p50_95: passes as f64 / (n * thresholds.len() as f64),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Hard,
    Normal,
}

impl Subset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subset::Hard => "hard",
            Subset::Normal => "normal",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Subset::Hard),
            "normal" => Ok(Subset::Normal),
            _ => Err(Error::Config(format!("unknown subset {s:?}, expected hard or normal"))),
        }
    }
}

pub const LARGE_AREA_FRACTION: f64 = 0.30;
pub const SMALL_AREA_FRACTION: f64 = 0.001;

/// Hard when the mask covers more than 30% or less than 0.1% of the
/// panorama, or is cut by the seam (set pixels in both edge columns).
pub fn classify_difficulty(mask: &BinaryMask) -> Subset {
    let frac = mask.area() as f64 / (mask.width * mask.height) as f64;
    let last = mask.width - 1;
    let seam = (0..mask.height).any(|y| mask.get(0, y)) && (0..mask.height).any(|y| mask.get(last, y));
    if frac > LARGE_AREA_FRACTION || frac < SMALL_AREA_FRACTION || seam {
        Subset::Hard
    } else {
        Subset::Normal
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub subsets: BTreeMap<Subset, Metrics>,
    pub per_sample: Vec<SampleOutcome>,
}

impl MetricReport {
    /// Aggregates overall and per subset; outcomes are sorted by id first.
    pub fn from_outcomes(mut outcomes: Vec<SampleOutcome>) -> Result<Self> {
        outcomes.sort_by(|a, b| a.id.cmp(&b.id));
        let scores: Vec<SampleScore> = outcomes.iter().map(|o| o.score).collect();
        let overall = aggregate(&scores)?;
        let mut subsets = BTreeMap::new();
        for s in [Subset::Hard, Subset::Normal] {
            let part: Vec<SampleScore> = outcomes.iter().filter(|o| o.subset == s).map(|o| o.score).collect();
            if !part.is_empty() {
                subsets.insert(s, aggregate(&part)?);
            }
        }
        Ok(Self {
            overall,
            subsets,
            per_sample: outcomes,
        })
    }
}
