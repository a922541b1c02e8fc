use std::path::Path;
use std::sync::Arc;

use pap_core::eval::*;
use pap_core::grounding::*;
use pap_core::raster::Image;
use pap_core::synthetic::{render_scene, write_dataset, SceneKind, SyntheticScene};
use pap_core::Error;

fn scenes() -> Vec<SyntheticScene> {
    let kinds = [SceneKind::Normal, SceneKind::SeamSplit, SceneKind::Tiny];
    (0..20)
        .map(|i| render_scene(&format!("ev_{i:02}"), kinds[i % 3], 1000, 500, 300 + i as u64))
        .collect()
}

fn dataset() -> (tempfile::TempDir, Vec<SyntheticScene>) {
    let dir = tempfile::tempdir().unwrap();
    let s = scenes();
    write_dataset(dir.path(), &s).unwrap();
    (dir, s)
}

fn oracle(dir: &Path, noise: NoiseConfig) -> Backends {
    Backends::uniform(Arc::new(OracleMock::from_dataset(dir, noise).unwrap()))
}

struct Down;

impl VisionLanguageModel for Down {
    fn id(&self) -> String {
        "down".into()
    }
    fn complete(&self, _: &Image, _: &str, _: &RequestExt) -> pap_core::Result<String> {
        Err(Error::Backend { status: 503, body: "down".into() })
    }
}

impl OpenVocabularyDetector for Down {
    fn id(&self) -> String {
        "down".into()
    }
    fn detect(&self, _: &Image, _: &str, _: &RequestExt) -> pap_core::Result<RawDetections> {
        Err(Error::Backend { status: 503, body: "down".into() })
    }
}

impl PromptableSegmenter for Down {
    fn id(&self) -> String {
        "down".into()
    }
    fn segment(&self, _: &Image, _: &Detection, _: &RequestExt) -> pap_core::Result<Image> {
        Err(Error::Backend { status: 503, body: "down".into() })
    }
}

#[test]
fn oracle_backends_score_near_perfect() {
    let (dir, _) = dataset();
    let r = evaluate_dataset(dir.path(), &oracle(dir.path(), NoiseConfig::default()), &PipelineConfig::default(), &EvalConfig::default())
        .unwrap();
    assert_eq!(r.overall.n, 20);
    assert!(r.per_sample.iter().all(|s| s.error.is_none()));
    assert!(r.overall.giou >= 0.95, "{:?}", r.overall);
    assert!(r.overall.ciou >= 0.95, "{:?}", r.overall);
    assert_eq!(r.overall.p50, 1.0);
}

#[test]
fn failing_backend_scores_zero_but_keeps_n() {
    let (dir, _) = dataset();
    let r = evaluate_dataset(dir.path(), &Backends::uniform(Arc::new(Down)), &PipelineConfig::default(), &EvalConfig::default())
        .unwrap();
    assert_eq!(r.overall.n, 20);
    assert_eq!((r.overall.giou, r.overall.ciou, r.overall.p50, r.overall.p50_95), (0.0, 0.0, 0.0, 0.0));
    for s in &r.per_sample {
        assert!(s.error.as_deref().unwrap().contains("503"), "{s:?}");
        assert_eq!(s.score.inter, 0);
        assert!(s.score.union > 0);
    }
}

#[test]
fn subset_filter_counts_match_labels() {
    let (dir, scenes) = dataset();
    let backends = oracle(dir.path(), NoiseConfig::default());
    let mut total = 0;
    for subset in [Subset::Hard, Subset::Normal] {
        let expected = scenes.iter().filter(|s| classify_difficulty(&s.mask) == subset).count();
        assert!(expected > 0);
        let cfg = EvalConfig {
            subset: Some(subset),
            ..Default::default()
        };
        let r = evaluate_dataset(dir.path(), &backends, &PipelineConfig::default(), &cfg).unwrap();
        assert_eq!(r.overall.n, expected, "{subset:?}");
        assert!(r.per_sample.iter().all(|s| s.subset == subset));
        assert_eq!(r.subsets.keys().collect::<Vec<_>>(), vec![&subset]);
        total += expected;
    }
    assert_eq!(total, scenes.len());
}

#[test]
fn grid_noise_lowers_giou() {
    let (dir, _) = dataset();
    let cfg = PipelineConfig::default();
    let clean = evaluate_dataset(dir.path(), &oracle(dir.path(), NoiseConfig::default()), &cfg, &EvalConfig::default()).unwrap();
    let noise = NoiseConfig {
        grid_p: 1.0,
        ..Default::default()
    };
    let noisy = evaluate_dataset(dir.path(), &oracle(dir.path(), noise), &cfg, &EvalConfig::default()).unwrap();
    assert!(noisy.overall.giou < clean.overall.giou, "{} vs {}", noisy.overall.giou, clean.overall.giou);
}

#[test]
fn results_do_not_depend_on_concurrency() {
    let (dir, _) = dataset();
    let backends = oracle(dir.path(), NoiseConfig::default());
    let run = |n| {
        let cfg = EvalConfig {
            concurrency: Some(n),
            ..Default::default()
        };
        evaluate_dataset(dir.path(), &backends, &PipelineConfig::default(), &cfg).unwrap()
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.overall, b.overall);
    let ids = |r: &MetricReport| r.per_sample.iter().map(|s| (s.id.clone(), s.score)).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
}

#[test]
fn report_files_are_written() {
    let (dir, _) = dataset();
    let r = evaluate_dataset(dir.path(), &oracle(dir.path(), NoiseConfig::default()), &PipelineConfig::default(), &EvalConfig::default())
        .unwrap();
    let out = tempfile::tempdir().unwrap();
    write_report(&r, out.path()).unwrap();

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["n"], 20);
    assert!(json["giou"].as_f64().unwrap() >= 0.95);
    assert!(json["subsets"]["hard"]["n"].as_u64().unwrap() > 0);
    assert_eq!(json["per_sample"].as_array().unwrap().len(), 20);

    let mut rd = csv::Reader::from_path(out.path().join(PER_SAMPLE_FILE)).unwrap();
    assert_eq!(rd.headers().unwrap().get(0), Some("id"));
    let rows: Vec<_> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(&rows[0][0], "ev_00");
}

#[test]
fn missing_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = evaluate_dataset(dir.path(), &Backends::uniform(Arc::new(Down)), &PipelineConfig::default(), &EvalConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Io(_) | Error::DatasetFormat { .. }), "{err}");
}
