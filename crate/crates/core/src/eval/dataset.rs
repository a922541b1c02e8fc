use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify_difficulty, Subset};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

/// One line of `annotations.jsonl`. Paths are relative to the dataset
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub id: String,
    pub image_path: String,
    pub question: String,
    pub object_name: String,
    pub mask_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Subset>,
}

fn bad(id: &str, reason: impl Into<String>) -> Error {
    Error::DatasetFormat {
        id: id.to_string(),
        reason: reason.into(),
    }
}

pub fn load_annotations(dir: &Path) -> Result<Vec<AnnotationRecord>> {
    let path = dir.join(ANNOTATIONS_FILE);
    let file = std::fs::File::open(&path).map_err(|e| bad("", format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| bad(&format!("line {}", lineno + 1), e.to_string()))?;
        if rec.id.is_empty() {
            return Err(bad(&format!("line {}", lineno + 1), "empty id"));
        }
        if rec.question.trim().is_empty() {
            return Err(bad(&rec.id, "empty question"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(bad(&rec.id, "duplicate id"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_annotations(dir: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(ANNOTATIONS_FILE))?);
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    Ok(())
}

/// Loads the panorama and ground-truth mask of a record.
pub fn load_sample(dir: &Path, rec: &AnnotationRecord) -> Result<(Image, BinaryMask)> {
    let mask = load_mask(dir, rec)?;
    let image = Image::load(&dir.join(&rec.image_path)).map_err(|e| bad(&rec.id, format!("image: {e}")))?;
    if image.dims() != mask.dims() {
        return Err(bad(
            &rec.id,
            format!("mask is {:?} but image is {:?}", mask.dims(), image.dims()),
        ));
    }
    Ok((image, mask))
}

/// Records of `dir` with `subset` recomputed from their masks.
pub fn split_dataset(dir: &Path) -> Result<Vec<AnnotationRecord>> {
    load_annotations(dir)?
        .into_par_iter()
        .map(|mut rec| {
            rec.subset = Some(classify_difficulty(&load_mask(dir, &rec)?));
            Ok(rec)
        })
        .collect()
}

pub(crate) fn load_mask(dir: &Path, rec: &AnnotationRecord) -> Result<BinaryMask> {
    BinaryMask::load_png(&dir.join(&rec.mask_path)).map_err(|e| bad(&rec.id, format!("mask: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, q: &str) -> AnnotationRecord {
        AnnotationRecord {
            id: id.into(),
            image_path: format!("{id}.png"),
            question: q.into(),
            object_name: "cup".into(),
            mask_path: format!("{id}_mask.png"),
            scene_category: None,
            subset: Some(Subset::Hard),
        }
    }

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![rec("a", "drink"), rec("b", "pour")];
        write_annotations(dir.path(), &recs).unwrap();
        assert_eq!(load_annotations(dir.path()).unwrap(), recs);

        write_annotations(dir.path(), &[rec("a", "x"), rec("a", "y")]).unwrap();
        assert!(matches!(load_annotations(dir.path()), Err(Error::DatasetFormat { id, .. }) if id == "a"));
        write_annotations(dir.path(), &[rec("q", " ")]).unwrap();
        assert!(matches!(load_annotations(dir.path()), Err(Error::DatasetFormat { id, .. }) if id == "q"));
        std::fs::write(dir.path().join(ANNOTATIONS_FILE), "{\"id\":\"z\"}\n").unwrap();
        assert!(matches!(load_annotations(dir.path()), Err(Error::DatasetFormat { .. })));
    }

    #[test]
    fn mismatched_mask_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec("a", "drink");
        Image::new(8, 4, 3).save_png(&dir.path().join(&r.image_path)).unwrap();
        BinaryMask::new(6, 3).save_png(&dir.path().join(&r.mask_path)).unwrap();
        let err = load_sample(dir.path(), &r).unwrap_err();
        assert!(matches!(err, Error::DatasetFormat { id, .. } if id == "a"));
    }

    #[test]
    fn split_relabels_from_masks() {
        let dir = tempfile::tempdir().unwrap();
        let masks = [
            ("blob", BinaryMask::from_fn(100, 50, |x, y| (40..60).contains(&x) && (20..30).contains(&y))),
            ("dot", BinaryMask::from_fn(100, 50, |x, y| x == 5 && y == 5)),
            ("seam", BinaryMask::from_fn(100, 50, |x, y| (x < 5 || x > 94) && (20..30).contains(&y))),
        ];
        let recs: Vec<_> = masks
            .iter()
            .map(|(id, m)| {
                let mut r = rec(id, "q");
                r.subset = None;
                m.save_png(&dir.path().join(&r.mask_path)).unwrap();
                r
            })
            .collect();
        write_annotations(dir.path(), &recs).unwrap();
        let got: Vec<_> = split_dataset(dir.path()).unwrap().into_iter().map(|r| (r.id, r.subset)).collect();
        assert_eq!(
            got,
            vec![
                ("blob".to_string(), Some(Subset::Normal)),
                ("dot".to_string(), Some(Subset::Hard)),
                ("seam".to_string(), Some(Subset::Hard)),
            ]
        );
    }
}
