use super::{DataError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Patient-level diagnosis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathology {
    Benign,
    Malignant,
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pathology::Benign => f.write_str("benign"),
            Pathology::Malignant => f.write_str("malignant"),
        }
    }
}

impl FromStr for Pathology {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(Pathology::Benign),
            "malignant" => Ok(Pathology::Malignant),
            other => Err(DataError::Parse(format!("unknown pathology {other:?}"))),
        }
    }
}

/// One ultrasound frame. Frames without a mask path are unannotated
/// background frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub patient_id: String,
    pub frame_id: String,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub pathology: Pathology,
}

impl FrameRecord {
    pub fn is_annotated(&self) -> bool {
        self.mask_path.is_some()
    }
}

/// A validated frame collection indexed by patient.
///
/// Records are held in (patient_id, frame_id) order regardless of input
/// order, so two manifests with the same content compare and serialize
/// identically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<FrameRecord>,
    by_patient: BTreeMap<String, Vec<usize>>,
}

impl DatasetManifest {
    pub fn from_records(mut records: Vec<FrameRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(DataError::Consistency("manifest contains no frames".into()));
        }
        records.sort_by(|a, b| {
            (a.patient_id.as_str(), a.frame_id.as_str())
                .cmp(&(b.patient_id.as_str(), b.frame_id.as_str()))
        });
        let mut by_patient: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.patient_id.is_empty() || rec.frame_id.is_empty() {
                return Err(DataError::Consistency(
                    "patient and frame identifiers must be non-empty".into(),
                ));
            }
            by_patient.entry(rec.patient_id.clone()).or_default().push(i);
        }
        for (patient, idxs) in &by_patient {
            for pair in idxs.windows(2) {
                let (a, b) = (&records[pair[0]], &records[pair[1]]);
                if a.frame_id == b.frame_id {
                    return Err(DataError::Consistency(format!(
                        "duplicate frame {}/{}",
                        patient, a.frame_id
                    )));
                }
            }
            let pathology = records[idxs[0]].pathology;
            if idxs.iter().any(|&i| records[i].pathology != pathology) {
                return Err(DataError::Consistency(format!(
                    "patient {patient} has conflicting pathology labels"
                )));
            }
        }
        Ok(Self { records, by_patient })
    }

    pub fn records(&self) -> &[FrameRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Patient identifiers in lexicographic order.
    pub fn patients(&self) -> Vec<&str> {
        self.by_patient.keys().map(String::as_str).collect()
    }

    pub fn num_patients(&self) -> usize {
        self.by_patient.len()
    }

    pub fn frames_of(&self, patient: &str) -> Option<Vec<&FrameRecord>> {
        self.by_patient.get(patient).map(|idxs| idxs.iter().map(|&i| &self.records[i]).collect())
    }

    pub fn pathology_of(&self, patient: &str) -> Option<Pathology> {
        self.by_patient.get(patient).map(|idxs| self.records[idxs[0]].pathology)
    }

    pub fn num_annotated(&self) -> usize {
        self.records.iter().filter(|r| r.is_annotated()).count()
    }

    /// Sub-manifest restricted to the given patients. Unknown patient ids
    /// are a consistency error.
    pub fn subset(&self, patients: &[String]) -> Result<DatasetManifest> {
        let mut records = Vec::new();
        for p in patients {
            let idxs = self
                .by_patient
                .get(p)
                .ok_or_else(|| DataError::Consistency(format!("unknown patient {p}")))?;
            records.extend(idxs.iter().map(|&i| self.records[i].clone()));
        }
        DatasetManifest::from_records(records)
    }
}

/// Markers accepted in the TSV mask column for "no mask". The first is what
/// the writer emits; the second is the typographic minus that some exports
/// use.
const NO_MASK_MARKERS: [&str; 2] = ["-", "\u{2212}"];

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_tsv(text: &str, base: &Path) -> Result<Vec<FrameRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(DataError::Parse(format!(
                "line {}: expected 5 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mask_path = if NO_MASK_MARKERS.contains(&fields[3]) {
            None
        } else {
            Some(resolve(base, fields[3]))
        };
        records.push(FrameRecord {
            patient_id: fields[0].to_string(),
            frame_id: fields[1].to_string(),
            image_path: resolve(base, fields[2]),
            mask_path,
            pathology: fields[4]
                .parse()
                .map_err(|e| DataError::Parse(format!("line {}: {e}", lineno + 1)))?,
        });
    }
    Ok(records)
}

fn check_paths(manifest: &DatasetManifest) -> Result<()> {
    for rec in manifest.records() {
        if !rec.image_path.is_file() {
            return Err(DataError::MissingFile(rec.image_path.display().to_string()));
        }
        if let Some(mask) = &rec.mask_path {
            if !mask.is_file() {
                return Err(DataError::MissingFile(mask.display().to_string()));
            }
        }
    }
    Ok(())
}

/// Load a manifest from a `.tsv` or `.json` file. Relative frame paths are
/// resolved against the manifest's directory, and every referenced file must
/// exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path.display().to_string())
        } else {
            DataError::Io(e)
        }
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let records = if path.extension().is_some_and(|e| e == "json") {
        let raw: Vec<FrameRecord> =
            serde_json::from_str(&text).map_err(|e| DataError::Parse(e.to_string()))?;
        raw.into_iter()
            .map(|mut r| {
                r.image_path = resolve(&base, &r.image_path.to_string_lossy());
                r.mask_path = r.mask_path.map(|m| resolve(&base, &m.to_string_lossy()));
                r
            })
            .collect()
    } else {
        parse_tsv(&text, &base)?
    };
    let manifest = DatasetManifest::from_records(records)?;
    check_paths(&manifest)?;
    Ok(manifest)
}

/// Write a manifest as TSV. Paths are written as stored; unannotated frames
/// get a `-` mask column.
pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    for rec in manifest.records() {
        let mask =
            rec.mask_path.as_ref().map_or_else(|| "-".to_string(), |m| m.display().to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            rec.patient_id,
            rec.frame_id,
            rec.image_path.display(),
            mask,
            rec.pathology
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn rec(patient: &str, frame: &str, pathology: Pathology, annotated: bool) -> FrameRecord {
        FrameRecord {
            patient_id: patient.to_string(),
            frame_id: frame.to_string(),
            image_path: PathBuf::from(format!("{patient}_{frame}.pgm")),
            mask_path: annotated.then(|| PathBuf::from(format!("{patient}_{frame}_m.pgm"))),
            pathology,
        }
    }

    #[test]
    fn duplicate_frames_rejected() {
        let records = vec![
            rec("p1", "f1", Pathology::Benign, true),
            rec("p1", "f1", Pathology::Benign, false),
        ];
        assert!(matches!(DatasetManifest::from_records(records), Err(DataError::Consistency(_))));
    }

    #[test]
    fn mixed_pathology_rejected() {
        let records = vec![
            rec("p1", "f1", Pathology::Benign, true),
            rec("p1", "f2", Pathology::Malignant, true),
        ];
        assert!(matches!(DatasetManifest::from_records(records), Err(DataError::Consistency(_))));
    }

    #[test]
    fn records_are_canonically_ordered() {
        let a = DatasetManifest::from_records(vec![
            rec("p2", "f1", Pathology::Benign, true),
            rec("p1", "f2", Pathology::Malignant, true),
            rec("p1", "f1", Pathology::Malignant, false),
        ])
        .unwrap();
        let ids: Vec<_> =
            a.records().iter().map(|r| (r.patient_id.as_str(), r.frame_id.as_str())).collect();
        assert_eq!(ids, vec![("p1", "f1"), ("p1", "f2"), ("p2", "f1")]);
        assert_eq!(a.patients(), vec!["p1", "p2"]);
    }

    #[test]
    fn tsv_round_trip_with_relative_paths() {
        let dir = tempdir().unwrap();
        crate::data::pgm::save_image_u8(&dir.path().join("img.pgm"), 1, 1, &[0]).unwrap();
        crate::data::pgm::save_mask(
            &dir.path().join("msk.pgm"),
            &crate::data::BinaryMask::zeros(1, 1),
        )
        .unwrap();
        let tsv = "p1\tf1\timg.pgm\tmsk.pgm\tbenign\np1\tf2\timg.pgm\t-\tbenign\n";
        let path = dir.path().join("frames.tsv");
        fs::write(&path, tsv).unwrap();
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.len(), 2);
        assert_eq!(manifest.num_annotated(), 1);
        assert!(
            manifest.records()[0].image_path.is_absolute()
                || manifest.records()[0].image_path.starts_with(dir.path())
        );

        let out = dir.path().join("again.tsv");
        save_manifest(&out, &manifest).unwrap();
        let reloaded = load_manifest(&out).unwrap();
        assert_eq!(reloaded, manifest);
    }

    #[test]
    fn unicode_minus_marks_unannotated() {
        let dir = tempdir().unwrap();
        crate::data::pgm::save_image_u8(&dir.path().join("img.pgm"), 1, 1, &[0]).unwrap();
        let tsv = "p1\tf1\timg.pgm\t\u{2212}\tmalignant\n";
        let path = dir.path().join("frames.tsv");
        fs::write(&path, tsv).unwrap();
        let manifest = load_manifest(&path).unwrap();
        assert!(manifest.records()[0].mask_path.is_none());
    }

    #[test]
    fn json_manifest_loads() {
        let dir = tempdir().unwrap();
        crate::data::pgm::save_image_u8(&dir.path().join("img.pgm"), 1, 1, &[0]).unwrap();
        let json = r#"[
            {"patient_id": "p1", "frame_id": "f1", "image_path": "img.pgm", "pathology": "benign"}
        ]"#;
        let path = dir.path().join("frames.json");
        fs::write(&path, json).unwrap();
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.len(), 1);
        assert!(!manifest.records()[0].is_annotated());
    }

    #[test]
    fn missing_referenced_file_fails() {
        let dir = tempdir().unwrap();
        let tsv = "p1\tf1\tnope.pgm\t-\tbenign\n";
        let path = dir.path().join("frames.tsv");
        fs::write(&path, tsv).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn subset_keeps_only_requested_patients() {
        let manifest = DatasetManifest::from_records(vec![
            rec("p1", "f1", Pathology::Benign, true),
            rec("p2", "f1", Pathology::Malignant, true),
            rec("p3", "f1", Pathology::Benign, false),
        ])
        .unwrap();
        let sub = manifest.subset(&["p1".into(), "p3".into()]).unwrap();
        assert_eq!(sub.patients(), vec!["p1", "p3"]);
        assert!(manifest.subset(&["p9".into()]).is_err());
    }
}
