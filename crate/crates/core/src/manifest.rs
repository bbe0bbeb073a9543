//! Subject manifests: the CSV index binding volume files to group and task labels.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Eu,
    Ds,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Eu => "EU",
            Group::Ds => "DS",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "EU" => Some(Group::Eu),
            "DS" => Some(Group::Ds),
            _ => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Alzheimer's-progression label; applies only to the DS group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdLabel {
    NoDet,
    ProdromalAd,
    Ad,
}

impl AdLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            AdLabel::NoDet => "no_det",
            AdLabel::ProdromalAd => "prodromal_ad",
            AdLabel::Ad => "ad",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "no_det" => Some(AdLabel::NoDet),
            "prodromal_ad" => Some(AdLabel::ProdromalAd),
            "ad" => Some(AdLabel::Ad),
            _ => None,
        }
    }
}

/// Intellectual-disability level; applies only to the DS group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdLabel {
    Mild,
    Moderate,
    Severe,
}

impl IdLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            IdLabel::Mild => "mild",
            IdLabel::Moderate => "moderate",
            IdLabel::Severe => "severe",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "mild" => Some(IdLabel::Mild),
            "moderate" => Some(IdLabel::Moderate),
            "severe" => Some(IdLabel::Severe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// As written in the CSV; relative paths resolve against the manifest directory.
    pub volume_path: String,
    pub group: Group,
    pub ad_label: Option<AdLabel>,
    pub id_label: Option<IdLabel>,
    pub source_dataset: String,
}

impl SubjectRecord {
    fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::Manifest("empty subject_id".into()));
        }
        if self.group == Group::Eu && (self.ad_label.is_some() || self.id_label.is_some()) {
            return Err(Error::Manifest(format!(
                "subject {}: EU records cannot carry ad_label/id_label",
                self.subject_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<SubjectRecord>,
    pub schema_version: u32,
    /// Directory against which relative volume paths resolve.
    pub root: PathBuf,
}

const HEADER: [&str; 6] = [
    "subject_id",
    "volume_path",
    "group",
    "ad_label",
    "id_label",
    "source_dataset",
];

impl Manifest {
    pub fn new(records: Vec<SubjectRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            records,
            schema_version: MANIFEST_SCHEMA_VERSION,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn volume_path(&self, record: &SubjectRecord) -> PathBuf {
        let p = Path::new(&record.volume_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn record(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.records.iter().find(|r| r.subject_id == subject_id)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate()?;
            if !seen.insert(r.subject_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate subject_id {}",
                    r.subject_id
                )));
            }
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<()> {
        for r in &self.records {
            let p = self.volume_path(r);
            if !p.exists() {
                return Err(Error::Manifest(format!(
                    "subject {}: volume file {} does not exist",
                    r.subject_id,
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

fn parse_opt<T>(raw: &str, parse: fn(&str) -> Option<T>, field: &str, row: usize) -> Result<Option<T>> {
    if raw.is_empty() {
        return Ok(None);
    }
    parse(raw).map(Some).ok_or_else(|| {
        Error::Manifest(format!("row {row}: unknown {field} value {raw:?}"))
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != HEADER {
        return Err(Error::Manifest(format!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            HEADER,
            got
        )));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Manifest(format!("row {}: {e}", i + 2)))?;
        if row.len() != HEADER.len() {
            return Err(Error::Manifest(format!(
                "row {}: expected {} fields, got {}",
                i + 2,
                HEADER.len(),
                row.len()
            )));
        }
        let line = i + 2;
        let group = Group::parse(&row[2])
            .ok_or_else(|| Error::Manifest(format!("row {line}: unknown group value {:?}", &row[2])))?;
        records.push(SubjectRecord {
            subject_id: row[0].to_string(),
            volume_path: row[1].to_string(),
            group,
            ad_label: parse_opt(&row[3], AdLabel::parse, "ad_label", line)?,
            id_label: parse_opt(&row[4], IdLabel::parse, "id_label", line)?,
            source_dataset: row[5].to_string(),
        });
    }

    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = Manifest::new(records, root)?;
    manifest.check_paths()?;
    Ok(manifest)
}

pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| {
        Error::Manifest(format!("{}: {e}", path.display()))
    })?;
    w.write_record(HEADER)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for r in &m.records {
        w.write_record([
            r.subject_id.as_str(),
            r.volume_path.as_str(),
            r.group.as_str(),
            r.ad_label.map_or("", AdLabel::as_str),
            r.id_label.map_or("", IdLabel::as_str),
            r.source_dataset.as_str(),
        ])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch_volumes(dir: &Path, names: &[&str]) {
        for n in names {
            let v = crate::volume::Volume::new(ndarray::Array3::zeros((2, 2, 2))).unwrap();
            crate::volume::save_volume(&v, dir.join(n)).unwrap();
        }
    }

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        let header = HEADER.join(",");
        fs::write(&p, format!("{header}\n{body}")).unwrap();
        p
    }

    #[test]
    fn well_formed_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        touch_volumes(dir.path(), &["a.vol", "b.vol", "c.vol"]);
        let p = write_manifest(
            dir.path(),
            "s1,a.vol,EU,,,synthetic\n\
             s2,b.vol,DS,no_det,mild,synthetic\n\
             s3,c.vol,DS,ad,severe,synthetic\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[0].group, Group::Eu);
        assert_eq!(m.records[1].ad_label, Some(AdLabel::NoDet));
        assert_eq!(m.records[2].id_label, Some(IdLabel::Severe));
        assert!(m.volume_path(&m.records[0]).exists());
    }

    #[test]
    fn duplicate_subject_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_volumes(dir.path(), &["a.vol"]);
        let p = write_manifest(dir.path(), "s1,a.vol,EU,,,x\ns1,a.vol,EU,,,x\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("duplicate subject_id"), "{err}");
    }

    #[test]
    fn eu_with_ds_only_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_volumes(dir.path(), &["a.vol"]);
        let p = write_manifest(dir.path(), "s1,a.vol,EU,ad,,x\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("EU records"), "{err}");
    }

    #[test]
    fn unknown_label_string_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_volumes(dir.path(), &["a.vol"]);
        let p = write_manifest(dir.path(), "s1,a.vol,DS,dementia,,x\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("unknown ad_label"), "{err}");
    }

    #[test]
    fn missing_volume_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), "s1,nope.vol,EU,,,x\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn manifest_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        touch_volumes(dir.path(), &["a.vol", "b.vol"]);
        let p = write_manifest(
            dir.path(),
            "s1,a.vol,EU,,,synthetic\ns2,b.vol,DS,prodromal_ad,moderate,synthetic\n",
        );
        let m = load_manifest(&p).unwrap();
        let p2 = dir.path().join("copy.csv");
        save_manifest(&m, &p2).unwrap();
        let m2 = load_manifest(&p2).unwrap();
        assert_eq!(m.records, m2.records);
    }
}
