//! Classification task definitions: which subjects participate and how
//! their manifest labels map onto class indices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{AdLabel, Group, IdLabel, SubjectRecord};

/// A downstream classification task over encoded latents.
///
/// Each task selects a subject subset and defines an integer class label;
/// subjects outside the subset (or with the relevant label missing) are
/// excluded from both training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Control group vs Down-syndrome group, over all subjects.
    EuVsDs,
    /// Within DS: no detectable AD vs any AD involvement (prodromal or established).
    AdBinary,
    /// Within DS: no AD / prodromal AD / established AD.
    #[serde(rename = "ad_3class")]
    Ad3Class,
    /// Within DS: mild ID vs moderate-or-severe ID.
    IdBinary,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::EuVsDs, Task::AdBinary, Task::Ad3Class, Task::IdBinary];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::EuVsDs => "eu_vs_ds",
            Task::AdBinary => "ad_binary",
            Task::Ad3Class => "ad_3class",
            Task::IdBinary => "id_binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "eu_vs_ds" => Ok(Task::EuVsDs),
            "ad_binary" => Ok(Task::AdBinary),
            "ad_3class" => Ok(Task::Ad3Class),
            "id_binary" => Ok(Task::IdBinary),
            other => Err(Error::Config(format!(
                "unknown task {other:?}; expected one of eu_vs_ds, ad_binary, ad_3class, id_binary"
            ))),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Ad3Class => 3,
            _ => 2,
        }
    }

    /// Class names indexed by label, for report headers.
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::EuVsDs => &["eu", "ds"],
            Task::AdBinary => &["no_ad", "any_ad"],
            Task::Ad3Class => &["no_ad", "prodromal_ad", "ad"],
            Task::IdBinary => &["mild_id", "moderate_severe_id"],
        }
    }

    /// Class index for a subject, or `None` if the subject is not part of
    /// this task (wrong group or missing label).
    pub fn label_for(self, record: &SubjectRecord) -> Option<usize> {
        match self {
            Task::EuVsDs => Some(match record.group {
                Group::Eu => 0,
                Group::Ds => 1,
            }),
            Task::AdBinary => match (record.group, record.ad_label) {
                (Group::Ds, Some(AdLabel::NoDet)) => Some(0),
                (Group::Ds, Some(AdLabel::ProdromalAd) | Some(AdLabel::Ad)) => Some(1),
                _ => None,
            },
            Task::Ad3Class => match (record.group, record.ad_label) {
                (Group::Ds, Some(AdLabel::NoDet)) => Some(0),
                (Group::Ds, Some(AdLabel::ProdromalAd)) => Some(1),
                (Group::Ds, Some(AdLabel::Ad)) => Some(2),
                _ => None,
            },
            Task::IdBinary => match (record.group, record.id_label) {
                (Group::Ds, Some(IdLabel::Mild)) => Some(0),
                (Group::Ds, Some(IdLabel::Moderate) | Some(IdLabel::Severe)) => Some(1),
                _ => None,
            },
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(
        id: &str,
        group: Group,
        ad: Option<AdLabel>,
        idl: Option<IdLabel>,
    ) -> SubjectRecord {
        SubjectRecord {
            subject_id: id.into(),
            volume_path: format!("{id}.raw"),
            group,
            ad_label: ad,
            id_label: idl,
            source_dataset: "test".into(),
        }
    }

    #[test]
    fn eu_vs_ds_covers_all_subjects() {
        let eu = rec("e0", Group::Eu, None, None);
        let ds = rec("d0", Group::Ds, Some(AdLabel::Ad), Some(IdLabel::Mild));
        assert_eq!(Task::EuVsDs.label_for(&eu), Some(0));
        assert_eq!(Task::EuVsDs.label_for(&ds), Some(1));
    }

    #[test]
    fn ad_binary_groups_any_ad_together_and_excludes_eu() {
        let t = Task::AdBinary;
        assert_eq!(t.label_for(&rec("a", Group::Ds, Some(AdLabel::NoDet), None)), Some(0));
        assert_eq!(t.label_for(&rec("b", Group::Ds, Some(AdLabel::ProdromalAd), None)), Some(1));
        assert_eq!(t.label_for(&rec("c", Group::Ds, Some(AdLabel::Ad), None)), Some(1));
        assert_eq!(t.label_for(&rec("d", Group::Eu, None, None)), None);
        assert_eq!(t.label_for(&rec("e", Group::Ds, None, Some(IdLabel::Mild))), None);
    }

    #[test]
    fn ad_3class_keeps_stages_distinct() {
        let t = Task::Ad3Class;
        assert_eq!(t.label_for(&rec("a", Group::Ds, Some(AdLabel::NoDet), None)), Some(0));
        assert_eq!(t.label_for(&rec("b", Group::Ds, Some(AdLabel::ProdromalAd), None)), Some(1));
        assert_eq!(t.label_for(&rec("c", Group::Ds, Some(AdLabel::Ad), None)), Some(2));
        assert_eq!(t.label_for(&rec("d", Group::Eu, None, None)), None);
        assert_eq!(t.n_classes(), 3);
    }

    #[test]
    fn id_binary_merges_moderate_and_severe() {
        let t = Task::IdBinary;
        assert_eq!(t.label_for(&rec("a", Group::Ds, None, Some(IdLabel::Mild))), Some(0));
        assert_eq!(t.label_for(&rec("b", Group::Ds, None, Some(IdLabel::Moderate))), Some(1));
        assert_eq!(t.label_for(&rec("c", Group::Ds, None, Some(IdLabel::Severe))), Some(1));
        assert_eq!(t.label_for(&rec("d", Group::Eu, None, None)), None);
        assert_eq!(t.label_for(&rec("e", Group::Ds, Some(AdLabel::Ad), None)), None);
    }

    #[test]
    fn names_round_trip() {
        for t in Task::ALL {
            assert_eq!(Task::parse(t.as_str()).unwrap(), t);
            assert_eq!(t.class_names().len(), t.n_classes());
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
            assert_eq!(serde_json::from_str::<Task>(&json).unwrap(), t);
        }
        assert!(Task::parse("bogus").is_err());
    }
}
