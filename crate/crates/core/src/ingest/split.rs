//! Train/test partitioning.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitProtocol {
    CrossSubject,
    Custom,
}

/// Indices into the sequence list a split was computed from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub protocol: SplitProtocol,
}

/// Training performers of a cross-subject protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectProtocol {
    pub protocol: SplitProtocol,
    pub train_subjects: BTreeSet<u32>,
}

impl SubjectProtocol {
    /// The published NTU RGB+D cross-subject training performers.
    pub fn ntu_cross_subject() -> Self {
        serde_json::from_str(include_str!("../../assets/ntu_cross_subject.json"))
            .expect("built-in protocol is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// A sequence goes to train iff its performer is in `train_subjects`.
pub fn cross_subject_split(
    sequences: &[SkeletonSequence],
    train_subjects: &BTreeSet<u32>,
) -> Result<DatasetSplit> {
    let missing: Vec<String> = sequences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.subject.is_none())
        .map(|(i, s)| {
            if s.source.is_empty() {
                format!("#{i}")
            } else {
                s.source.clone()
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSubject(missing));
    }
    let (train, test) = (0..sequences.len())
        .partition(|&i| train_subjects.contains(&sequences[i].subject.unwrap_or_default()));
    Ok(DatasetSplit {
        train,
        test,
        protocol: SplitProtocol::CrossSubject,
    })
}

/// Explicit list of training indices; everything else is test.
pub fn custom_split(count: usize, train: &[usize]) -> Result<DatasetSplit> {
    let mut seen = HashSet::new();
    for &i in train {
        if i >= count {
            return Err(Error::Data(format!("split index {i} out of range ({count} sequences)")));
        }
        if !seen.insert(i) {
            return Err(Error::Data(format!("split index {i} listed twice")));
        }
    }
    Ok(DatasetSplit {
        train: train.to_vec(),
        test: (0..count).filter(|i| !seen.contains(i)).collect(),
        protocol: SplitProtocol::Custom,
    })
}
