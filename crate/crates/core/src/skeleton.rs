//! Core skeleton data model: joint sets, frames, sequences, joint maps and
//! class tables.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinect v2 ordering used by NTU RGB+D, spine base first and thumbs last.
const NTU25_NAMES: [&str; 25] = [
    "spine_base",
    "spine_mid",
    "neck",
    "head",
    "shoulder_left",
    "elbow_left",
    "wrist_left",
    "hand_left",
    "shoulder_right",
    "elbow_right",
    "wrist_right",
    "hand_right",
    "hip_left",
    "knee_left",
    "ankle_left",
    "foot_left",
    "hip_right",
    "knee_right",
    "ankle_right",
    "foot_right",
    "spine_shoulder",
    "hand_tip_left",
    "thumb_left",
    "hand_tip_right",
    "thumb_right",
];

/// Orbbec Astra body tracker ordering.
const TRACKER19_NAMES: [&str; 19] = [
    "head",
    "shoulder_spine",
    "shoulder_left",
    "elbow_left",
    "hand_left",
    "shoulder_right",
    "elbow_right",
    "hand_right",
    "mid_spine",
    "base_spine",
    "hip_left",
    "knee_left",
    "foot_left",
    "hip_right",
    "knee_right",
    "foot_right",
    "wrist_left",
    "wrist_right",
    "neck",
];

/// Joints both sources track reliably. Hands, feet and finger joints are gone.
const COMMON_NAMES: [&str; 15] = [
    "spine_base",
    "neck",
    "head",
    "shoulder_left",
    "elbow_left",
    "wrist_left",
    "shoulder_right",
    "elbow_right",
    "wrist_right",
    "hip_left",
    "knee_left",
    "ankle_left",
    "hip_right",
    "knee_right",
    "ankle_right",
];

/// Named, ordered joint layouts known to the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointSetId {
    #[serde(rename = "NTU25")]
    Ntu25,
    #[serde(rename = "TRACKER19")]
    Tracker19,
    #[serde(rename = "COMMON")]
    Common,
}

impl JointSetId {
    pub const ALL: [JointSetId; 3] = [JointSetId::Ntu25, JointSetId::Tracker19, JointSetId::Common];

    pub fn joint_names(self) -> &'static [&'static str] {
        match self {
            JointSetId::Ntu25 => &NTU25_NAMES,
            JointSetId::Tracker19 => &TRACKER19_NAMES,
            JointSetId::Common => &COMMON_NAMES,
        }
    }

    pub fn joint_count(self) -> usize {
        self.joint_names().len()
    }

    pub fn index_of(self, joint: &str) -> Option<usize> {
        self.joint_names().iter().position(|n| *n == joint)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointSetId::Ntu25 => "NTU25",
            JointSetId::Tracker19 => "TRACKER19",
            JointSetId::Common => "COMMON",
        }
    }
}

impl fmt::Display for JointSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointSetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JointSetId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown joint set `{s}`")))
    }
}

/// One timestamped body pose. Coordinates are meters in camera space.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonFrame {
    pub t: f64,
    pub joints: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl SkeletonFrame {
    pub fn new(t: f64, joints: Vec<[f64; 3]>, valid: Vec<bool>) -> Result<Self> {
        let frame = SkeletonFrame { t, joints, valid };
        frame.check(frame.joints.len())?;
        Ok(frame)
    }

    /// All joints valid.
    pub fn from_joints(t: f64, joints: Vec<[f64; 3]>) -> Self {
        let valid = vec![true; joints.len()];
        SkeletonFrame { t, joints, valid }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|v| *v)
    }

    fn check(&self, joint_count: usize) -> Result<()> {
        if self.joints.len() != joint_count {
            return Err(Error::Shape {
                what: "frame joints".into(),
                expected: joint_count,
                actual: self.joints.len(),
            });
        }
        if self.valid.len() != joint_count {
            return Err(Error::Shape {
                what: "frame validity flags".into(),
                expected: joint_count,
                actual: self.valid.len(),
            });
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::Data(format!("invalid frame timestamp {}", self.t)));
        }
        if self.joints.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite coordinate in frame at t={}",
                self.t
            )));
        }
        Ok(())
    }
}

/// Joint-major flat layout `[x0, y0, z0, x1, y1, z1, ...]`.
pub fn flatten(frame: &SkeletonFrame) -> Vec<f64> {
    frame.joints.iter().flatten().copied().collect()
}

/// An ordered run of frames for a single tracked body.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub joint_set: JointSetId,
    pub frames: Vec<SkeletonFrame>,
    pub fps: f64,
    pub label: Option<usize>,
    pub subject: Option<u32>,
    pub source: String,
    /// Scale factor applied by normalization, if any.
    pub scale: Option<f64>,
}

impl SkeletonSequence {
    pub fn new(joint_set: JointSetId, frames: Vec<SkeletonFrame>, fps: f64) -> Result<Self> {
        let seq = SkeletonSequence {
            joint_set,
            frames,
            fps,
            label: None,
            subject: None,
            source: String::new(),
            scale: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn with_subject(mut self, subject: Option<u32>) -> Self {
        self.subject = subject;
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_set.joint_count()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Data(format!("fps must be positive, got {}", self.fps)));
        }
        let j = self.joint_count();
        for frame in &self.frames {
            frame.check(j)?;
        }
        if self.frames.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Data("frame timestamps decrease".into()));
        }
        Ok(())
    }
}

/// Remapping from one joint set onto another. `None` marks a target joint
/// with no source counterpart.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointMap {
    pub source: JointSetId,
    pub target: JointSetId,
    pub mapping: Vec<Option<usize>>,
}

impl JointMap {
    pub fn new(source: JointSetId, target: JointSetId, mapping: Vec<Option<usize>>) -> Result<Self> {
        let map = JointMap {
            source,
            target,
            mapping,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn identity(set: JointSetId) -> Self {
        JointMap {
            source: set,
            target: set,
            mapping: (0..set.joint_count()).map(Some).collect(),
        }
    }

    /// Map every target joint to the source joint with the same name.
    pub fn by_name(source: JointSetId, target: JointSetId) -> Self {
        let mapping = target
            .joint_names()
            .iter()
            .map(|n| source.index_of(n))
            .collect();
        JointMap {
            source,
            target,
            mapping,
        }
    }

    /// Built-in map from `source` onto the common joint layout.
    pub fn builtin_to_common(source: JointSetId) -> Self {
        let json = match source {
            JointSetId::Ntu25 => include_str!("../assets/joint_maps/ntu25_to_common.json"),
            JointSetId::Tracker19 => include_str!("../assets/joint_maps/tracker19_to_common.json"),
            JointSetId::Common => return JointMap::identity(JointSetId::Common),
        };
        JointMap::from_json(json).expect("built-in joint map is valid")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: JointMap = serde_json::from_str(json)
            .map_err(|e| Error::Data(format!("joint map: {e}")))?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        JointMap::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mapping.len() != self.target.joint_count() {
            return Err(Error::Shape {
                what: format!("joint map {}→{}", self.source, self.target),
                expected: self.target.joint_count(),
                actual: self.mapping.len(),
            });
        }
        let n = self.source.joint_count();
        if let Some(bad) = self.mapping.iter().flatten().find(|&&i| i >= n) {
            return Err(Error::Data(format!(
                "joint map index {bad} out of range for {} ({n} joints)",
                self.source
            )));
        }
        Ok(())
    }

    /// `self` followed by `next`.
    pub fn compose(&self, next: &JointMap) -> Result<JointMap> {
        if self.target != next.source {
            return Err(Error::JointSetMismatch {
                expected: self.target.to_string(),
                actual: next.source.to_string(),
            });
        }
        let mapping = next
            .mapping
            .iter()
            .map(|m| m.and_then(|i| self.mapping[i]))
            .collect();
        Ok(JointMap {
            source: self.source,
            target: next.target,
            mapping,
        })
    }
}

/// Re-express `seq` in `map.target`'s joint layout.
pub fn remap(seq: &SkeletonSequence, map: &JointMap) -> Result<SkeletonSequence> {
    if seq.joint_set != map.source {
        return Err(Error::JointSetMismatch {
            expected: map.source.to_string(),
            actual: seq.joint_set.to_string(),
        });
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| remap_frame(f, map))
        .collect();
    Ok(SkeletonSequence {
        joint_set: map.target,
        frames,
        ..seq.clone()
    })
}

pub fn remap_frame(frame: &SkeletonFrame, map: &JointMap) -> SkeletonFrame {
    let (joints, valid) = map
        .mapping
        .iter()
        .map(|m| match m {
            Some(i) => (frame.joints[*i], frame.valid[*i]),
            None => ([0.0; 3], false),
        })
        .unzip();
    SkeletonFrame {
        t: frame.t,
        joints,
        valid,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub class_id: usize,
    pub name: String,
    #[serde(default)]
    pub source_dataset_id: Option<u32>,
}

/// Contiguous class ids with unique names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassEntry>", into = "Vec<ClassEntry>")]
pub struct ClassTable {
    entries: Vec<ClassEntry>,
}

impl TryFrom<Vec<ClassEntry>> for ClassTable {
    type Error = Error;

    fn try_from(entries: Vec<ClassEntry>) -> Result<Self> {
        ClassTable::new(entries)
    }
}

impl From<ClassTable> for Vec<ClassEntry> {
    fn from(table: ClassTable) -> Self {
        table.entries
    }
}

impl ClassTable {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        let mut names = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if e.class_id != i {
                return Err(Error::Data(format!(
                    "class ids must be contiguous from 0: entry {i} has id {}",
                    e.class_id
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::Data(format!("duplicate class name `{}`", e.name)));
            }
        }
        Ok(ClassTable { entries })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        ClassTable::new(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| ClassEntry {
                    class_id: i,
                    name: n.as_ref().to_string(),
                    source_dataset_id: None,
                })
                .collect(),
        )
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Data(format!("class table: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        ClassTable::from_json(&std::fs::read_to_string(path)?)
    }

    /// The eight motion archetypes produced by the synthetic generator.
    pub fn synthetic() -> Self {
        ClassTable::from_json(include_str!("../assets/classes/synthetic.json"))
            .expect("built-in class table is valid")
    }

    /// The nineteen classes of the hand-recorded test set, keyed to NTU action ids.
    pub fn recorded() -> Self {
        ClassTable::from_json(include_str!("../assets/classes/recorded.json"))
            .expect("built-in class table is valid")
    }

    /// All sixty NTU RGB+D actions; class id = action id − 1.
    pub fn ntu60() -> Self {
        ClassTable::from_json(include_str!("../assets/classes/ntu60.json"))
            .expect("built-in class table is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(|e| e.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Id of the class matching `entry`: by dataset id when both sides carry
    /// one, by name otherwise.
    pub fn lookup(&self, entry: &ClassEntry) -> Option<usize> {
        self.entries
            .iter()
            .find(|o| match (entry.source_dataset_id, o.source_dataset_id) {
                (Some(a), Some(b)) => a == b,
                _ => o.name == entry.name,
            })
            .map(|o| o.class_id)
    }

    /// For each class here, the id of the same class in `other`, matched by
    /// dataset id when both sides carry one and by name otherwise.
    pub fn map_onto(&self, other: &ClassTable) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.len());
        let mut missing = Vec::new();
        for e in &self.entries {
            match other.lookup(e) {
                Some(id) => out.push(id),
                None => missing.push(e.name.clone()),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::UnmappedClasses(missing))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unflatten(t: f64, flat: &[f64]) -> SkeletonFrame {
        SkeletonFrame::from_joints(t, flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    fn ntu_sequence(frames: usize) -> SkeletonSequence {
        let frames = (0..frames)
            .map(|f| {
                let joints = (0..25)
                    .map(|j| [j as f64, f as f64, (j * f) as f64 * 0.1])
                    .collect();
                SkeletonFrame::from_joints(f as f64 / 30.0, joints)
            })
            .collect();
        SkeletonSequence::new(JointSetId::Ntu25, frames, 30.0)
            .unwrap()
            .with_label(Some(3))
    }

    #[test]
    fn joint_sets_have_expected_sizes_and_unique_names() {
        assert_eq!(JointSetId::Ntu25.joint_count(), 25);
        assert_eq!(JointSetId::Tracker19.joint_count(), 19);
        assert_eq!(JointSetId::Common.joint_count(), 15);
        for id in JointSetId::ALL {
            let set: HashSet<_> = id.joint_names().iter().collect();
            assert_eq!(set.len(), id.joint_count(), "{id}");
            assert_eq!(id.as_str().parse::<JointSetId>().unwrap(), id);
        }
    }

    #[test]
    fn builtin_maps_resolve_by_name() {
        for src in [JointSetId::Ntu25, JointSetId::Tracker19] {
            let map = JointMap::builtin_to_common(src);
            assert_eq!(map.target, JointSetId::Common);
            assert!(map.mapping.iter().all(Option::is_some), "{src}");
        }
        assert_eq!(
            JointMap::builtin_to_common(JointSetId::Ntu25),
            JointMap::by_name(JointSetId::Ntu25, JointSetId::Common)
        );
    }

    #[test]
    fn ntu_to_common_drops_hand_joints() {
        let seq = ntu_sequence(4);
        let out = remap(&seq, &JointMap::builtin_to_common(JointSetId::Ntu25)).unwrap();
        assert_eq!(out.joint_set, JointSetId::Common);
        assert_eq!(out.frames[0].joints.len(), 15);
        let map = JointMap::builtin_to_common(JointSetId::Ntu25);
        for dropped in ["hand_left", "hand_tip_left", "thumb_left", "hand_right", "hand_tip_right", "thumb_right"] {
            let idx = JointSetId::Ntu25.index_of(dropped).unwrap();
            assert!(!map.mapping.contains(&Some(idx)), "{dropped} survived");
        }
        // x coordinate encodes the source joint index.
        let head = JointSetId::Common.index_of("head").unwrap();
        assert_eq!(out.frames[2].joints[head][0], 3.0);
        assert_eq!(out.len(), seq.len());
        assert_eq!(out.fps, seq.fps);
        assert_eq!(out.label, seq.label);
        let ts: Vec<_> = out.frames.iter().map(|f| f.t).collect();
        let ts0: Vec<_> = seq.frames.iter().map(|f| f.t).collect();
        assert_eq!(ts, ts0);
    }

    #[test]
    fn identity_map_is_exact() {
        let seq = ntu_sequence(5);
        let out = remap(&seq, &JointMap::identity(JointSetId::Ntu25)).unwrap();
        assert_eq!(out, seq);
    }

    #[test]
    fn all_missing_map_zeroes_and_invalidates() {
        let seq = ntu_sequence(2);
        let map = JointMap::new(JointSetId::Ntu25, JointSetId::Common, vec![None; 15]).unwrap();
        let out = remap(&seq, &map).unwrap();
        for f in &out.frames {
            assert!(f.joints.iter().all(|j| *j == [0.0; 3]));
            assert!(f.valid.iter().all(|v| !v));
        }
    }

    #[test]
    fn remap_rejects_wrong_source_set() {
        let seq = ntu_sequence(1);
        let err = remap(&seq, &JointMap::builtin_to_common(JointSetId::Tracker19)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("TRACKER19") && msg.contains("NTU25"), "{msg}");
    }

    #[test]
    fn map_validation() {
        assert!(JointMap::new(JointSetId::Tracker19, JointSetId::Common, vec![Some(0); 14]).is_err());
        assert!(JointMap::new(JointSetId::Tracker19, JointSetId::Common, vec![Some(19); 15]).is_err());
        let json = r#"{"source":"TRACKER19","target":"COMMON","mapping":[0,null,1,2,3,4,5,6,7,8,9,10,11,12,13]}"#;
        let map = JointMap::from_json(json).unwrap();
        assert_eq!(map.mapping[1], None);
    }

    #[test]
    fn composition_matches_sequential_remap() {
        let seq = ntu_sequence(3);
        let to_common = JointMap::builtin_to_common(JointSetId::Ntu25);
        let to_tracker = JointMap::by_name(JointSetId::Common, JointSetId::Tracker19);
        let two_step = remap(&remap(&seq, &to_common).unwrap(), &to_tracker).unwrap();
        let composed = remap(&seq, &to_common.compose(&to_tracker).unwrap()).unwrap();
        assert_eq!(two_step, composed);
        let id = JointMap::identity(JointSetId::Ntu25);
        assert_eq!(remap(&remap(&seq, &id).unwrap(), &id).unwrap(), seq);
    }

    #[test]
    fn flatten_layout() {
        let f = SkeletonFrame::from_joints(0.0, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(flatten(&f), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let zero = SkeletonFrame::from_joints(0.0, vec![[0.0; 3]; 19]);
        assert_eq!(flatten(&zero), vec![0.0; 57]);
        let common = SkeletonFrame::from_joints(0.0, vec![[0.5; 3]; JointSetId::Common.joint_count()]);
        assert_eq!(flatten(&common).len(), 45);
        let back = unflatten(0.0, &flatten(&f));
        assert_eq!(back, f);
    }

    #[test]
    fn sequence_invariants_enforced() {
        let f = |t| SkeletonFrame::from_joints(t, vec![[0.0; 3]; 15]);
        assert!(SkeletonSequence::new(JointSetId::Common, vec![f(0.1), f(0.0)], 30.0).is_err());
        assert!(SkeletonSequence::new(JointSetId::Common, vec![f(0.0)], 0.0).is_err());
        let short = SkeletonFrame::from_joints(0.0, vec![[0.0; 3]; 14]);
        assert!(SkeletonSequence::new(JointSetId::Common, vec![short], 30.0).is_err());
        let nan = SkeletonFrame::from_joints(0.0, vec![[f64::NAN, 0.0, 0.0]; 15]);
        assert!(SkeletonSequence::new(JointSetId::Common, vec![nan], 30.0).is_err());
    }

    #[test]
    fn class_tables() {
        let rec = ClassTable::recorded();
        assert_eq!(rec.len(), 19);
        let syn = ClassTable::synthetic();
        assert_eq!(syn.len(), 8);
        assert_eq!(ClassTable::ntu60().len(), 60);
        let ids = syn.map_onto(&rec).unwrap();
        assert_eq!(rec.name(ids[0]), syn.name(0));
        let ntu = syn.map_onto(&ClassTable::ntu60()).unwrap();
        assert_eq!(ClassTable::ntu60().name(ntu[syn.id_of("wave_hand").unwrap()]), Some("hand_waving"));
        let odd = ClassTable::from_names(&["wave_hand", "juggle"]).unwrap();
        match odd.map_onto(&rec) {
            Err(Error::UnmappedClasses(v)) => assert_eq!(v, vec!["juggle".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(ClassTable::from_names(&["a", "a"]).is_err());
        assert!(ClassTable::from_json(r#"[{"class_id":1,"name":"a"}]"#).is_err());
    }
}
