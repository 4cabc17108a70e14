//! Deterministic skeleton normalization: per-frame centering, per-sequence
//! torso-length scaling and a yaw rotation that aligns the shoulder line with
//! the x axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{JointSetId, SkeletonSequence};

const MIN_TORSO: f64 = 1e-6;
const MIN_SHOULDER_SPAN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RotationReference {
    FirstValidFrame,
    PerFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub enabled: bool,
    pub reference_torso_length: f64,
    pub rotation_reference: RotationReference,
    pub center_joint: String,
    pub left_shoulder: String,
    pub right_shoulder: String,
    pub torso_top: String,
    pub torso_bottom: String,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            enabled: true,
            reference_torso_length: 1.0,
            rotation_reference: RotationReference::FirstValidFrame,
            center_joint: "spine_base".into(),
            left_shoulder: "shoulder_left".into(),
            right_shoulder: "shoulder_right".into(),
            torso_top: "neck".into(),
            torso_bottom: "spine_base".into(),
        }
    }
}

/// Joint indices a config resolves to within one joint set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormalizationJoints {
    pub center: usize,
    pub left_shoulder: usize,
    pub right_shoulder: usize,
    pub torso_top: usize,
    pub torso_bottom: usize,
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reference_torso_length.is_finite() && self.reference_torso_length > 0.0) {
            return Err(Error::config(
                "normalization.reference_torso_length",
                "must be > 0",
            ));
        }
        Ok(())
    }

    pub fn resolve(&self, set: JointSetId) -> Result<NormalizationJoints> {
        let find = |key: &str, name: &str| {
            set.index_of(name).ok_or_else(|| {
                Error::config(
                    format!("normalization.{key}"),
                    format!("joint `{name}` not in {set}"),
                )
            })
        };
        Ok(NormalizationJoints {
            center: find("center_joint", &self.center_joint)?,
            left_shoulder: find("left_shoulder", &self.left_shoulder)?,
            right_shoulder: find("right_shoulder", &self.right_shoulder)?,
            torso_top: find("torso_top", &self.torso_top)?,
            torso_bottom: find("torso_bottom", &self.torso_bottom)?,
        })
    }
}

fn for_valid_joints(seq: &mut SkeletonSequence, mut f: impl FnMut(usize, &mut [f64; 3])) {
    for (i, frame) in seq.frames.iter_mut().enumerate() {
        for (p, v) in frame.joints.iter_mut().zip(&frame.valid) {
            if *v {
                f(i, p);
            }
        }
    }
}

/// Translate each frame so the center joint sits at the origin. Frames where
/// the center joint is missing reuse the nearest earlier (or first) valid center.
pub fn center(seq: &SkeletonSequence, cfg: &NormalizationConfig) -> Result<SkeletonSequence> {
    let joint = cfg.resolve(seq.joint_set)?.center;
    let first = seq
        .frames
        .iter()
        .find(|f| f.valid[joint])
        .map(|f| f.joints[joint])
        .ok_or_else(|| Error::Degenerate(format!("center joint `{}` never valid", cfg.center_joint)))?;
    let mut current = first;
    let offsets: Vec<[f64; 3]> = seq
        .frames
        .iter()
        .map(|f| {
            if f.valid[joint] {
                current = f.joints[joint];
            }
            current
        })
        .collect();
    let mut out = seq.clone();
    for_valid_joints(&mut out, |i, p| {
        for k in 0..3 {
            p[k] -= offsets[i][k];
        }
    });
    Ok(out)
}

/// Mean distance between the torso joints over frames where both are valid.
pub fn mean_torso_length(seq: &SkeletonSequence, joints: &NormalizationJoints) -> Option<f64> {
    let lengths: Vec<f64> = seq
        .frames
        .iter()
        .filter(|f| f.valid[joints.torso_top] && f.valid[joints.torso_bottom])
        .map(|f| distance(&f.joints[joints.torso_top], &f.joints[joints.torso_bottom]))
        .collect();
    if lengths.is_empty() {
        None
    } else {
        Some(lengths.iter().sum::<f64>() / lengths.len() as f64)
    }
}

/// Multiply all coordinates so the mean torso length equals the reference.
/// The factor is recorded in `scale`.
pub fn scale(seq: &SkeletonSequence, cfg: &NormalizationConfig) -> Result<SkeletonSequence> {
    let joints = cfg.resolve(seq.joint_set)?;
    let torso = mean_torso_length(seq, &joints)
        .ok_or_else(|| Error::Degenerate("torso joints never valid together".into()))?;
    if torso < MIN_TORSO {
        return Err(Error::Degenerate(format!("mean torso length {torso:e} m")));
    }
    let s = cfg.reference_torso_length / torso;
    let mut out = scale_by(seq, s);
    out.scale = Some(seq.scale.unwrap_or(1.0) * s);
    Ok(out)
}

fn scale_by(seq: &SkeletonSequence, s: f64) -> SkeletonSequence {
    let mut out = seq.clone();
    for_valid_joints(&mut out, |_, p| {
        for c in p.iter_mut() {
            *c *= s;
        }
    });
    out
}

/// Yaw angle that rotates the shoulder vector onto +x.
pub fn shoulder_yaw(left: &[f64; 3], right: &[f64; 3]) -> Result<f64> {
    let (vx, vz) = (right[0] - left[0], right[2] - left[2]);
    if vx.hypot(vz) < MIN_SHOULDER_SPAN {
        return Err(Error::Degenerate("shoulders vertically stacked; cannot align".into()));
    }
    Ok(-vz.atan2(vx))
}

/// Rotate a point about the vertical axis: x' = x cos θ − z sin θ, z' = x sin θ + z cos θ.
pub fn rotate_point_yaw(p: &[f64; 3], theta: f64) -> [f64; 3] {
    let (s, c) = theta.sin_cos();
    [p[0] * c - p[2] * s, p[1], p[0] * s + p[2] * c]
}

pub fn align_shoulders(seq: &SkeletonSequence, cfg: &NormalizationConfig) -> Result<SkeletonSequence> {
    let joints = cfg.resolve(seq.joint_set)?;
    let (l, r) = (joints.left_shoulder, joints.right_shoulder);
    let usable = |f: &crate::skeleton::SkeletonFrame| f.valid[l] && f.valid[r];
    let reference = seq
        .frames
        .iter()
        .find(|f| usable(f))
        .ok_or_else(|| Error::Degenerate("shoulders never valid together".into()))?;
    let base = shoulder_yaw(&reference.joints[l], &reference.joints[r])?;
    let angles: Vec<f64> = match cfg.rotation_reference {
        RotationReference::FirstValidFrame => vec![base; seq.len()],
        RotationReference::PerFrame => {
            let mut current = base;
            seq.frames
                .iter()
                .map(|f| {
                    if usable(f) {
                        current = shoulder_yaw(&f.joints[l], &f.joints[r])?;
                    }
                    Ok(current)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = seq.clone();
    for_valid_joints(&mut out, |i, p| *p = rotate_point_yaw(p, angles[i]));
    Ok(out)
}

/// center → scale → align; the identity when disabled.
pub fn normalize(seq: &SkeletonSequence, cfg: &NormalizationConfig) -> Result<SkeletonSequence> {
    if !cfg.enabled {
        return Ok(seq.clone());
    }
    cfg.validate()?;
    let centered = center(seq, cfg)?;
    let scaled = scale(&centered, cfg)?;
    align_shoulders(&scaled, cfg)
}

/// p ↦ R_y(yaw) · (k · p) + τ applied to every valid joint.
pub fn similarity_transform(seq: &SkeletonSequence, yaw: f64, k: f64, translation: [f64; 3]) -> SkeletonSequence {
    let mut out = seq.clone();
    for_valid_joints(&mut out, |_, p| {
        let q = rotate_point_yaw(&[p[0] * k, p[1] * k, p[2] * k], yaw);
        *p = [q[0] + translation[0], q[1] + translation[1], q[2] + translation[2]];
    });
    out
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
