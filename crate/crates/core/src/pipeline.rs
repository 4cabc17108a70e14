//! The per-sample transform chain shared by training, evaluation and the
//! live stream: remap → normalize (optional) → resample → pack.

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::Result;
use crate::preprocess::{normalize, NormalizationConfig};
use crate::skeleton::{remap, JointMap, JointSetId, SkeletonFrame, SkeletonSequence};
use crate::windowing::{pack, resample, WindowConfig, WindowTensor};

/// The three ablation switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Toggles {
    pub noise: bool,
    pub augmentation: bool,
    pub normalization: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pipeline {
    pub normalization: NormalizationConfig,
    pub window: WindowConfig,
    pub augmentation: AugmentConfig,
    /// Overrides for the built-in maps onto the COMMON layout.
    pub joint_maps: Vec<JointMap>,
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        self.window.validate()?;
        self.augmentation.validate()?;
        for m in &self.joint_maps {
            m.validate()?;
        }
        Ok(())
    }

    pub fn toggles(&self) -> Toggles {
        Toggles {
            noise: self.augmentation.noise,
            augmentation: self.augmentation.augmentation,
            normalization: self.normalization.enabled,
        }
    }

    pub fn with_toggles(&self, t: Toggles) -> Pipeline {
        let mut p = self.clone();
        p.augmentation.noise = t.noise;
        p.augmentation.augmentation = t.augmentation;
        p.normalization.enabled = t.normalization;
        p
    }

    /// Map from `source` onto the COMMON layout.
    pub fn joint_map(&self, source: JointSetId) -> JointMap {
        if let Some(m) = self
            .joint_maps
            .iter()
            .find(|m| m.source == source && m.target == JointSetId::Common)
        {
            return m.clone();
        }
        if source == JointSetId::Common {
            JointMap::identity(source)
        } else {
            JointMap::builtin_to_common(source)
        }
    }

    /// Center window of a whole sequence.
    pub fn sequence_window(&self, seq: &SkeletonSequence) -> Result<WindowTensor> {
        let common = remap(seq, &self.joint_map(seq.joint_set))?;
        self.common_window(&common)
    }

    /// Window from COMMON-layout frames recorded at `fps`.
    pub fn frames_window(&self, frames: Vec<SkeletonFrame>, fps: f64) -> Result<WindowTensor> {
        self.common_window(&SkeletonSequence::new(JointSetId::Common, frames, fps)?)
    }

    fn common_window(&self, seq: &SkeletonSequence) -> Result<WindowTensor> {
        let normalized = normalize(seq, &self.normalization)?;
        pack(&resample(&normalized, self.window.model_fps)?, &self.window)
    }
}
