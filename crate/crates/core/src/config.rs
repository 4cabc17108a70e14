//! The unified JSON configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::Pipeline;
use crate::preprocess::NormalizationConfig;
use crate::skeleton::{ClassTable, JointMap};
use crate::train::TrainConfig;
use crate::windowing::WindowConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub normalization: NormalizationConfig,
    pub augmentation: AugmentConfig,
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Joint-map files overriding the built-in maps onto COMMON.
    pub joint_maps: Vec<PathBuf>,
    /// Class table file; the built-in synthetic table when absent.
    pub class_table: Option<PathBuf>,
    /// Master seed; when set, copied into `train.seed` and `augmentation.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PipelineConfig {
    /// Parse a JSON document. Relative file references resolve against `base`.
    pub fn from_json(json: &str, base: Option<&Path>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(json);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<root>".to_string() } else { key }, e.inner().to_string())
        })?;
        if let Some(s) = cfg.seed {
            cfg.set_seed(s);
        }
        let resolve = |p: PathBuf| match base {
            Some(b) if p.is_relative() => b.join(p),
            _ => p,
        };
        cfg.joint_maps = cfg.joint_maps.into_iter().map(resolve).collect();
        cfg.class_table = cfg.class_table.map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.train.seed = seed;
        self.augmentation.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate()?;
        self.augmentation.validate()?;
        self.window.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        for (i, p) in self.joint_maps.iter().enumerate() {
            if !p.is_file() {
                return Err(Error::config(format!("joint_maps[{i}]"), format!("{} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.class_table {
            if !p.is_file() {
                return Err(Error::config("class_table", format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Pretty JSON of the fully resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        let joint_maps = self
            .joint_maps
            .iter()
            .map(|p| JointMap::load(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Pipeline {
            normalization: self.normalization.clone(),
            window: self.window.clone(),
            augmentation: self.augmentation.clone(),
            joint_maps,
        })
    }

    pub fn classes(&self) -> Result<ClassTable> {
        match &self.class_table {
            Some(p) => ClassTable::load(p),
            None => Ok(ClassTable::synthetic()),
        }
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    PipelineConfig::from_json(&text, path.parent())
}
