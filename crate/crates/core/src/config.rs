//! TOML run configuration. Every section is optional and falls back to the
//! built-in defaults field by field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::ThicknessTable;
use crate::error::{FlipError, Result};
use crate::perception::PerceptionParams;
use crate::physics::PhysicsParams;
use crate::sac::TrainConfig;
use crate::scene::{PaperSpec, Scenario, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub scenario: Scenario,
    pub paper: String,
    pub tilt_deg: f64,
    /// Defaults to the scenario's usual sheet count.
    pub sheet_count: Option<usize>,
}

impl Default for SceneSection {
    fn default() -> Self {
        SceneSection {
            scenario: Scenario::Book,
            paper: "printer".into(),
            tilt_deg: 0.0,
            sheet_count: None,
        }
    }
}

impl SceneSection {
    pub fn to_scene(&self, seed: u64) -> Result<SceneConfig> {
        let mut cfg = SceneConfig::new(self.scenario, PaperSpec::preset(&self.paper)?, self.tilt_deg, seed);
        if let Some(n) = self.sheet_count {
            cfg.sheet_count = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub scene: SceneSection,
    pub physics: PhysicsParams,
    pub perception: PerceptionParams,
    pub thickness: ThicknessTable,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FlipError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FlipError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| FlipError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FlipError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.physics.validate()?;
        self.perception.validate()?;
        self.scene.to_scene(0)?;
        for name in self.thickness.0.keys() {
            self.thickness.get(name)?;
        }
        Ok(())
    }
}

/// Physics overrides: a TOML table of [`PhysicsParams`] fields; anything
/// missing keeps its default.
pub fn load_physics(path: &Path) -> Result<PhysicsParams> {
    let text = std::fs::read_to_string(path).map_err(|e| FlipError::io(path, e))?;
    let p: PhysicsParams =
        toml::from_str(&text).map_err(|e| FlipError::Config(format!("{}: {e}", path.display())))?;
    p.validate()?;
    Ok(p)
}
