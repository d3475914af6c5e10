use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::app::dataset::{SynthSpec, MAX_CLASSES};
use crate::encoders::{EncoderConfig, StructureEncoderKind, StructureInputKind};
use crate::generator::GeneratorConfig;
use crate::geometry::{car_views, face_views, ViewSpec};
use crate::training::TrainConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPreset {
    Car6,
    Face1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Views {
    Preset(ViewPreset),
    Custom(Vec<ViewSpec>),
}

impl Views {
    pub fn resolve(&self) -> Result<Vec<ViewSpec>> {
        let views = match self {
            Views::Preset(ViewPreset::Car6) => car_views(),
            Views::Preset(ViewPreset::Face1) => face_views(),
            Views::Custom(v) => v.clone(),
        };
        if views.is_empty() {
            return Err(Error::Config("at least one view is required".into()));
        }
        for v in &views {
            ViewSpec::new(&v.name, v.forward, v.up).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(views)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub structure_encoder_kind: StructureEncoderKind,
    pub structure_input_kind: StructureInputKind,
    pub channels: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            structure_encoder_kind: StructureEncoderKind::CoarseToFine,
            structure_input_kind: StructureInputKind::Segmentation,
            channels: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub count: usize,
    pub num_meshes: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            count: 2000,
            num_meshes: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Trailing dataset pairs held out from training.
    pub holdout: usize,
    /// Render size for exported per-view images.
    pub render_size: usize,
    /// Cameras rendered on export in addition to the canonical views.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extra_cameras: Vec<ViewSpec>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            holdout: 64,
            render_size: 128,
            extra_cameras: Vec::new(),
        }
    }
}

/// Everything a run needs. Serialized as TOML with one table per section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub num_classes: usize,
    pub views: Views,
    /// Container with `perceptual.*` and `embedding.*` weights for the
    /// reconstruction losses; the built-in seeded networks when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_nets: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub encoder: EncoderSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub stage3: TrainConfig,
}

impl Default for PipelineConfig {
    /// Desk-scale run: R=32 on the synthetic vehicle data.
    fn default() -> Self {
        Self {
            seed: 0,
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/desk"),
            num_classes: 4,
            views: Views::Preset(ViewPreset::Car6),
            loss_nets: None,
            generator: GeneratorConfig::desk(),
            encoder: EncoderSection::default(),
            synth: SynthSection::default(),
            eval: EvalSection::default(),
            stage1: TrainConfig {
                learning_rate: 2e-3,
                max_steps: 400,
                ..TrainConfig::default()
            },
            stage2: TrainConfig {
                learning_rate: 3e-3,
                max_steps: 1200,
                ..TrainConfig::default()
            },
            stage3: TrainConfig {
                learning_rate: 3e-3,
                max_steps: 1000,
                ..TrainConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes `config.resolved` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.resolved");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn stage(&self, stage: u8) -> Result<&TrainConfig> {
        match stage {
            1 => Ok(&self.stage1),
            2 => Ok(&self.stage2),
            3 => Ok(&self.stage3),
            s => Err(Error::Config(format!("stage must be 1, 2 or 3, got {s}"))),
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            structure_encoder_kind: self.encoder.structure_encoder_kind,
            structure_input_kind: self.encoder.structure_input_kind,
            channels: self.encoder.channels,
            ..EncoderConfig::for_generator(&self.generator, self.num_classes)
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            count: self.synth.count,
            resolution: self.generator.resolution,
            num_classes: self.num_classes,
            num_meshes: self.synth.num_meshes,
        }
    }

    /// Cross-module consistency: R, D, n, L, N and C agree everywhere.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        let views = self.views.resolve()?;
        if views.len() != self.generator.num_views {
            return Err(Error::Config(format!(
                "views list has {} entries but generator.num_views = {}",
                views.len(),
                self.generator.num_views
            )));
        }
        for v in &self.eval.extra_cameras {
            ViewSpec::new(&v.name, v.forward, v.up).map_err(|e| Error::Config(e.to_string()))?;
            if views.iter().any(|u| u.name == v.name) {
                return Err(Error::Config(format!("extra camera {:?} clashes with a canonical view", v.name)));
            }
        }
        if !(2..=MAX_CLASSES).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must be in 2..={MAX_CLASSES}, got {}",
                self.num_classes
            )));
        }
        let enc = self.encoder_config();
        enc.validate()?;
        enc.check_matches(&self.generator)?;
        for s in 1..=3 {
            self.stage(s)?.validate()?;
        }
        Ok(())
    }
}
