//! JSON model configuration.
//!
//! ```json
//! {
//!   "variant": "tiny",          // tiny | small | medium | micro
//!   "domain": "video",          // image | video
//!   "stem": "2d",               // 2d | 3d
//!   "frames": 8, "height": 224, "width": 224, "channels": 3,
//!   "num_classes": 1000,
//!   "shift": {"axes": ["time", "height", "width"], "fraction": "1/2", "offset": 1},
//!   "block_variant": "R4",
//!   "se_reduction": 4,
//!   "drop_path_rate": 0.0,
//!   "downsample_kernel": 2,
//!   "stages": null,             // micro only: [{"channels", "depth", "expansion"}]
//!   "seed": 0
//! }
//! ```
//!
//! Only `variant` is required. `frames` defaults to 8 for video and must be
//! 1 for images; `shift` defaults to the domain policy. Unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{BlockVariant, DEFAULT_LN_EPS, DEFAULT_SE_REDUCTION};
use crate::error::{Error, Result};
use crate::models::{Domain, InputDims, ModelSpec, StageSpec, StemKind, Variant};
use crate::shift::ShiftPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "default_domain")]
    pub domain: Domain,
    #[serde(default = "default_stem")]
    pub stem: StemKind,
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default = "default_resolution")]
    pub height: usize,
    #[serde(default = "default_resolution")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub shift: Option<ShiftPolicy>,
    #[serde(default = "default_block_variant")]
    pub block_variant: BlockVariant,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default)]
    pub drop_path_rate: f32,
    #[serde(default = "default_downsample_kernel")]
    pub downsample_kernel: usize,
    #[serde(default)]
    pub stages: Option<Vec<StageSpec>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_domain() -> Domain {
    Domain::Video
}
fn default_stem() -> StemKind {
    StemKind::TwoD
}
fn default_resolution() -> usize {
    224
}
fn default_channels() -> usize {
    3
}
fn default_classes() -> usize {
    1000
}
fn default_block_variant() -> BlockVariant {
    BlockVariant::R4
}
fn default_se_reduction() -> usize {
    DEFAULT_SE_REDUCTION
}
fn default_downsample_kernel() -> usize {
    2
}

impl ModelConfig {
    pub fn new(variant: Variant, domain: Domain) -> Self {
        Self::from_spec(&ModelSpec::new(variant, domain), 0)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_spec(&self) -> Result<ModelSpec> {
        let frames = match (self.domain, self.frames) {
            (Domain::Image, None) => 1,
            (Domain::Video, None) => 8,
            (_, Some(f)) => f,
        };
        let stages = match (&self.stages, self.variant) {
            (None, v) => v.stages(),
            (Some(s), Variant::Micro) => s.clone(),
            (Some(_), v) => {
                return Err(Error::Config(format!(
                    "\"stages\" may only be set for the micro variant, not {v:?}"
                )))
            }
        };
        let shift = self.shift.clone().unwrap_or_else(|| match self.domain {
            Domain::Image => ShiftPolicy::image(),
            Domain::Video => ShiftPolicy::video(),
        });
        let spec = ModelSpec {
            variant: self.variant,
            domain: self.domain,
            stem: self.stem,
            input: InputDims {
                frames,
                height: self.height,
                width: self.width,
                channels: self.channels,
            },
            num_classes: self.num_classes,
            stages,
            shift,
            block_variant: self.block_variant,
            se_reduction: self.se_reduction,
            drop_path_rate: self.drop_path_rate,
            downsample_kernel: self.downsample_kernel,
            ln_eps: DEFAULT_LN_EPS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ModelSpec, seed: u64) -> Self {
        Self {
            variant: spec.variant,
            domain: spec.domain,
            stem: spec.stem,
            frames: Some(spec.input.frames),
            height: spec.input.height,
            width: spec.input.width,
            channels: spec.input.channels,
            num_classes: spec.num_classes,
            shift: Some(spec.shift.clone()),
            block_variant: spec.block_variant,
            se_reduction: spec.se_reduction,
            drop_path_rate: spec.drop_path_rate,
            downsample_kernel: spec.downsample_kernel,
            stages: (spec.variant == Variant::Micro).then(|| spec.stages.clone()),
            seed,
        }
    }
}
