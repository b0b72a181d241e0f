//! Hierarchical AST (image) and VAST (video) networks.
//!
//! Stem to `H/4 x W/4`, four stages of Affine-Shift layers with a strided
//! convolution between stages (`H/8`, `H/16`, `H/32`), a final norm, and a
//! mean-pool linear head. The frame count is constant across stages; a 3D
//! stem halves it once at the entry.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeometry, Tape, Var};
use crate::blocks::{
    make_variant, AffineShiftLayer, BlockConfig, BlockVariant, Linear, Mode, Norm,
    DEFAULT_DWCONV_KERNEL, DEFAULT_LN_EPS, DEFAULT_SE_REDUCTION,
};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamId, ParamStore, INIT_STD};
use crate::shift::{ShiftPolicy, ShiftSpec};
use crate::tensor::Tensor;

pub const STAGE_CHANNELS: [usize; 4] = [64, 128, 320, 512];
pub const STAGE_EXPANSIONS: [usize; 4] = [8, 8, 4, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Small,
    Medium,
    /// Single-stage, four-block toy network.
    Micro,
}

impl Variant {
    pub fn depths(self) -> &'static [usize] {
        match self {
            Variant::Tiny => &[3, 4, 8, 3],
            Variant::Small => &[3, 4, 22, 3],
            Variant::Medium => &[3, 8, 33, 3],
            Variant::Micro => &[4],
        }
    }

    pub fn stages(self) -> Vec<StageSpec> {
        match self {
            Variant::Micro => vec![StageSpec {
                channels: 16,
                depth: 4,
                expansion: 4,
            }],
            v => v
                .depths()
                .iter()
                .zip(STAGE_CHANNELS.iter().zip(STAGE_EXPANSIONS))
                .map(|(&depth, (&channels, expansion))| StageSpec {
                    channels,
                    depth,
                    expansion,
                })
                .collect(),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Tiny => "ti",
            Variant::Small => "s",
            Variant::Medium => "m",
            Variant::Micro => "micro",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Image,
    Video,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StemKind {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl StemKind {
    /// Kernel and geometry: 7x7 stride 4 pad 3 in space; the 3D stem adds a
    /// temporal kernel of 3 with stride 2 and pad 1.
    pub fn geometry(self) -> ([usize; 3], ConvGeometry) {
        match self {
            StemKind::TwoD => ([1, 7, 7], ConvGeometry::spatial(4, 3)),
            StemKind::ThreeD => (
                [3, 7, 7],
                ConvGeometry {
                    stride: [2, 4, 4],
                    padding: [1, 3, 3],
                },
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub channels: usize,
    pub depth: usize,
    pub expansion: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Everything needed to build (or statically analyze) a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub domain: Domain,
    pub stem: StemKind,
    pub input: InputDims,
    pub num_classes: usize,
    pub stages: Vec<StageSpec>,
    pub shift: ShiftPolicy,
    pub block_variant: BlockVariant,
    pub se_reduction: usize,
    pub drop_path_rate: f32,
    /// Kernel of the stride-2 convolution between stages (2 or 3).
    pub downsample_kernel: usize,
    pub ln_eps: f32,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.domain {
            Domain::Image => "ast",
            Domain::Video => "vast",
        };
        write!(f, "{prefix}-{}", self.variant.short_name())
    }
}

/// Parses names like `ast-ti`, `vast-s`, `vast-micro`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelName {
    pub domain: Domain,
    pub variant: Variant,
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (prefix, size) = lower
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("bad model name {s:?}, expected e.g. ast-ti")))?;
        let domain = match prefix {
            "ast" => Domain::Image,
            "vast" => Domain::Video,
            _ => return Err(Error::Config(format!("unknown model family {prefix:?}"))),
        };
        let variant = match size {
            "ti" | "tiny" => Variant::Tiny,
            "s" | "small" => Variant::Small,
            "m" | "b" | "medium" => Variant::Medium,
            "micro" => Variant::Micro,
            _ => return Err(Error::Config(format!("unknown model size {size:?}"))),
        };
        Ok(Self { domain, variant })
    }
}

impl ModelSpec {
    /// Defaults: 224x224 RGB, 1000 classes, 8 frames for video; a third of
    /// the channels shifted over height and width for images, half over
    /// time, height and width for video.
    pub fn new(variant: Variant, domain: Domain) -> Self {
        let (frames, shift) = match domain {
            Domain::Image => (1, ShiftPolicy::image()),
            Domain::Video => (8, ShiftPolicy::video()),
        };
        Self {
            variant,
            domain,
            stem: StemKind::TwoD,
            input: InputDims {
                frames,
                height: 224,
                width: 224,
                channels: 3,
            },
            num_classes: 1000,
            stages: variant.stages(),
            shift,
            block_variant: BlockVariant::R4,
            se_reduction: DEFAULT_SE_REDUCTION,
            drop_path_rate: 0.0,
            downsample_kernel: 2,
            ln_eps: DEFAULT_LN_EPS,
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        let n: ModelName = name.parse()?;
        Ok(Self::new(n.variant, n.domain))
    }

    pub fn with_input(mut self, frames: usize, height: usize, width: usize) -> Self {
        self.input.frames = frames;
        self.input.height = height;
        self.input.width = width;
        self
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    /// Total spatial reduction from input to the last stage.
    pub fn total_stride(&self) -> usize {
        4 << (self.stages.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.iter().any(|s| s.channels == 0 || s.depth == 0) {
            return Err(Error::Config("every stage needs positive width and depth".into()));
        }
        if self.variant != Variant::Micro && self.stages != self.variant.stages() {
            return Err(Error::Config(format!(
                "{:?} stages are fixed; custom stages need the micro variant",
                self.variant
            )));
        }
        let stride = self.total_stride();
        let InputDims {
            frames,
            height,
            width,
            channels,
        } = self.input;
        if height == 0 || width == 0 || height % stride != 0 || width % stride != 0 {
            return Err(Error::Config(format!(
                "input {height}x{width} must be a positive multiple of {stride}"
            )));
        }
        if frames == 0 || channels == 0 || self.num_classes == 0 {
            return Err(Error::Config("frames, channels and classes must be positive".into()));
        }
        match (self.domain, self.stem) {
            (Domain::Image, StemKind::ThreeD) => {
                return Err(Error::Config("image models use a 2D stem".into()))
            }
            (Domain::Image, _) if frames != 1 => {
                return Err(Error::Config("image models take a single frame".into()))
            }
            _ => {}
        }
        if !matches!(self.downsample_kernel, 2 | 3) {
            return Err(Error::Config(format!(
                "downsample kernel must be 2 or 3, got {}",
                self.downsample_kernel
            )));
        }
        self.shift.validate()?;
        for s in &self.stages {
            if s.channels % self.se_reduction != 0 {
                return Err(Error::Config(format!(
                    "stage width {} not divisible by SE reduction {}",
                    s.channels, self.se_reduction
                )));
            }
        }
        self.stem_output_frames()?;
        Ok(())
    }

    pub fn stem_output_frames(&self) -> Result<usize> {
        let (kernel, geom) = self.stem.geometry();
        let out = geom.output_extent([self.input.frames, 7, 7], kernel)?;
        Ok(out[0])
    }

    pub fn downsample_geometry(&self) -> ([usize; 3], ConvGeometry) {
        let k = self.downsample_kernel;
        ([1, k, k], ConvGeometry::spatial(2, (k - 1) / 2))
    }

    /// `(frames, height, width)` of every stage's output.
    pub fn stage_resolutions(&self) -> Result<Vec<[usize; 3]>> {
        let t = self.stem_output_frames()?;
        Ok((0..self.stages.len())
            .map(|i| {
                let s = 4 << i;
                [t, self.input.height / s, self.input.width / s]
            })
            .collect())
    }

    pub fn total_blocks(&self) -> usize {
        self.stages.iter().map(|s| s.depth).sum()
    }

    /// Drop-path rate of each block, ramped linearly from 0 to the
    /// configured rate over depth.
    pub fn drop_path_schedule(&self) -> Vec<f32> {
        let n = self.total_blocks();
        (0..n)
            .map(|i| {
                if n <= 1 {
                    self.drop_path_rate
                } else {
                    self.drop_path_rate * i as f32 / (n - 1) as f32
                }
            })
            .collect()
    }

    pub fn block_config(&self, stage: usize, drop_path_rate: f32) -> Result<BlockConfig> {
        let s = self.stages[stage];
        let mut base = BlockConfig::new(
            s.channels,
            ShiftSpec::new(self.shift.clone(), s.channels)?,
            s.expansion,
        );
        base.se_reduction = self.se_reduction;
        base.dwconv_kernel = DEFAULT_DWCONV_KERNEL;
        base.drop_path_rate = drop_path_rate;
        base.ln_eps = self.ln_eps;
        let cfg = make_variant(self.block_variant, &base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Expected input shape for a batch of `n`.
    pub fn input_shape(&self, n: usize) -> Vec<usize> {
        let InputDims {
            frames,
            height,
            width,
            channels,
        } = self.input;
        match self.domain {
            Domain::Image => vec![n, height, width, channels],
            Domain::Video => vec![n, frames, height, width, channels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub norm: Norm,
}

impl ConvLayer {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        kernel: [usize; 3],
        geometry: ConvGeometry,
        c_in: usize,
        c_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [kt, kh, kw] = kernel;
        Ok(Self {
            weight: store.add(
                format!("{prefix}.conv.weight"),
                trunc_normal(&[kt, kh, kw, c_in, c_out], INIT_STD, rng)?,
            )?,
            bias: store.add(format!("{prefix}.conv.bias"), Tensor::zeros(&[c_out])?)?,
            geometry,
            norm: Norm::new(store, &format!("{prefix}.norm"), c_out)?,
        })
    }

    /// Strided convolution followed by layer norm.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, eps: f32) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.conv(x, w, Some(b), self.geometry)?;
        self.norm.forward(tape, store, y, eps)
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub downsample: Option<ConvLayer>,
    pub blocks: Vec<AffineShiftLayer>,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub classifier: Linear,
}

impl Head {
    /// Mean over every token, then a linear classifier: `[N, .., C] -> [N, K]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let pooled = tape.mean_pool(features)?;
        self.classifier.forward(tape, store, pooled)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    pub stem: ConvLayer,
    pub stages: Vec<Stage>,
    pub norm: Norm,
    pub head: Head,
}

/// Output of [`Model::forward_detailed`].
pub struct ForwardOutput {
    pub logits: Var,
    pub stem: Var,
    pub stages: Vec<Var>,
}

/// Builds a network with parameters drawn from `seed`. Parameter names and
/// order depend only on the spec.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (kernel, geom) = spec.stem.geometry();
    let c1 = spec.stages[0].channels;
    let stem = ConvLayer::new(
        &mut store,
        "stem",
        kernel,
        geom,
        spec.input.channels,
        c1,
        &mut rng,
    )?;
    let rates = spec.drop_path_schedule();
    let mut block_index = 0;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (i, s) in spec.stages.iter().enumerate() {
        let prefix = format!("stage{}", i + 1);
        let downsample = if i == 0 {
            None
        } else {
            let (kernel, geom) = spec.downsample_geometry();
            Some(ConvLayer::new(
                &mut store,
                &format!("{prefix}.downsample"),
                kernel,
                geom,
                spec.stages[i - 1].channels,
                s.channels,
                &mut rng,
            )?)
        };
        let mut blocks = Vec::with_capacity(s.depth);
        for b in 0..s.depth {
            let cfg = spec.block_config(i, rates[block_index])?;
            block_index += 1;
            blocks.push(AffineShiftLayer::new(
                &mut store,
                &format!("{prefix}.block{}", b + 1),
                cfg,
                &mut rng,
            )?);
        }
        stages.push(Stage { downsample, blocks });
    }
    let last = spec.stages.last().expect("validated").channels;
    let norm = Norm::new(&mut store, "norm", last)?;
    let classifier = Linear::new(&mut store, "head", last, spec.num_classes, true, &mut rng)?;
    Ok(Model {
        spec: spec.clone(),
        params: store,
        stem,
        stages,
        norm,
        head: Head { classifier },
    })
}

impl Model {
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Reshapes an input batch to `[N, T, H, W, C]`, checking it against the
    /// spec.
    pub fn check_input(&self, shape: &[usize]) -> Result<[usize; 5]> {
        let n = shape.first().copied().unwrap_or(0);
        let expected = self.spec.input_shape(n.max(1));
        if n == 0 || shape != expected.as_slice() {
            return Err(Error::Shape(format!(
                "model input: expected {:?} (any batch size), got {shape:?}",
                self.spec.input_shape(1)
            )));
        }
        let i = self.spec.input;
        Ok([n, i.frames, i.height, i.width, i.channels])
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mode: &mut Mode) -> Result<Var> {
        Ok(self.forward_detailed(tape, x, mode)?.logits)
    }

    pub fn forward_detailed(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.params, x, mode)
    }

    /// Forward pass reading parameters from `store` instead of
    /// `self.params`. `store` must hold the same names in the same order,
    /// e.g. a copy taken from this model.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: &mut Mode,
    ) -> Result<ForwardOutput> {
        let dims = self.check_input(tape.shape(x))?;
        let x = if tape.shape(x).len() == 5 {
            x
        } else {
            tape.reshape(x, &dims)?
        };
        let eps = self.spec.ln_eps;
        let stem = self.stem.forward(tape, store, x, eps)?;
        let mut h = stem;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(ds) = &stage.downsample {
                h = ds.forward(tape, store, h, eps)?;
            }
            for block in &stage.blocks {
                h = block.forward(tape, store, h, mode)?;
            }
            stage_outputs.push(h);
        }
        let h = self.norm.forward(tape, store, h, eps)?;
        let logits = self.head.forward(tape, store, h)?;
        Ok(ForwardOutput {
            logits,
            stem,
            stages: stage_outputs,
        })
    }

    /// Eval-mode logits for a batch.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let logits = self.forward(&mut tape, input, &mut Mode::Eval)?;
        Ok(tape.value(logits).clone())
    }
}
