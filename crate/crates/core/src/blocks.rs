//! Affine-Shift transformer layer, its MLP half, the multi-head
//! self-attention reference, and the ablation variants R1 to R6.
//!
//! Token path of the full (R4) layer on `x: [N, T, H, W, C]`:
//!
//! ```text
//! V = LN(x) W_v
//! Z = Shift(V)
//! Ẑ = Z ⊙ sigmoid(SE(AVG(Z))) + DWConv(Z)
//! Y = Ẑ W_h + x
//! out = MLP(LN(Y)) + Y        (drop-path on this branch only)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, ParamId, ParamStore, INIT_STD};
use crate::shift::{ShiftPolicy, ShiftSpec};
use crate::tensor::Tensor;

pub const DEFAULT_LN_EPS: f32 = 1e-6;
pub const DEFAULT_SE_REDUCTION: usize = 4;
pub const DEFAULT_DWCONV_KERNEL: usize = 3;

/// Whether stochastic parts of the forward pass (drop-path) are active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Rows of the block ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockVariant {
    /// Shift only between the projections: no scale, no bias.
    R1,
    /// No scale branch.
    R2,
    /// No bias branch.
    R3,
    /// Full Affine-Shift.
    R4,
    /// Full Affine-Shift plus a shift inside the MLP.
    R5,
    /// The whole token-mixing half is a bare shift with a residual.
    R6,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 6] = [
        BlockVariant::R1,
        BlockVariant::R2,
        BlockVariant::R3,
        BlockVariant::R4,
        BlockVariant::R5,
        BlockVariant::R6,
    ];
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockVariant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown block variant {s:?}, expected R1..R6")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhsaConfig {
    pub heads: usize,
    pub head_dim: usize,
}

impl MhsaConfig {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            head_dim: dim / heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub dim: usize,
    pub shift: ShiftSpec,
    pub se_reduction: usize,
    pub dwconv_kernel: usize,
    pub use_scale: bool,
    pub use_bias: bool,
    pub extra_mlp_shift: bool,
    pub only_shift: bool,
    /// Replaces the Affine-Shift mixer with softmax attention.
    pub mhsa: Option<MhsaConfig>,
    pub mlp_expansion: usize,
    pub drop_path_rate: f32,
    pub ln_eps: f32,
}

impl BlockConfig {
    /// Full (R4) block with default settings.
    pub fn new(dim: usize, shift: ShiftSpec, mlp_expansion: usize) -> Self {
        Self {
            dim,
            shift,
            se_reduction: DEFAULT_SE_REDUCTION,
            dwconv_kernel: DEFAULT_DWCONV_KERNEL,
            use_scale: true,
            use_bias: true,
            extra_mlp_shift: false,
            only_shift: false,
            mhsa: None,
            mlp_expansion,
            drop_path_rate: 0.0,
            ln_eps: DEFAULT_LN_EPS,
        }
    }

    /// Reference block with multi-head self-attention as the token mixer.
    /// `shift` is kept only to carry the channel count.
    pub fn attention(dim: usize, heads: usize, mlp_expansion: usize) -> Result<Self> {
        let mut cfg = Self::new(dim, ShiftSpec::new(ShiftPolicy::none(), dim)?, mlp_expansion);
        cfg.use_scale = false;
        cfg.use_bias = false;
        cfg.mhsa = Some(MhsaConfig::new(dim, heads)?);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mlp_expansion == 0 {
            return Err(Error::Config("block dim and expansion must be positive".into()));
        }
        if self.shift.channels != self.dim {
            return Err(Error::Config(format!(
                "shift spec covers {} channels, block dim is {}",
                self.shift.channels, self.dim
            )));
        }
        if self.se_reduction == 0 || !self.dim.is_multiple_of(self.se_reduction) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by SE reduction {}",
                self.dim, self.se_reduction
            )));
        }
        if self.dwconv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "depthwise kernel must be odd, got {}",
                self.dwconv_kernel
            )));
        }
        if self.only_shift && (self.use_scale || self.use_bias || self.extra_mlp_shift) {
            return Err(Error::Config("only_shift excludes every other mixer flag".into()));
        }
        if self.mhsa.is_some() && (self.only_shift || self.use_scale || self.use_bias) {
            return Err(Error::Config("the attention block takes no shift flags".into()));
        }
        if let Some(m) = self.mhsa {
            if m.dim() != self.dim {
                return Err(Error::Config(format!(
                    "attention dim {} does not match block dim {}",
                    m.dim(),
                    self.dim
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.drop_path_rate) {
            return Err(Error::Config(format!(
                "drop-path rate {} outside [0, 1]",
                self.drop_path_rate
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm eps must be positive".into()));
        }
        Ok(())
    }

    pub fn se_hidden(&self) -> usize {
        self.dim / self.se_reduction
    }

    pub fn mlp_hidden(&self) -> usize {
        self.dim * self.mlp_expansion
    }

    /// Number of learnable scalars in one layer built from this config.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let norm = 2 * d;
        let mixer = if self.only_shift {
            0
        } else if let Some(_m) = self.mhsa {
            norm + 3 * d * d + d * d + d
        } else {
            let mut p = norm + d * d + d * d + d;
            if self.use_scale {
                let r = self.se_hidden();
                p += d * r + r + r * d + d;
            }
            if self.use_bias {
                p += self.dwconv_kernel * self.dwconv_kernel * d + d;
            }
            p
        };
        let e = self.mlp_hidden();
        mixer + norm + d * e + e + e * d + d
    }
}

/// Block configuration for one ablation row, keeping every non-flag field of
/// `base`.
pub fn make_variant(row: BlockVariant, base: &BlockConfig) -> BlockConfig {
    let mut cfg = base.clone();
    cfg.mhsa = None;
    cfg.only_shift = false;
    cfg.extra_mlp_shift = false;
    let (scale, bias) = match row {
        BlockVariant::R1 => (false, false),
        BlockVariant::R2 => (false, true),
        BlockVariant::R3 => (true, false),
        BlockVariant::R4 | BlockVariant::R5 => (true, true),
        BlockVariant::R6 => (false, false),
    };
    cfg.use_scale = scale;
    cfg.use_bias = bias;
    cfg.extra_mlp_shift = row == BlockVariant::R5;
    cfg.only_shift = row == BlockVariant::R6;
    cfg
}

#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{prefix}.weight"), Tensor::ones(&[dim])?)?,
            beta: store.add(format!("{prefix}.bias"), Tensor::zeros(&[dim])?)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, eps: f32) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, eps)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{prefix}.weight"),
            trunc_normal(&[d_in, d_out], INIT_STD, rng)?,
        )?;
        let bias = if bias {
            Some(store.add(format!("{prefix}.bias"), Tensor::zeros(&[d_out])?)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

/// Squeeze-excitation gate: pooled features through `d -> d/r -> d` with
/// GELU between, then a sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct SeGate {
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct DwConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub size: usize,
}

#[derive(Clone, Debug)]
pub struct AffineShiftMixer {
    pub norm: Norm,
    pub w_v: Linear,
    pub se: Option<SeGate>,
    pub dwconv: Option<DwConv>,
    pub w_h: Linear,
}

#[derive(Clone, Debug)]
pub struct MhsaMixer {
    pub norm: Norm,
    pub attention: Attention,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub cfg: MhsaConfig,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_h: Linear,
}

#[derive(Clone, Debug)]
pub enum Mixer {
    AffineShift(AffineShiftMixer),
    ShiftOnly,
    Attention(MhsaMixer),
}

#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub norm: Norm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// One transformer layer: token mixer then MLP, each with a residual.
#[derive(Clone, Debug)]
pub struct AffineShiftLayer {
    pub cfg: BlockConfig,
    pub mixer: Mixer,
    pub mlp: MlpBlock,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: MhsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.dim();
        Ok(Self {
            cfg,
            w_q: Linear::new(store, &format!("{prefix}.w_q"), d, d, false, rng)?,
            w_k: Linear::new(store, &format!("{prefix}.w_k"), d, d, false, rng)?,
            w_v: Linear::new(store, &format!("{prefix}.w_v"), d, d, false, rng)?,
            w_h: Linear::new(store, &format!("{prefix}.w_h"), d, d, true, rng)?,
        })
    }

    /// Softmax attention over the `S` tokens of `x: [N, S, d]`, heads
    /// concatenated and projected by `W_h`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (n, s, d) = match *tape.shape(x) {
            [n, s, d] => (n, s, d),
            ref other => {
                return Err(Error::Shape(format!("attention expects [N, S, d], got {other:?}")))
            }
        };
        if d != self.cfg.dim() {
            return Err(Error::dim("attention", &[n, s, d], &[self.cfg.dim()]));
        }
        let (h, dh) = (self.cfg.heads, self.cfg.head_dim);
        let q = self.w_q.forward(tape, store, x)?;
        let k = self.w_k.forward(tape, store, x)?;
        let v = self.w_v.forward(tape, store, x)?;
        let split = |tape: &mut Tape, t: Var, perm: &[usize], shape: [usize; 3]| -> Result<Var> {
            let t = tape.reshape(t, &[n, s, h, dh])?;
            let t = tape.permute(t, perm)?;
            tape.reshape(t, &shape)
        };
        let q = split(tape, q, &[0, 2, 1, 3], [n * h, s, dh])?;
        let kt = split(tape, k, &[0, 2, 3, 1], [n * h, dh, s])?;
        let v = split(tape, v, &[0, 2, 1, 3], [n * h, s, dh])?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt());
        let attn = tape.softmax(scores, 2)?;
        let y = tape.bmm(attn, v)?;
        let y = tape.reshape(y, &[n, h, s, dh])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        let y = tape.reshape(y, &[n, s, d])?;
        self.w_h.forward(tape, store, y)
    }
}

impl AffineShiftMixer {
    /// `V = LN(x) W_v`.
    pub fn value_projection(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        eps: f32,
    ) -> Result<Var> {
        let normed = self.norm.forward(tape, store, x, eps)?;
        self.w_v.forward(tape, store, normed)
    }

    /// `Ẑ` from `V`: shift, then the optional scale and bias branches, both
    /// computed from the shifted signal.
    pub fn affine_shift(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        v: Var,
        cfg: &BlockConfig,
    ) -> Result<Var> {
        if cfg.use_scale != self.se.is_some() || cfg.use_bias != self.dwconv.is_some() {
            return Err(Error::Config(
                "mixer parameters do not match the enabled branches".into(),
            ));
        }
        let z = tape.shift(v, &cfg.shift)?;
        let mut out = z;
        if let Some(se) = &self.se {
            let pooled = tape.mean_pool(z)?;
            let hidden = se.fc1.forward(tape, store, pooled)?;
            let hidden = tape.gelu(hidden);
            let logits = se.fc2.forward(tape, store, hidden)?;
            let gate = tape.sigmoid(logits);
            out = tape.mul_broadcast(z, gate)?;
        }
        if let Some(dw) = &self.dwconv {
            let k = tape.param(store, dw.kernel);
            let b = tape.param(store, dw.bias);
            let conv = tape.depthwise_conv2d(z, k, b, dw.size)?;
            out = tape.add(out, conv)?;
        }
        Ok(out)
    }
}

impl MlpBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        expansion: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = dim * expansion;
        Ok(Self {
            norm: Norm::new(store, &format!("{prefix}.norm2"), dim)?,
            fc1: Linear::new(store, &format!("{prefix}.mlp.fc1"), dim, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{prefix}.mlp.fc2"), hidden, dim, true, rng)?,
        })
    }

    pub fn hidden_dim(&self, store: &ParamStore) -> usize {
        store.value(self.fc1.weight).shape()[1]
    }

    /// `MLP(LN(y)) + y`, with an optional shift after the norm and
    /// drop-path on the branch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        y: Var,
        cfg: &BlockConfig,
        mode: &mut Mode,
    ) -> Result<Var> {
        let drop = drop_path_mask(tape.shape(y)[0], cfg.drop_path_rate, mode)?;
        if let DropPath::All = drop {
            return Ok(y);
        }
        let mut h = self.norm.forward(tape, store, y, cfg.ln_eps)?;
        if cfg.extra_mlp_shift {
            h = tape.shift(h, &cfg.shift)?;
        }
        let h = self.fc1.forward(tape, store, h)?;
        let h = tape.gelu(h);
        let mut h = self.fc2.forward(tape, store, h)?;
        if let DropPath::Mask(mask) = drop {
            let mask = tape.constant(mask);
            h = tape.mul_broadcast(h, mask)?;
        }
        tape.add(h, y)
    }
}

enum DropPath {
    Keep,
    All,
    Mask(Tensor),
}

/// Per-sample Bernoulli keep mask scaled by `1 / (1 - rate)`.
fn drop_path_mask(batch: usize, rate: f32, mode: &mut Mode) -> Result<DropPath> {
    let Mode::Train(rng) = mode else {
        return Ok(DropPath::Keep);
    };
    if rate <= 0.0 {
        return Ok(DropPath::Keep);
    }
    if rate >= 1.0 {
        return Ok(DropPath::All);
    }
    let keep = 1.0 - rate;
    let mask = Tensor::from_fn(&[batch, 1], |_| {
        if rng.gen::<f32>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })?;
    Ok(DropPath::Mask(mask))
}

impl AffineShiftLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mixer = if cfg.only_shift {
            Mixer::ShiftOnly
        } else if let Some(m) = cfg.mhsa {
            Mixer::Attention(MhsaMixer {
                norm: Norm::new(store, &format!("{prefix}.norm1"), d)?,
                attention: Attention::new(store, prefix, m, rng)?,
            })
        } else {
            let norm = Norm::new(store, &format!("{prefix}.norm1"), d)?;
            let w_v = Linear::new(store, &format!("{prefix}.w_v"), d, d, false, rng)?;
            let se = if cfg.use_scale {
                let r = cfg.se_hidden();
                Some(SeGate {
                    fc1: Linear::new(store, &format!("{prefix}.se.fc1"), d, r, true, rng)?,
                    fc2: Linear::new(store, &format!("{prefix}.se.fc2"), r, d, true, rng)?,
                })
            } else {
                None
            };
            let dwconv = if cfg.use_bias {
                let k = cfg.dwconv_kernel;
                Some(DwConv {
                    kernel: store.add(
                        format!("{prefix}.dwconv.weight"),
                        trunc_normal(&[k, k, d], INIT_STD, rng)?,
                    )?,
                    bias: store.add(format!("{prefix}.dwconv.bias"), Tensor::zeros(&[d])?)?,
                    size: k,
                })
            } else {
                None
            };
            let w_h = Linear::new(store, &format!("{prefix}.w_h"), d, d, true, rng)?;
            Mixer::AffineShift(AffineShiftMixer {
                norm,
                w_v,
                se,
                dwconv,
                w_h,
            })
        };
        let mlp = MlpBlock::new(store, prefix, d, cfg.mlp_expansion, rng)?;
        Ok(Self { cfg, mixer, mlp })
    }

    /// Token-mixing half with its residual: `Y = mixer(x) + x`. Never
    /// subject to drop-path.
    pub fn mix_tokens(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let dims = tape.value(x).dims5()?;
        if dims[4] != self.cfg.dim {
            return Err(Error::dim("affine_shift_layer", tape.shape(x), &[self.cfg.dim]));
        }
        let branch = match &self.mixer {
            Mixer::ShiftOnly => tape.shift(x, &self.cfg.shift)?,
            Mixer::AffineShift(m) => {
                let v = m.value_projection(tape, store, x, self.cfg.ln_eps)?;
                let zhat = m.affine_shift(tape, store, v, &self.cfg)?;
                m.w_h.forward(tape, store, zhat)?
            }
            Mixer::Attention(m) => {
                let [n, t, h, w, c] = dims;
                let normed = m.norm.forward(tape, store, x, self.cfg.ln_eps)?;
                let tokens = tape.reshape(normed, &[n, t * h * w, c])?;
                let y = m.attention.forward(tape, store, tokens)?;
                tape.reshape(y, &dims)?
            }
        };
        tape.add(branch, x)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let y = self.mix_tokens(tape, store, x)?;
        self.mlp.forward(tape, store, y, &self.cfg, mode)
    }
}
