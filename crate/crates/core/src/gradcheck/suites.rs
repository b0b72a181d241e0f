//! The finite-difference suites behind `vast gradcheck`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradients, random_tensor, GradCheckOptions, GradCheckReport};
use crate::autodiff::{ConvGeometry, CustomOp, Tape, Var};
use crate::blocks::{make_variant, AffineShiftLayer, BlockConfig, BlockVariant, Mode};
use crate::error::{Error, Result};
use crate::models::{build_model, ModelSpec, StageSpec, StemKind};
use crate::params::ParamStore;
use crate::shift::{ShiftPolicy, ShiftSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Every differentiable tape operation in isolation.
    Ops,
    /// The six block variants plus the attention reference block.
    Blocks,
    /// A 4-block micro network, end to end.
    Model,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "blocks" => Ok(Scope::Blocks),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Usage(format!(
                "unknown gradcheck scope {s:?}, expected ops, blocks or model"
            ))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Ops => "ops",
            Scope::Blocks => "blocks",
            Scope::Model => "model",
        })
    }
}

pub fn run_scope(scope: Scope, seed: u64) -> Result<Vec<GradCheckReport>> {
    match scope {
        Scope::Ops => op_suite(seed),
        Scope::Blocks => block_suite(seed),
        Scope::Model => model_suite(seed),
    }
}

fn options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    }
}

/// Checks `f` with respect to freshly drawn inputs `(name, shape, scale)`.
fn check_op(
    label: &str,
    seed: u64,
    inputs: &[(&str, &[usize], f32)],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut ids = Vec::new();
    for &(name, shape, scale) in inputs {
        ids.push(store.add(name, random_tensor(shape, scale, &mut rng))?);
    }
    check_gradients(
        label,
        &mut store,
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            f(tape, &vars)
        },
        &options(seed),
    )
}

fn op_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let s = seed;
    let labels: Vec<usize> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        (0..4).map(|_| rng.gen_range(0..5)).collect()
    };
    let shift_video = ShiftSpec::video(6)?;
    let shift_image = ShiftSpec::image(6)?;
    let stem_2d = ConvGeometry::spatial(2, 1);
    let stem_3d = ConvGeometry {
        stride: [2, 2, 2],
        padding: [1, 1, 1],
    };
    let mut out = vec![
        check_op(
            "linear",
            s,
            &[("x", &[2, 3, 4], 1.0), ("w", &[4, 5], 1.0), ("b", &[5], 1.0)],
            |t, v| t.linear(v[0], v[1], Some(v[2])),
        )?,
        check_op(
            "linear_no_bias",
            s,
            &[("x", &[3, 4], 1.0), ("w", &[4, 2], 1.0)],
            |t, v| t.linear(v[0], v[1], None),
        )?,
        check_op("add", s, &[("a", &[2, 3, 4], 1.0), ("b", &[2, 3, 4], 1.0)], |t, v| {
            t.add(v[0], v[1])
        })?,
        check_op("mul", s, &[("a", &[2, 3, 4], 1.0), ("b", &[2, 3, 4], 1.0)], |t, v| {
            t.mul(v[0], v[1])
        })?,
        check_op("scale", s, &[("a", &[3, 4], 1.0)], |t, v| Ok(t.scale(v[0], -0.7)))?,
        check_op(
            "mul_broadcast_channel",
            s,
            &[("x", &[2, 2, 3, 3, 4], 1.0), ("g", &[2, 4], 1.0)],
            |t, v| t.mul_broadcast(v[0], v[1]),
        )?,
        check_op(
            "mul_broadcast_sample",
            s,
            &[("x", &[2, 3, 4], 1.0), ("g", &[2, 1], 1.0)],
            |t, v| t.mul_broadcast(v[0], v[1]),
        )?,
        check_op("gelu", s, &[("x", &[4, 5], 3.0)], |t, v| Ok(t.gelu(v[0])))?,
        check_op("sigmoid", s, &[("x", &[4, 5], 3.0)], |t, v| Ok(t.sigmoid(v[0])))?,
        check_op("softmax_last_axis", s, &[("x", &[2, 3, 5], 2.0)], |t, v| {
            t.softmax(v[0], 2)
        })?,
        check_op("softmax_middle_axis", s, &[("x", &[2, 3, 5], 2.0)], |t, v| {
            t.softmax(v[0], 1)
        })?,
        check_op(
            "layer_norm",
            s,
            &[("x", &[2, 3, 6], 2.0), ("gamma", &[6], 1.0), ("beta", &[6], 1.0)],
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-6),
        )?,
        check_op("mean_pool", s, &[("x", &[2, 2, 3, 3, 4], 1.0)], |t, v| t.mean_pool(v[0]))?,
        check_op("global_avg_pool", s, &[("x", &[2, 2, 3, 3, 4], 1.0)], |t, v| {
            t.global_avg_pool(v[0])
        })?,
        check_op(
            "depthwise_conv_3x3",
            s,
            &[("x", &[2, 2, 4, 4, 3], 1.0), ("k", &[3, 3, 3], 1.0), ("b", &[3], 1.0)],
            |t, v| t.depthwise_conv2d(v[0], v[1], v[2], 3),
        )?,
        check_op(
            "depthwise_conv_5x5",
            s,
            &[("x", &[1, 1, 5, 6, 2], 1.0), ("k", &[5, 5, 2], 1.0), ("b", &[2], 1.0)],
            |t, v| t.depthwise_conv2d(v[0], v[1], v[2], 5),
        )?,
        check_op(
            "conv_2d_strided",
            s,
            &[("x", &[1, 2, 7, 7, 2], 1.0), ("w", &[1, 3, 3, 2, 3], 1.0), ("b", &[3], 1.0)],
            |t, v| t.conv(v[0], v[1], Some(v[2]), stem_2d),
        )?,
        check_op(
            "conv_3d_strided",
            s,
            &[("x", &[1, 4, 5, 5, 2], 1.0), ("w", &[3, 3, 3, 2, 2], 1.0)],
            |t, v| t.conv(v[0], v[1], None, stem_3d),
        )?,
        check_op("shift_video", s, &[("x", &[2, 3, 4, 4, 6], 1.0)], |t, v| {
            t.shift(v[0], &shift_video)
        })?,
        check_op("shift_image", s, &[("x", &[2, 1, 4, 4, 6], 1.0)], |t, v| {
            t.shift(v[0], &shift_image)
        })?,
        check_op("reshape", s, &[("x", &[2, 3, 4], 1.0)], |t, v| t.reshape(v[0], &[6, 4]))?,
        check_op("permute", s, &[("x", &[2, 3, 4], 1.0)], |t, v| t.permute(v[0], &[2, 0, 1]))?,
        check_op("bmm", s, &[("a", &[2, 3, 4], 1.0), ("b", &[2, 4, 5], 1.0)], |t, v| {
            t.bmm(v[0], v[1])
        })?,
        check_op("sum", s, &[("x", &[3, 4], 1.0)], |t, v| Ok(t.sum(v[0])))?,
    ];
    out.push(check_op(
        "cross_entropy",
        s,
        &[("logits", &[4, 5], 2.0)],
        |t, v| t.cross_entropy(v[0], &labels),
    )?);
    Ok(out)
}

const BLOCK_DIM: usize = 8;
const BLOCK_INPUT: [usize; 5] = [2, 2, 3, 3, BLOCK_DIM];

fn check_block(label: &str, seed: u64, cfg: BlockConfig, train: bool) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = AffineShiftLayer::new(&mut store, "block", cfg, &mut rng)?;
    randomize_affine(&mut store, &mut rng);
    let input = store.add("input", random_tensor(&BLOCK_INPUT, 1.0, &mut rng))?;
    check_gradients(
        label,
        &mut store,
        |tape, store| {
            let x = tape.param(store, input);
            if train {
                let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
                layer.forward(tape, store, x, &mut Mode::Train(&mut drop_rng))
            } else {
                layer.forward(tape, store, x, &mut Mode::Eval)
            }
        },
        &options(seed),
    )
}

/// Replaces the unit/zero initial norm scales and biases with random values
/// so their gradients are exercised away from the symmetric starting point.
/// Weights drawn at 0.02 std are rescaled towards unit size for the same
/// reason.
fn randomize_affine(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let scale = if p.name.ends_with(".bias") { 0.5 } else { 1.0 };
        let fresh = random_tensor(p.value.shape(), scale, rng);
        if p.name.contains("norm") && p.name.ends_with(".weight") {
            p.value = fresh.map(|v| 1.0 + 0.5 * v);
        } else if p.name.ends_with(".bias") {
            p.value = fresh;
        } else {
            let fan_in = p.value.shape()[..p.value.rank() - 1].iter().product::<usize>();
            let k = 1.0 / (fan_in as f32).sqrt();
            p.value = fresh.map(|v| v * k * 1.7);
        }
    }
}

fn block_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let base = BlockConfig::new(BLOCK_DIM, ShiftSpec::video(BLOCK_DIM)?, 2);
    let mut out = Vec::new();
    for row in BlockVariant::ALL {
        out.push(check_block(&format!("block_{row}"), seed, make_variant(row, &base), false)?);
    }
    let mut image = BlockConfig::new(BLOCK_DIM, ShiftSpec::image(BLOCK_DIM)?, 2);
    image = make_variant(BlockVariant::R4, &image);
    out.push(check_block("block_R4_spatial_shift", seed, image, false)?);
    let mhsa = BlockConfig::attention(BLOCK_DIM, 2, 2)?;
    out.push(check_block("block_mhsa_reference", seed, mhsa, false)?);
    let mut dropped = make_variant(BlockVariant::R4, &base);
    dropped.drop_path_rate = 0.5;
    out.push(check_block("block_R4_drop_path_train", seed, dropped, true)?);
    Ok(out)
}

fn micro_spec(stem: StemKind, policy: ShiftPolicy) -> ModelSpec {
    let mut spec = ModelSpec::named("vast-micro")
        .expect("known model")
        .with_input(4, 8, 8)
        .with_classes(3);
    spec.stem = stem;
    spec.shift = policy;
    spec.stages = vec![StageSpec {
        channels: 8,
        depth: 4,
        expansion: 2,
    }];
    spec
}

fn check_model(label: &str, seed: u64, spec: ModelSpec) -> Result<GradCheckReport> {
    let mut model = build_model(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x40de1);
    let mut store = std::mem::take(&mut model.params);
    randomize_affine(&mut store, &mut rng);
    let input = store.add("input", random_tensor(&spec.input_shape(2), 1.0, &mut rng))?;
    check_gradients(
        label,
        &mut store,
        |tape, store| {
            let x = tape.param(store, input);
            Ok(model.forward_with(tape, store, x, &mut Mode::Eval)?.logits)
        },
        &options(seed),
    )
}

fn model_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_model(
            "micro_2d_stem_3axis_shift",
            seed,
            micro_spec(StemKind::TwoD, ShiftPolicy::video()),
        )?,
        check_model(
            "micro_3d_stem_3axis_shift",
            seed,
            micro_spec(StemKind::ThreeD, ShiftPolicy::video()),
        )?,
    ])
}

/// `x -> x^2` whose VJP is deliberately 10% too large. Used as a negative
/// control: the checker must reject it.
#[derive(Debug)]
pub struct CorruptedSquare;

impl CustomOp for CorruptedSquare {
    fn name(&self) -> &str {
        "corrupted_square"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|v| v * v))
    }

    fn vjp(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(x, g)| 2.2 * x * g)
            .collect();
        Ok(vec![Tensor::from_vec(inputs[0].shape(), data)?])
    }
}

pub fn corrupted_vjp_check(seed: u64) -> Result<GradCheckReport> {
    check_op("corrupted_square", seed, &[("x", &[3, 4], 1.0)], |t, v| {
        t.custom(&[v[0]], Box::new(CorruptedSquare))
    })
}
