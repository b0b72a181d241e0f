//! Builds every block variant at a small width, runs it on a random clip and
//! back-propagates a scalar loss through it.
//!
//! ```text
//! cargo run --example affine_shift_block
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vast::blocks::make_variant;
use vast::gradcheck::random_tensor;
use vast::{AffineShiftLayer, BlockConfig, BlockVariant, Mode, ParamStore, ShiftSpec, Tape};

fn main() -> vast::Result<()> {
    let dim = 32;
    let base = BlockConfig::new(dim, ShiftSpec::video(dim)?, 4);
    let mut configs: Vec<(String, BlockConfig)> = [
        BlockVariant::R1,
        BlockVariant::R2,
        BlockVariant::R3,
        BlockVariant::R4,
        BlockVariant::R5,
        BlockVariant::R6,
    ]
    .into_iter()
    .map(|row| (format!("{row:?}"), make_variant(row, &base)))
    .collect();
    configs.push(("MHSA".into(), BlockConfig::attention(dim, 4, 4)?));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&[1, 4, 8, 8, dim], 1.0, &mut rng);
    println!("{:<6} {:>8} {:>12} {:>14}", "block", "params", "|out - x|", "|dL/dparams|");
    for (name, cfg) in configs {
        let mut store = ParamStore::new();
        let layer = AffineShiftLayer::new(&mut store, "block", cfg.clone(), &mut rng)?;
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let out = layer.forward(&mut tape, &store, input, &mut Mode::Eval)?;
        let loss = tape.sum(out);
        tape.backward(loss, &mut store)?;

        let delta: f64 = tape.value(out).data().iter().zip(x.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        let grad: f64 = store.iter().map(|(id, _)| store.grad(id).data().iter().map(|&g| (g as f64).powi(2)).sum::<f64>()).sum();
        println!("{name:<6} {:>8} {:>12.4} {:>14.4}", cfg.param_count(), delta.sqrt(), grad.sqrt());
    }
    Ok(())
}
