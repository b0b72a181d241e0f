//! Shows how the shift operator partitions channels and moves values, and
//! checks that its VJP is the adjoint.
//!
//! ```text
//! cargo run --example shift_operator -- [channels]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vast::{shift, shift_vjp, ShiftAxis, ShiftPolicy, ShiftSpec, Tensor};

fn main() -> vast::Result<()> {
    let channels = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    for (label, policy) in [
        ("image", ShiftPolicy::image()),
        ("video", ShiftPolicy::video()),
        ("video without time", ShiftPolicy::video().without_axis(ShiftAxis::Time)),
    ] {
        let spec = ShiftSpec::new(policy, channels)?;
        println!("{label} policy over {channels} channels:");
        for g in spec.partition()? {
            println!("  channels {:>3}..{:<3} {:?} {:+}", g.channels.start, g.channels.end, g.axis, g.offset);
        }
        println!("  {} of {channels} channels move", spec.shifted_channels()?);
    }

    // A 1x1x1x5x3 strip: channel 0 moves right along width, channel 1 left,
    // channel 2 stays.
    let policy = ShiftPolicy { axes: vec![ShiftAxis::Width], fraction: vast::Fraction::new(2, 3)?, offset: 1 };
    let spec = ShiftSpec::new(policy, 3)?;
    let x = Tensor::from_fn(&[1, 1, 1, 5, 3], |i| (10 * (i % 3) + i / 3) as f32)?;
    let y = shift(&x, &spec)?;
    for c in 0..3 {
        let row = |t: &Tensor| (0..5).map(|w| t.get(&[0, 0, 0, w, c])).collect::<Vec<_>>();
        println!("channel {c}: {:?} -> {:?}", row(&x), row(&y));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = [2, 4, 6, 6, channels];
    let a = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0))?;
    let b = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0))?;
    let spec = ShiftSpec::video(channels)?;
    let lhs = shift(&a, &spec)?.dot(&b)?;
    let rhs = a.dot(&shift_vjp(&b, &spec)?)?;
    println!("<shift(a), b> = {lhs:.9}, <a, shift_vjp(b)> = {rhs:.9}");
    Ok(())
}
