//! Fits a two-layer perceptron with a hand-written activation on the tape,
//! using the AdamW optimizer directly.
//!
//! ```text
//! cargo run --example autodiff
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vast::autodiff::CustomOp;
use vast::optim::AdamW;
use vast::{ParamStore, Tape, Tensor};

/// Leaky ReLU with slope 0.1, written against the custom-op interface.
#[derive(Debug)]
struct LeakyRelu;

impl CustomOp for LeakyRelu {
    fn name(&self) -> &str {
        "leaky_relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> vast::Result<Tensor> {
        Ok(inputs[0].map(|v| if v > 0.0 { v } else { 0.1 * v }))
    }

    fn vjp(&self, inputs: &[&Tensor], _: &Tensor, grad_out: &Tensor) -> vast::Result<Vec<Tensor>> {
        let x = inputs[0];
        let g = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.1 * g });
        Ok(vec![Tensor::from_vec(x.shape(), g.collect())?])
    }
}

fn main() -> vast::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Two classes: inside or outside the unit circle.
    let n = 128;
    let points: Vec<f32> = (0..2 * n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let labels: Vec<usize> = points.chunks(2).map(|p| (p[0] * p[0] + p[1] * p[1] > 1.0) as usize).collect();
    let x = Tensor::from_vec(&[n, 2], points)?;

    let mut store = ParamStore::new();
    let mut init = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5));
    let w1 = store.add("w1", init(&[2, 16])?)?;
    let b1 = store.add("b1", Tensor::zeros(&[16])?)?;
    let w2 = store.add("w2", init(&[16, 2])?)?;
    let b2 = store.add("b2", Tensor::zeros(&[2])?)?;
    let mut opt = AdamW::with_weight_decay(0.0)?;

    for step in 0..300 {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let (pw1, pb1) = (tape.param(&store, w1), tape.param(&store, b1));
        let h = tape.linear(input, pw1, Some(pb1))?;
        let h = tape.custom(&[h], Box::new(LeakyRelu))?;
        let (pw2, pb2) = (tape.param(&store, w2), tape.param(&store, b2));
        let logits = tape.linear(h, pw2, Some(pb2))?;
        let loss = tape.cross_entropy(logits, &labels)?;

        store.zero_grad();
        tape.backward(loss, &mut store)?;
        opt.step(&mut store, 2e-2)?;
        if step % 50 == 0 || step == 299 {
            let pred = tape.value(logits).argmax_rows();
            let acc = pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
            println!("step {step:>3} loss {:.4} acc {acc:.3}", tape.value(loss).data()[0]);
        }
    }
    Ok(())
}
