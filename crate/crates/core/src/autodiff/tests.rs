use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::random_tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

#[test]
fn linear_matches_triple_loop() {
    let mut r = rng(1);
    let x = random_tensor(&[2, 3, 5], 1.0, &mut r);
    let w = random_tensor(&[5, 4], 1.0, &mut r);
    let b = random_tensor(&[4], 1.0, &mut r);
    let mut tape = Tape::new();
    let (vx, vw, vb) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.linear(vx, vw, Some(vb)).unwrap();
    let got = tape.value(y);
    assert_eq!(got.shape(), &[2, 3, 4]);
    for row in 0..6 {
        for j in 0..4 {
            let mut acc = 0f64;
            for k in 0..5 {
                acc += x.data()[row * 5 + k] as f64 * w.data()[k * 4 + j] as f64;
            }
            let expected = acc as f32 + b.data()[j];
            assert_eq!(got.data()[row * 4 + j].to_bits(), expected.to_bits());
        }
    }
}

#[test]
fn identity_weights_and_zero_bias_pass_through() {
    let mut r = rng(2);
    let x = random_tensor(&[3, 4], 1.0, &mut r);
    let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 }).unwrap();
    let mut tape = Tape::new();
    let (vx, vw) = (tape.constant(x.clone()), tape.constant(eye));
    let y = tape.linear(vx, vw, None).unwrap();
    assert!(tape.value(y).bitwise_eq(&x));
}

#[test]
fn linear_rejects_mismatched_inner_dims() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
    let w = tape.constant(Tensor::zeros(&[4, 5]).unwrap());
    assert!(matches!(tape.linear(x, w, None), Err(Error::Dimension { .. })));
}

/// Direct 3D convolution, loops in the natural order.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Tensor {
    let [n, t, h, wd, ci] = x.dims5().unwrap();
    let s = w.shape();
    let (kt, kh, kw, co) = (s[0], s[1], s[2], s[4]);
    let out = |len: usize, k: usize, st: usize, p: usize| (len + 2 * p - k) / st + 1;
    let (to, ho, wo) = (out(t, kt, stride[0], pad[0]), out(h, kh, stride[1], pad[1]), out(wd, kw, stride[2], pad[2]));
    let mut y = Tensor::zeros(&[n, to, ho, wo, co]).unwrap();
    for bi in 0..n {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    for o in 0..co {
                        let mut acc = 0f64;
                        for a in 0..kt {
                            for c in 0..kh {
                                for e in 0..kw {
                                    let it = (ot * stride[0] + a) as isize - pad[0] as isize;
                                    let ih = (oh * stride[1] + c) as isize - pad[1] as isize;
                                    let iw = (ow * stride[2] + e) as isize - pad[2] as isize;
                                    if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= wd as isize {
                                        continue;
                                    }
                                    for i in 0..ci {
                                        let xv = x.get(&[bi, it as usize, ih as usize, iw as usize, i]);
                                        let wv = w.get(&[a, c, e, i, o]);
                                        acc += xv as f64 * wv as f64;
                                    }
                                }
                            }
                        }
                        y.set(&[bi, ot, oh, ow, o], acc as f32 + b.data()[o]);
                    }
                }
            }
        }
    }
    y
}

#[test]
fn conv_matches_loop_oracle() {
    let mut r = rng(3);
    let cases: [([usize; 5], [usize; 5], [usize; 3], [usize; 3]); 3] = [
        ([2, 1, 9, 9, 3], [1, 7, 7, 3, 4], [1, 4, 4], [0, 3, 3]),
        ([1, 4, 8, 8, 2], [3, 7, 7, 2, 3], [2, 4, 4], [1, 3, 3]),
        ([1, 2, 6, 6, 3], [1, 2, 2, 3, 5], [1, 2, 2], [0, 0, 0]),
    ];
    for (xs, ws, stride, pad) in cases {
        let x = random_tensor(&xs, 1.0, &mut r);
        let w = random_tensor(&ws, 1.0, &mut r);
        let b = random_tensor(&[ws[4]], 1.0, &mut r);
        let mut tape = Tape::new();
        let (vx, vw, vb) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape
            .conv(vx, vw, Some(vb), ConvGeometry { stride, padding: pad })
            .unwrap();
        assert!(tape.value(y).bitwise_eq(&conv_oracle(&x, &w, &b, stride, pad)));
    }
}

#[test]
fn stem_geometry_maps_224_to_56() {
    let geom = ConvGeometry::spatial(4, 3);
    assert_eq!(geom.output_extent([1, 224, 224], [1, 7, 7]).unwrap(), [1, 56, 56]);
    let geom3 = ConvGeometry {
        stride: [2, 4, 4],
        padding: [1, 3, 3],
    };
    assert_eq!(geom3.output_extent([8, 224, 224], [3, 7, 7]).unwrap(), [4, 56, 56]);
}

#[test]
fn delta_kernel_conv_is_identity() {
    let mut r = rng(4);
    let x = random_tensor(&[1, 2, 5, 5, 2], 1.0, &mut r);
    let w = Tensor::from_fn(&[1, 3, 3, 2, 2], |i| {
        // centre tap, input channel == output channel
        let (tap, ci, co) = (i / 4, (i / 2) % 2, i % 2);
        if tap == 4 && ci == co { 1.0 } else { 0.0 }
    })
    .unwrap();
    let mut tape = Tape::new();
    let (vx, vw) = (tape.constant(x.clone()), tape.constant(w));
    let y = tape.conv(vx, vw, None, ConvGeometry::spatial(1, 1)).unwrap();
    assert!(tape.value(y).bitwise_eq(&x));
}

#[test]
fn depthwise_conv_matches_loop_oracle_and_delta() {
    let mut r = rng(5);
    let x = random_tensor(&[2, 2, 5, 4, 3], 1.0, &mut r);
    let k = random_tensor(&[3, 3, 3], 1.0, &mut r);
    let b = random_tensor(&[3], 1.0, &mut r);
    let mut tape = Tape::new();
    let (vx, vk, vb) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
    let y = tape.depthwise_conv2d(vx, vk, vb, 3).unwrap();
    let got = tape.value(y);
    let [n, t, h, w, c] = x.dims5().unwrap();
    for bi in 0..n {
        for f in 0..t {
            for oh in 0..h {
                for ow in 0..w {
                    for ch in 0..c {
                        let mut acc = 0f64;
                        for a in 0..3 {
                            for e in 0..3 {
                                let (ih, iw) = (oh as isize + a as isize - 1, ow as isize + e as isize - 1);
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += x.get(&[bi, f, ih as usize, iw as usize, ch]) as f64
                                    * k.get(&[a, e, ch]) as f64;
                            }
                        }
                        let expected = acc as f32 + b.data()[ch];
                        assert_eq!(got.get(&[bi, f, oh, ow, ch]).to_bits(), expected.to_bits());
                    }
                }
            }
        }
    }
    let delta = Tensor::from_fn(&[3, 3, 3], |i| if i / 3 == 4 { 1.0 } else { 0.0 }).unwrap();
    let mut tape = Tape::new();
    let (vx, vk, vb) = (tape.constant(x.clone()), tape.constant(delta), tape.constant(Tensor::zeros(&[3]).unwrap()));
    let y = tape.depthwise_conv2d(vx, vk, vb, 3).unwrap();
    assert!(tape.value(y).bitwise_eq(&x));
}

#[test]
fn depthwise_conv_rejects_wrong_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4, 3]).unwrap());
    let k = tape.constant(Tensor::zeros(&[3, 3, 3]).unwrap());
    let b = tape.constant(Tensor::zeros(&[3]).unwrap());
    assert!(matches!(tape.depthwise_conv2d(x, k, b, 5), Err(Error::Config(_))));
}

#[test]
fn mean_pool_matches_loop_and_constant_input() {
    let mut r = rng(6);
    let x = random_tensor(&[2, 3, 2, 2, 4], 1.0, &mut r);
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let p = tape.mean_pool(vx).unwrap();
    for b in 0..2 {
        for c in 0..4 {
            let mut acc = 0f64;
            for pos in 0..12 {
                acc += x.data()[(b * 12 + pos) * 4 + c] as f64;
            }
            assert_eq!(tape.value(p).data()[b * 4 + c].to_bits(), ((acc / 12.0) as f32).to_bits());
        }
    }
    let g = tape.global_avg_pool(vx).unwrap();
    assert_eq!(tape.shape(g), &[2, 1, 1, 1, 4]);
    assert_eq!(tape.value(g).data(), tape.value(p).data());

    let constant = Tensor::full(&[1, 2, 3, 3, 2], 0.375).unwrap();
    let vc = tape.constant(constant);
    let pc = tape.mean_pool(vc).unwrap();
    assert_eq!(tape.value(pc).data(), &[0.375, 0.375]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut store = ParamStore::new();
    let id = store.add("x", random_tensor(&[3, 4], 1.0, &mut rng(7))).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let s = tape.sum(x);
    tape.backward(s, &mut store).unwrap();
    assert!(store.grad(id).data().iter().all(|&g| g == 1.0));
}

#[test]
fn second_backward_doubles_gradients() {
    let mut store = ParamStore::new();
    let id = store.add("x", random_tensor(&[5], 1.0, &mut rng(8))).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.mul(x, x).unwrap();
    let s = tape.sum(y);
    tape.backward(s, &mut store).unwrap();
    let once = store.grad(id).clone();
    tape.backward(s, &mut store).unwrap();
    for (a, b) in store.grad(id).data().iter().zip(once.data()) {
        assert_eq!(*a, 2.0 * b);
    }
    store.zero_grad();
    assert!(store.grad(id).data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::ones(&[3]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.gelu(x);
    assert!(matches!(tape.backward(y, &mut store), Err(Error::Usage(_))));
}

#[test]
fn parameter_used_twice_gets_both_contributions() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::from_vec(&[2], vec![3.0, -1.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let a = tape.param(&store, id);
    let b = tape.param(&store, id);
    assert_eq!(a, b);
    let y = tape.mul(a, b).unwrap();
    let s = tape.sum(y);
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[6.0, -2.0]);
}

#[test]
fn layer_norm_normalizes_and_zeroes_constant_rows() {
    let mut r = rng(9);
    let x = random_tensor(&[4, 16], 3.0, &mut r).map(|v| v + 5.0);
    let mut tape = Tape::new();
    let vx = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[16]).unwrap());
    let b = tape.constant(Tensor::zeros(&[16]).unwrap());
    let y = tape.layer_norm(vx, g, b, 1e-6).unwrap();
    for row in tape.value(y).data().chunks(16) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / 16.0;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
    let c = tape.constant(Tensor::full(&[2, 16], 7.25).unwrap());
    let yc = tape.layer_norm(c, g, b, 1e-6).unwrap();
    assert!(tape.value(yc).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_reports_non_finite_token() {
    let mut data = vec![0.5f32; 12];
    data[9] = f32::NAN;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[3, 4], data).unwrap());
    let g = tape.constant(Tensor::ones(&[4]).unwrap());
    let b = tape.constant(Tensor::zeros(&[4]).unwrap());
    match tape.layer_norm(x, g, b, 1e-6) {
        Err(Error::NonFinite { token, .. }) => assert_eq!(token, 2),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert!(tape.layer_norm(x, g, b, 0.0).is_err());
}

#[test]
fn softmax_rows_sum_to_one_and_ignore_shifts() {
    let mut r = rng(10);
    let x = random_tensor(&[3, 7], 4.0, &mut r);
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let y = tape.softmax(vx, 1).unwrap();
    for row in tape.value(y).data().chunks(7) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    let shifted = tape.constant(x.map(|v| v + 100.0));
    let ys = tape.softmax(shifted, 1).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(tape.value(ys).data()) {
        assert!(close(*a, *b, 1e-5));
    }
}

#[test]
fn scalar_activation_reference_points() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(&[3], vec![0.0, 3.0, -3.0]).unwrap());
    let s = tape.sigmoid(x);
    assert_eq!(tape.value(s).data()[0], 0.5);
    let g = tape.gelu(x);
    let gd = tape.value(g).data();
    assert_eq!(gd[0], 0.0);
    // tanh-approximate GELU at +-3
    assert!(close(gd[1], 2.996_363_8, 1e-6));
    assert!(close(gd[2], -0.003_636_2, 1e-4));
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_k() {
    let mut tape = Tape::new();
    let logits = tape.constant(Tensor::zeros(&[4, 5]).unwrap());
    let l = tape.cross_entropy(logits, &[0, 1, 2, 4]).unwrap();
    assert!(close(tape.value(l).data()[0], 5f32.ln(), 1e-6));
    assert!(tape.cross_entropy(logits, &[0, 1, 2, 5]).is_err());
    assert!(tape.cross_entropy(logits, &[0, 1]).is_err());
}

#[test]
fn bmm_matches_loop_oracle() {
    let mut r = rng(11);
    let a = random_tensor(&[2, 3, 4], 1.0, &mut r);
    let b = random_tensor(&[2, 4, 5], 1.0, &mut r);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let y = tape.bmm(va, vb).unwrap();
    for n in 0..2 {
        for i in 0..3 {
            for j in 0..5 {
                let acc: f64 = (0..4)
                    .map(|k| a.get(&[n, i, k]) as f64 * b.get(&[n, k, j]) as f64)
                    .sum();
                assert_eq!(tape.value(y).get(&[n, i, j]).to_bits(), (acc as f32).to_bits());
            }
        }
    }
}

#[test]
fn permute_round_trips() {
    let mut r = rng(12);
    let x = random_tensor(&[2, 3, 4, 5], 1.0, &mut r);
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let p = tape.permute(vx, &[2, 0, 3, 1]).unwrap();
    assert_eq!(tape.shape(p), &[4, 2, 5, 3]);
    assert_eq!(tape.value(p).get(&[1, 0, 4, 2]), x.get(&[0, 2, 1, 4]));
    let back = tape.permute(p, &[1, 3, 0, 2]).unwrap();
    assert!(tape.value(back).bitwise_eq(&x));
    assert!(tape.permute(vx, &[0, 0, 1, 2]).is_err());
}

#[test]
fn mul_broadcast_gates_channels_per_sample() {
    let x = Tensor::ones(&[2, 1, 2, 2, 3]).unwrap();
    let g = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5]).unwrap();
    let mut tape = Tape::new();
    let (vx, vg) = (tape.constant(x), tape.constant(g));
    let y = tape.mul_broadcast(vx, vg).unwrap();
    let d = tape.value(y).data();
    assert_eq!(&d[..3], &[1.0, 2.0, 3.0]);
    assert_eq!(&d[12..15], &[-1.0, 0.0, 0.5]);
    let bad = tape.constant(Tensor::ones(&[2, 2]).unwrap());
    assert!(tape.mul_broadcast(vx, bad).is_err());
}

#[derive(Debug)]
struct Cube;

impl CustomOp for Cube {
    fn name(&self) -> &str {
        "cube"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|v| v * v * v))
    }
    fn vjp(&self, inputs: &[&Tensor], _: &Tensor, g: &Tensor) -> Result<Vec<Tensor>> {
        let data = inputs[0].data().iter().zip(g.data()).map(|(x, g)| 3.0 * x * x * g).collect();
        Ok(vec![Tensor::from_vec(inputs[0].shape(), data)?])
    }
}

#[test]
fn custom_op_participates_in_backward() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::from_vec(&[2], vec![2.0, -1.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.custom(&[x], Box::new(Cube)).unwrap();
    let s = tape.sum(y);
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[12.0, 3.0]);
}

#[test]
fn input_gradients_are_returned() {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let x = tape.input(random_tensor(&[4], 1.0, &mut r));
    let c = tape.constant(Tensor::full(&[4], 2.0).unwrap());
    let y = tape.mul(x, c).unwrap();
    let s = tape.sum(y);
    let grads = tape.backward(s, &mut store).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0; 4]);
    assert!(grads.get(c).is_none());
}

#[test]
fn shift_node_backward_is_the_adjoint() {
    let mut r = rng(14);
    let spec = ShiftSpec::video(6).unwrap();
    let x = random_tensor(&[2, 3, 4, 4, 6], 1.0, &mut r);
    let seed: Tensor = random_tensor(&[2, 3, 4, 4, 6], 1.0, &mut r);
    let mut store = ParamStore::new();
    let mut tape = Tape::new();
    let vx = tape.input(x.clone());
    let y = tape.shift(vx, &spec).unwrap();
    let grads = tape.backward_with_grad(y, seed.clone(), &mut store).unwrap();
    let lhs = tape.value(y).dot(&seed).unwrap();
    let rhs = x.dot(grads.get(vx).unwrap()).unwrap();
    assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
}

#[test]
fn random_seeds_give_consistent_gelu_gradients() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x: f32 = r.gen_range(-4.0..4.0);
        let h = 1e-3f64;
        let f = |v: f64| {
            let v = v as f32;
            kernels::gelu(v) as f64
        };
        let fd = (f(x as f64 + h) - f(x as f64 - h)) / (2.0 * h);
        assert!((fd - kernels::gelu_grad(x) as f64).abs() < 2e-3, "x={x}");
    }
}
