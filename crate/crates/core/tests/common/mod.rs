#![allow(dead_code)]

use rand::Rng;
use vast::{ShiftAxis, ShiftPolicy, Tensor};

/// Brute-force shift: walks every output index and fetches its source
/// element by hand. `sign = -1` gives the adjoint.
pub fn oracle_shift(x: &Tensor, policy: &ShiftPolicy, sign: isize) -> Tensor {
    let dims: Vec<usize> = x.shape().to_vec();
    let c = dims[4];
    let mut axes: Vec<usize> = Vec::new();
    for want in [ShiftAxis::Time, ShiftAxis::Height, ShiftAxis::Width] {
        if policy.axes.contains(&want) {
            axes.push(match want {
                ShiftAxis::Time => 1,
                ShiftAxis::Height => 2,
                ShiftAxis::Width => 3,
            });
        }
    }
    // (tensor axis, signed offset) for every channel, None if untouched
    let mut plan: Vec<Option<(usize, isize)>> = vec![None; c];
    if !axes.is_empty() {
        let shifted = c * policy.fraction.num as usize / policy.fraction.den as usize;
        let per = shifted / axes.len();
        let plus = per - per / 2;
        let mut ch = 0;
        for &axis in &axes {
            for i in 0..per {
                let off = policy.offset as isize;
                plan[ch] = Some((axis, if i < plus { off } else { -off }));
                ch += 1;
            }
        }
    }

    let mut out = Tensor::zeros(&dims).unwrap();
    for n in 0..dims[0] {
        for t in 0..dims[1] {
            for h in 0..dims[2] {
                for w in 0..dims[3] {
                    for ch in 0..c {
                        let mut src = [n as isize, t as isize, h as isize, w as isize, ch as isize];
                        if let Some((axis, off)) = plan[ch] {
                            src[axis] -= sign * off;
                        }
                        let inside = (1..4).all(|a| src[a] >= 0 && src[a] < dims[a] as isize);
                        if inside {
                            let s: Vec<usize> = src.iter().map(|&v| v as usize).collect();
                            out.set(&[n, t, h, w, ch], x.get(&s));
                        }
                    }
                }
            }
        }
    }
    out
}

/// A random policy over a random subset of axes.
pub fn random_policy<R: Rng>(rng: &mut R) -> ShiftPolicy {
    let axes = [ShiftAxis::Time, ShiftAxis::Height, ShiftAxis::Width]
        .into_iter()
        .filter(|_| rng.gen_bool(0.6))
        .collect();
    let den = rng.gen_range(1..=6);
    ShiftPolicy {
        axes,
        fraction: vast::Fraction::new(rng.gen_range(0..=den), den).unwrap(),
        offset: rng.gen_range(1..=3),
    }
}

/// Random `[N,T,H,W,C]` extents. A randomly chosen rank in 2..=5 decides how
/// many of T, H, W are real axes; the rest are size 1.
pub fn random_dims<R: Rng>(rng: &mut R) -> Vec<usize> {
    let rank = rng.gen_range(2..=5);
    let mut dims = vec![rng.gen_range(1..=3), 1, 1, 1, rng.gen_range(1..=13)];
    let mut spatial = vec![1, 2, 3];
    for _ in 0..rank - 2 {
        let i = spatial.remove(rng.gen_range(0..spatial.len()));
        dims[i] = rng.gen_range(2..=6);
    }
    dims
}

pub fn random_data<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0)).unwrap()
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn reverse_frames(x: &Tensor) -> Tensor {
    let t = x.shape()[1];
    let order: Vec<usize> = (0..t).rev().collect();
    permute_frames(x, &order)
}

/// Output frame `i` is input frame `order[i]`.
pub fn permute_frames(x: &Tensor, order: &[usize]) -> Tensor {
    let [n, t, h, w, c] = x.dims5().unwrap();
    assert_eq!(order.len(), t);
    let per = h * w * c;
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for &f in order {
            let at = (b * t + f) * per;
            out.extend_from_slice(&x.data()[at..at + per]);
        }
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}
