mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vast::{shift, shift_vjp, ShiftPolicy, ShiftSpec, Tensor};

use common::{oracle_shift, random_data, random_dims, random_policy, rel_diff};

fn case(seed: u64) -> (ShiftPolicy, ShiftSpec, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = random_dims(&mut rng);
    let policy = random_policy(&mut rng);
    let spec = ShiftSpec::new(policy.clone(), dims[4]).unwrap();
    let x = random_data(&dims, &mut rng);
    let y = random_data(&dims, &mut rng);
    (policy, spec, x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn forward_and_adjoint_match_the_oracle(seed in any::<u64>()) {
        let (policy, spec, x, y) = case(seed);
        prop_assert!(shift(&x, &spec).unwrap().bitwise_eq(&oracle_shift(&x, &policy, 1)));
        prop_assert!(shift_vjp(&y, &spec).unwrap().bitwise_eq(&oracle_shift(&y, &policy, -1)));
    }

    #[test]
    fn vjp_is_the_adjoint(seed in any::<u64>()) {
        let (_, spec, x, y) = case(seed);
        let lhs = shift(&x, &spec).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&shift_vjp(&y, &spec).unwrap()).unwrap();
        prop_assert!(rel_diff(lhs, rhs) <= 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn shift_only_moves_values(seed in any::<u64>()) {
        let (_, spec, x, _) = case(seed);
        let y = shift(&x, &spec).unwrap();
        let sq = |t: &Tensor| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        prop_assert!(sq(&y) <= sq(&x) + 1e-12);
        // Every output value is either a zero fill or some input value.
        let mut pool: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        pool.sort_unstable();
        for v in y.data() {
            prop_assert!(*v == 0.0 || pool.binary_search(&v.to_bits()).is_ok());
        }
    }

    #[test]
    fn shift_is_linear(seed in any::<u64>(), a in -4.0f32..4.0) {
        let (_, spec, x, y) = case(seed);
        let combo = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let lhs = shift(&combo, &spec).unwrap();
        let (sx, sy) = (shift(&x, &spec).unwrap(), shift(&y, &spec).unwrap());
        let rhs = Tensor::from_vec(x.shape(), sx.data().iter().zip(sy.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        prop_assert!(lhs.data().iter().zip(rhs.data()).all(|(p, q)| p == q));
    }

    #[test]
    fn partition_is_contiguous_and_bounded(seed in any::<u64>()) {
        let (policy, spec, _, _) = case(seed);
        let groups = spec.partition().unwrap();
        let mut next = 0;
        for g in &groups {
            prop_assert_eq!(g.channels.start, next);
            prop_assert!(!g.channels.is_empty());
            prop_assert_eq!(g.offset.unsigned_abs(), policy.offset);
            next = g.channels.end;
        }
        prop_assert!(next <= policy.fraction.floor_mul(spec.channels));
        for pair in groups.windows(2) {
            prop_assert!(pair[0].axis <= pair[1].axis);
        }
    }
}

#[test]
fn default_policies_split_as_documented() {
    // 64 channels, video: budget 32, 10 per axis as +5/-5, so 30 move.
    let groups = ShiftSpec::video(64).unwrap().partition().unwrap();
    let sizes: Vec<(usize, isize)> = groups.iter().map(|g| (g.channels.len(), g.offset)).collect();
    assert_eq!(sizes, vec![(5, 1), (5, -1), (5, 1), (5, -1), (5, 1), (5, -1)]);
    // 7 channels, image: 2 shifted, one per axis, all positive.
    let groups = ShiftSpec::image(7).unwrap().partition().unwrap();
    let sizes: Vec<(usize, isize)> = groups.iter().map(|g| (g.channels.len(), g.offset)).collect();
    assert_eq!(sizes, vec![(1, 1), (1, 1)]);
}
