//! Invariants as properties over random inputs.

use exswitch::field::{ValueField, ValueFunction};
use exswitch::grid::SpaceTimeGrid;
use exswitch::model::{put_options, regulator};
use exswitch::rl::{
    checkpoint_load, checkpoint_save, policy_matrix, Activation, NeuralValue, RegimeEncoding,
    Schedule, SeedLineage,
};
use exswitch::sim::sample_transition;
use proptest::prelude::*;

fn encoding() -> impl Strategy<Value = RegimeEncoding> {
    prop_oneof![Just(RegimeEncoding::OneHot), Just(RegimeEncoding::Heads)]
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Tanh)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn terminal_constraint_holds_for_every_network(
        seed in any::<u64>(), enc in encoding(), act in activation(), width in 1usize..12,
        x in -5.0f64..5.0, i in 0usize..2,
    ) {
        let model = regulator();
        let net = NeuralValue::for_model(&model, &[(width, act)], enc, seed).unwrap();
        prop_assert_eq!(ValueFunction::value(&net, 1.0, &[x], i), model.terminal_reward(&[x]));
    }

    #[test]
    fn derived_generators_are_valid(
        seed in any::<u64>(), t in 0.0f64..1.0, a in 0.0f64..3.0, b in 0.0f64..3.0,
    ) {
        let model = put_options();
        let net = NeuralValue::for_model(&model, &[(8, Activation::Tanh)], RegimeEncoding::OneHot, seed).unwrap();
        let q = policy_matrix(&net, &model, t, &[a, b]).unwrap();
        for i in 0..3 {
            let row = &q[i * 3..i * 3 + 3];
            prop_assert!(row.iter().enumerate().all(|(j, r)| j == i || *r >= 0.0));
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn transitions_stay_on_the_support(
        r1 in 0.0f64..200.0, r2 in 0.0f64..200.0, dt in 1e-4f64..0.1, u in 0.0f64..1.0, i in 0usize..3,
    ) {
        let mut row = vec![0.0; 3];
        let others: Vec<usize> = (0..3).filter(|j| *j != i).collect();
        row[others[0]] = r1;
        row[others[1]] = r2;
        row[i] = -(r1 + r2);
        let (j, clamped) = sample_transition(&row, i, dt, u);
        prop_assert_eq!(clamped, (r1 + r2) * dt > 1.0);
        prop_assert!(j == i || row[j] > 0.0);
        if !clamped && u >= (r1 + r2) * dt {
            prop_assert_eq!(j, i);
        }
    }

    #[test]
    fn robbins_monro_rates_are_positive_and_decreasing(
        a in 0.01f64..100.0, b in 0.01f64..100.0, nu in 0.01f64..1.0, i in 1usize..100_000,
    ) {
        let s = Schedule::RobbinsMonro { a, b, nu };
        prop_assert!(s.validate().is_ok());
        prop_assert!(s.rate(i) > 0.0);
        prop_assert!(s.rate(i + 1) < s.rate(i));
    }

    #[test]
    fn interpolation_stays_within_node_values(
        t in 0.0f64..1.0, x in -2.0f64..2.0, i in 0usize..2, c in -3.0f64..3.0,
    ) {
        let g = SpaceTimeGrid::uniform_1d(1.0, 10, -2.0, 2.0, 17).unwrap();
        let f = ValueField::from_fn(g, 2, |t, x, i| c * (x[0] * x[0] + t) + i as f64);
        let v = f.interpolate(t, &[x], i);
        let lo = f.values().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), enc in encoding(), width in 1usize..40) {
        let model = regulator();
        let net = NeuralValue::for_model(&model, &[(width, Activation::Tanh), (width, Activation::Relu)], enc, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let lineage = SeedLineage { init_seed: seed, ..Default::default() };
        let digest = checkpoint_save(&p, net.network(), enc, &model.hash(), &lineage).unwrap();
        let ck = checkpoint_load(&p, Some(net.network().architecture()), Some(&model.hash())).unwrap();
        prop_assert_eq!(ck.digest, digest);
        prop_assert_eq!(ck.encoding, enc);
        let a: Vec<u64> = ck.params.xi().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = net.network().xi().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
    }
}
