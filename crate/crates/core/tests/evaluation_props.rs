use esncv::evaluation::{classify_sequences, free_run, nrmse, FeatureMode};
use esncv::regression::{ridge_solve, NormalAccumulator, TrainedReadout};
use esncv::reservoir::{
    generate_reservoir, update_state, ExpandedState, ReservoirParams, ReservoirState,
    ReservoirWeights,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn separable_set(count: usize, seed: u64) -> (Vec<DMatrix<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..count {
        let label = i % 3;
        let angle = label as f64 * 2.0 * std::f64::consts::PI / 3.0;
        let len = rng.random_range(5..12);
        let seq = DMatrix::from_fn(2, len, |d, _| {
            let c = if d == 0 { angle.cos() } else { angle.sin() };
            0.8 * c + rng.random_range(-0.1..0.1)
        });
        seqs.push(seq);
        labels.push(label);
    }
    (seqs, labels)
}

fn train_classifier(w: &ReservoirWeights, seqs: &[DMatrix<f64>], labels: &[usize]) -> TrainedReadout {
    let mut acc = NormalAccumulator::new(w.n_r(), 3);
    for (seq, &label) in seqs.iter().zip(labels) {
        let mut state = ReservoirState::zeros(w.n_x());
        for j in 0..seq.ncols() {
            state = update_state(w, &state, seq.column(j).as_slice()).unwrap();
        }
        let last = seq.column(seq.ncols() - 1);
        let v = ExpandedState::new(last.as_slice(), &state.x);
        let mut target = [0.0; 3];
        target[label] = 1.0;
        acc.accumulate(v.as_slice(), &target).unwrap();
    }
    ridge_solve(&acc, 1e-6, true).unwrap()
}

#[test]
fn mean_prediction_scores_one() {
    let t = DMatrix::from_row_slice(1, 6, &[0.3, -1.0, 2.0, 0.7, 1.1, -0.4]);
    let mean = t.mean();
    let pred = DMatrix::from_element(1, 6, mean);
    assert!((nrmse(&pred, &t).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn free_run_equals_unrolled_updates() {
    let w = generate_reservoir(&ReservoirParams::new(12, 1, 1).with_seed(9).with_leaking_rate(0.7)).unwrap();
    let readout = TrainedReadout {
        w_out: DMatrix::from_fn(1, w.n_r(), |_, j| ((j as f64) * 0.37).sin() * 0.2),
        beta: 0.0,
        train_count: 1,
    };
    let seed = ReservoirState::from_vec((0..12).map(|i| (i as f64 * 0.21).cos() * 0.5).collect());
    let got = free_run(&w, &readout, &seed, &[0.4], 5, &[0], None).unwrap();

    let mut state = seed;
    let mut u = vec![0.4];
    for i in 0..5 {
        state = update_state(&w, &state, &u).unwrap();
        let y = readout.predict(ExpandedState::new(&u, &state.x).as_slice());
        assert_eq!(got[(0, i)], y[0]);
        u = vec![y[0]];
    }
}

#[test]
fn free_run_holds_a_constant() {
    let c = 0.5;
    let w = generate_reservoir(&ReservoirParams::new(30, 1, 1).with_seed(4).with_leaking_rate(0.6)).unwrap();
    let mut state = ReservoirState::zeros(30);
    let mut acc = NormalAccumulator::new(w.n_r(), 1);
    for n in 0..300 {
        state = update_state(&w, &state, &[c]).unwrap();
        if n >= 50 {
            acc.accumulate(ExpandedState::new(&[c], &state.x).as_slice(), &[c]).unwrap();
        }
    }
    let readout = ridge_solve(&acc, 1e-6, true).unwrap();
    let out = free_run(&w, &readout, &state, &[c], 100, &[0], None).unwrap();
    let worst = out.iter().map(|y| (y - c).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-3, "drifted by {worst:e}");
}

#[test]
fn separable_classes_are_all_recognized() {
    let w = generate_reservoir(&ReservoirParams::new(30, 2, 3).with_seed(1)).unwrap();
    let (train, train_labels) = separable_set(60, 1);
    let readout = train_classifier(&w, &train, &train_labels);
    let (test, test_labels) = separable_set(30, 2);
    let result = classify_sequences(&w, &readout, &test, Some(&test_labels), FeatureMode::LastState).unwrap();
    assert_eq!(result.misclassifications, Some(0));
    assert_eq!(result.labels, test_labels);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nrmse_is_scale_covariant(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..50),
        a in prop_oneof![-20.0f64..-0.05, 0.05f64..20.0],
        b in -100.0f64..100.0,
    ) {
        let pred = DMatrix::from_iterator(1, pairs.len(), pairs.iter().map(|p| p.0));
        let target = DMatrix::from_iterator(1, pairs.len(), pairs.iter().map(|p| p.1));
        let var = target.variance();
        prop_assume!(var > 1e-6);
        let base = nrmse(&pred, &target).unwrap();
        let scaled = nrmse(&pred.map(|v| a * v + b), &target.map(|v| a * v + b)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0), "{base} vs {scaled}");
    }

    #[test]
    fn classification_ignores_sequence_order(seed in 0u64..500, perm_seed in 0u64..500) {
        let w = generate_reservoir(&ReservoirParams::new(15, 2, 3).with_seed(seed)).unwrap();
        let (train, train_labels) = separable_set(30, seed);
        let readout = train_classifier(&w, &train, &train_labels);
        let (test, labels) = separable_set(20, seed + 1);
        let mut order: Vec<usize> = (0..test.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<DMatrix<f64>> = order.iter().map(|&i| test[i].clone()).collect();
        let shuffled_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = classify_sequences(&w, &readout, &test, Some(&labels), FeatureMode::LastState).unwrap();
        let b = classify_sequences(&w, &readout, &shuffled, Some(&shuffled_labels), FeatureMode::LastState).unwrap();
        prop_assert_eq!(a.misclassifications, b.misclassifications);
        for (pos, &i) in order.iter().enumerate() {
            prop_assert_eq!(b.labels[pos], a.labels[i]);
        }
    }
}
