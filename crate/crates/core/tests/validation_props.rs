mod common;

use common::{generative_task, max_discrepancy, output_task, row};
use esncv::evaluation::{AccessLog, FeatureMode, SequenceTask, SeriesTask, TaskData, TaskKind};
use esncv::regression::NormalAccumulator;
use esncv::reservoir::{generate_reservoir, run_sequence, MatrixCollector, ReservoirParams, ReservoirState};
use esncv::validation::{
    plan_splits, run_efficient_cv, run_naive_cv, CvConfig, CvError, PlanRequest, PlanViolation,
    SchemeFamily, SchemeKind, SpaceVariant, Split, SplitPlan, StepRange,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_sequences(count: usize, seed: u64) -> SequenceTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..count {
        let label = i % 3;
        let len = rng.random_range(4..10);
        let seq = DMatrix::from_fn(2, len, |d, _| {
            let centre = [[0.5, -0.5], [-0.5, 0.2], [0.1, 0.6]][label][d];
            centre + rng.random_range(-0.4..0.4)
        });
        seqs.push(seq);
        labels.push(label);
    }
    SequenceTask::new(seqs, labels, 3, FeatureMode::LastState).unwrap()
}

fn scheme_strategy() -> impl Strategy<Value = SchemeKind> {
    proptest::sample::select(SchemeKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_plans_satisfy_invariants(
        scheme in scheme_strategy(),
        total in 50usize..3000,
        test_frac in 0.0f64..0.3,
        trans_frac in 0.0f64..0.2,
        k in 1usize..40,
        ratio in 0.2f64..0.8,
        valid_frac in 0.01f64..0.2,
    ) {
        let test_len = (total as f64 * test_frac) as usize;
        let transient = (total as f64 * trans_frac) as usize;
        let valid_len = ((total as f64 * valid_frac) as usize).max(1);
        let req = PlanRequest::new(scheme, total, test_len, k)
            .with_transient(transient)
            .with_min_ratio(ratio)
            .with_valid_len(valid_len);
        let Ok(plan) = plan_splits(&req) else { return Ok(()) };
        let violations = plan.check();
        let empty_cv = scheme == SchemeKind::KFoldCv && k == 1;
        if empty_cv {
            prop_assert!(plan.splits[0].train_ranges.is_empty());
            return Ok(());
        }
        prop_assert!(violations.is_empty(), "{:?}", violations);
        let expected_splits = if scheme == SchemeKind::Sv { 1 } else { k };
        prop_assert_eq!(plan.splits.len(), expected_splits);
        prop_assert_eq!(plan.trainval_end, total - test_len);
        for s in &plan.splits {
            prop_assert!(s.end() <= plan.trainval_end);
            prop_assert!(s.valid_range.start >= transient);
            match scheme.family() {
                SchemeFamily::Accumulative | SchemeFamily::Static => {
                    prop_assert_eq!(&s.train_ranges, &vec![StepRange::new(transient, s.valid_range.start)]);
                }
                SchemeFamily::WalkForward => {
                    prop_assert_eq!(s.train_ranges.len(), 1);
                    prop_assert_eq!(s.train_ranges[0].end, s.valid_range.start);
                    prop_assert_eq!(s.train_ranges[0].len(), plan.splits[0].train_ranges[0].len());
                }
                SchemeFamily::Cross => {
                    prop_assert_eq!(s.train_len() + s.valid_range.len(), plan.usable().len());
                }
            }
        }
        if scheme.is_k_fold() {
            prop_assert_eq!(plan.splits.last().unwrap().valid_range.end, plan.trainval_end);
        }
        if scheme.is_k_step() {
            prop_assert!(plan.splits.iter().all(|s| s.valid_range.len() == valid_len));
            prop_assert_eq!(plan.splits.last().unwrap().valid_range.end, plan.trainval_end);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn efficient_matches_naive_on_random_instances(
        scheme in scheme_strategy(),
        task in proptest::sample::select(vec![TaskKind::Output, TaskKind::Generative]),
        len in proptest::sample::select(vec![200usize, 500]),
        n_x in proptest::sample::select(vec![10usize, 30]),
        k in proptest::sample::select(vec![2usize, 5, 10]),
        streaming in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let data = match task {
            TaskKind::Generative => generative_task(len, seed),
            _ => output_task(len, seed),
        };
        let w = generate_reservoir(&ReservoirParams::new(n_x, 1, 1).with_seed(seed).with_leaking_rate(0.5)).unwrap();
        let req = PlanRequest::new(scheme, len, 20, k).with_transient(10).with_valid_len(15);
        let plan = plan_splits(&req).unwrap();
        let variant = if streaming { SpaceVariant::Streaming } else { SpaceVariant::FoldLocal };
        let cfg = CvConfig::new(vec![0.0, 1e-6, 1e-2]).with_variant(variant);
        let fast = run_efficient_cv(&w, &data, &plan, task, &cfg).unwrap();
        let slow = run_naive_cv(&w, &data, &plan, task, &cfg).unwrap();
        let (dw, de) = max_discrepancy(&fast, &slow);
        prop_assert!(dw <= 1e-8, "readouts differ by {:e}", dw);
        prop_assert!(de <= 1e-10, "errors differ by {:e}", de);
        prop_assert!(fast.counters.driven_updates <= 3 * plan.trainval_end as u64);
    }
}

#[test]
fn classification_matches_naive() {
    let task = toy_sequences(90, 4);
    let data = TaskData::Sequences(task);
    let w = generate_reservoir(&ReservoirParams::new(20, 2, 3).with_seed(2)).unwrap();
    let plan = plan_splits(&PlanRequest::new(SchemeKind::KFoldCv, 90, 0, 6)).unwrap();
    for variant in [SpaceVariant::FoldLocal, SpaceVariant::Streaming] {
        let cfg = CvConfig::new(vec![1e-6, 1e-2]).with_variant(variant);
        let fast = run_efficient_cv(&w, &data, &plan, TaskKind::Classification, &cfg).unwrap();
        let slow = run_naive_cv(&w, &data, &plan, TaskKind::Classification, &cfg).unwrap();
        let (dw, de) = max_discrepancy(&fast, &slow);
        assert!(dw <= 1e-8 && de <= 1e-10, "{dw:e} {de:e}");
        for (a, b) in fast.splits.iter().zip(&slow.splits) {
            for (fa, fb) in a.fits.iter().zip(&b.fits) {
                let (fa, fb) = (fa.as_ref().unwrap(), fb.as_ref().unwrap());
                assert_eq!(fa.report.misclassifications, fb.report.misclassifications);
            }
        }
        assert!(fast.counters.driven_updates < slow.counters.driven_updates);
    }
}

#[test]
fn single_fold_cross_validation_has_nothing_to_train_on() {
    let data = output_task(100, 1);
    let w = generate_reservoir(&ReservoirParams::new(10, 1, 1)).unwrap();
    let plan = plan_splits(&PlanRequest::new(SchemeKind::KFoldCv, 100, 10, 1)).unwrap();
    let cfg = CvConfig::new(vec![1e-6]);
    let err = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap_err();
    assert_eq!(err, CvError::EmptyTraining { split: 0 });
}

#[test]
fn overlapping_custom_plan_is_rejected() {
    let data = output_task(100, 1);
    let w = generate_reservoir(&ReservoirParams::new(10, 1, 1)).unwrap();
    let plan = SplitPlan::custom(
        SchemeKind::KFoldAv,
        100,
        90,
        5,
        vec![Split {
            train_ranges: vec![StepRange::new(5, 60)],
            valid_range: StepRange::new(50, 70),
        }],
    );
    let err = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &CvConfig::new(vec![1e-6])).unwrap_err();
    match err {
        CvError::InvalidPlan(v) => assert!(v.contains(&PlanViolation::TrainValidOverlap { split: 0 })),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn counters_follow_plan_arithmetic() {
    let data = output_task(400, 3);
    let w = generate_reservoir(&ReservoirParams::new(15, 1, 1)).unwrap();
    let cfg = CvConfig::new(vec![1e-6]);
    let plan = plan_splits(&PlanRequest::new(SchemeKind::Sv, 400, 20, 1).with_valid_len(30)).unwrap();
    let fast = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap();
    let slow = run_naive_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap();
    assert_eq!(fast.counters.driven_updates, 380);
    assert_eq!(slow.counters.driven_updates, 380);

    for k in [4, 8, 16] {
        let plan = plan_splits(&PlanRequest::new(SchemeKind::KFoldCv, 400, 20, k).with_transient(20)).unwrap();
        let fast = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap();
        let slow = run_naive_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap();
        let expected: u64 = plan.splits.iter().map(|s| s.end() as u64).sum();
        assert_eq!(slow.counters.driven_updates, expected);
        assert_eq!(fast.counters.driven_updates, 380);
        assert!(slow.counters.driven_updates > fast.counters.driven_updates);
    }
}

#[test]
fn global_statistics_cover_train_and_validation_steps() {
    let data = output_task(300, 9);
    let TaskData::Series(series) = &data else { unreachable!() };
    let w = generate_reservoir(&ReservoirParams::new(12, 1, 1).with_seed(9)).unwrap();
    let plan = plan_splits(&PlanRequest::new(SchemeKind::KFoldCv, 300, 20, 7).with_transient(14)).unwrap();
    let out = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &CvConfig::new(vec![1e-4])).unwrap();
    let mut collector = MatrixCollector::new();
    let inputs: Vec<Vec<f64>> = (0..280).map(|n| series.input(n).to_vec()).collect();
    run_sequence(&w, &ReservoirState::zeros(12), &inputs, &mut collector).unwrap();
    let x = collector.into_matrix();
    let y = series.target_block(0, 280);
    let u = plan.usable();
    let direct = NormalAccumulator::from_batch(
        &x.columns(u.start, u.len()).into_owned(),
        &y.columns(u.start, u.len()).into_owned(),
    )
    .unwrap();
    let global = out.global.unwrap();
    assert_eq!(global.count(), direct.count());
    assert!((global.s() - direct.s()).norm() <= 1e-10 * direct.s().norm());
    assert!((global.p() - direct.p()).norm() <= 1e-10 * direct.p().norm());
}

#[test]
fn model_selection_never_reads_the_test_block() {
    let log = AccessLog::new();
    let series: Vec<f64> = common::ar_series(301, 5);
    let task = SeriesTask::one_step_ahead(&row(&series)).unwrap().with_access_log(log.clone());
    let data = TaskData::Series(task);
    let w = generate_reservoir(&ReservoirParams::new(10, 1, 1)).unwrap();
    for scheme in SchemeKind::ALL {
        let plan = plan_splits(&PlanRequest::new(scheme, 300, 30, 4).with_transient(10).with_valid_len(20)).unwrap();
        for variant in [SpaceVariant::FoldLocal, SpaceVariant::Streaming] {
            for task in [TaskKind::Output, TaskKind::Generative] {
                log.reset();
                let cfg = CvConfig::new(vec![1e-6]).with_variant(variant).with_store_fold_states(false);
                run_efficient_cv(&w, &data, &plan, task, &cfg).unwrap();
                assert!(log.high_water() <= plan.trainval_end, "{scheme} read step {}", log.high_water() - 1);
            }
        }
    }
}

#[test]
fn generative_and_output_tasks_share_plans() {
    let data = generative_task(300, 8);
    let w = generate_reservoir(&ReservoirParams::new(10, 1, 1)).unwrap();
    let plan = plan_splits(&PlanRequest::new(SchemeKind::KStepFv, 300, 20, 3)).unwrap();
    let cfg = CvConfig::new(vec![1e-6]);
    let gen = run_efficient_cv(&w, &data, &plan, TaskKind::Generative, &cfg).unwrap();
    let out = run_efficient_cv(&w, &data, &plan, TaskKind::Output, &cfg).unwrap();
    // Same training statistics, different validation modes.
    for (a, b) in gen.splits.iter().zip(&out.splits) {
        assert_eq!(a.readout(0), b.readout(0));
    }
    assert_eq!(gen.counters.free_run_updates, 60);
    assert_eq!(out.counters.free_run_updates, 0);
}
