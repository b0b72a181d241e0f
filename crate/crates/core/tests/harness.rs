mod common;

use vast::harness::{
    evaluate, gen_toy_dataset, overfit_batch, predict_labels, train, Split, TaskKind, ToyTask,
    TrainConfig,
};
use vast::{build_model, ModelSpec, Tensor};

use common::reverse_frames;

fn small_task(samples: usize, seed: u64) -> ToyTask {
    ToyTask { frames: 4, height: 16, width: 16, ..ToyTask::temporal_order(samples, seed) }
}

fn micro(task: &ToyTask) -> ModelSpec {
    ModelSpec::named("vast-micro")
        .unwrap()
        .with_input(task.frames, task.height, task.width)
        .with_classes(task.num_classes)
}

#[test]
fn temporal_order_pairs_are_reversal_twins() {
    let data = gen_toy_dataset(&ToyTask::temporal_order(64, 1)).unwrap();
    for split in [&data.train, &data.val] {
        assert_eq!(split.len() % 2, 0);
        // Each clip's frame-reversed copy is in the same split with the other label.
        for i in 0..split.len() {
            let rev = reverse_frames(&split.sample(i).unwrap().reshape(&[1, 8, 32, 32, 3]).unwrap());
            let twin = (0..split.len()).find(|&j| {
                split.sample(j).unwrap().reshape(&[1, 8, 32, 32, 3]).unwrap().bitwise_eq(&rev)
            });
            let j = twin.unwrap_or_else(|| panic!("clip {i} has no reversed twin"));
            assert_ne!(split.labels[i], split.labels[j]);
        }
    }
}

#[test]
fn classes_are_balanced() {
    let task = ToyTask::temporal_order(200, 4);
    let data = gen_toy_dataset(&task).unwrap();
    for split in [&data.train, &data.val] {
        let h = split.class_histogram(2);
        assert!(h[0].abs_diff(h[1]) <= 1, "{h:?}");
    }
    assert_eq!(data.train.len() + data.val.len(), 200);

    let task = ToyTask::static_pattern(4, 203, 4);
    let data = gen_toy_dataset(&task).unwrap();
    let mut total = data.train.class_histogram(4);
    for (t, v) in total.iter_mut().zip(data.val.class_histogram(4)) {
        *t += v;
    }
    let (lo, hi) = (total.iter().min().unwrap(), total.iter().max().unwrap());
    assert!(hi - lo <= 1, "{total:?}");
}

#[test]
fn generation_is_seeded() {
    let a = gen_toy_dataset(&small_task(40, 9)).unwrap();
    let b = gen_toy_dataset(&small_task(40, 9)).unwrap();
    let c = gen_toy_dataset(&small_task(40, 10)).unwrap();
    assert!(a.train.inputs.bitwise_eq(&b.train.inputs));
    assert_eq!(a.train.labels, b.train.labels);
    assert!(!a.train.inputs.bitwise_eq(&c.train.inputs));
}

#[test]
fn dataset_round_trips_through_tnsr() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.tnsr");
    let task = small_task(20, 2);
    let data = gen_toy_dataset(&task).unwrap();
    data.save(&path).unwrap();
    let back = vast::harness::ToyDataset::load(&path, task).unwrap();
    assert_eq!(back, data);
}

#[test]
fn invalid_tasks_are_rejected() {
    assert!(gen_toy_dataset(&ToyTask::temporal_order(1, 0)).is_err());
    assert!(gen_toy_dataset(&ToyTask { num_classes: 3, ..ToyTask::temporal_order(30, 0) }).is_err());
    assert!(gen_toy_dataset(&ToyTask { height: 2, ..ToyTask::temporal_order(30, 0) }).is_err());
    assert_eq!("static-pattern".parse::<TaskKind>().unwrap(), TaskKind::StaticPattern);
    assert!("order".parse::<TaskKind>().is_err());
}

#[test]
fn overfits_a_small_batch() {
    let task = small_task(8, 0);
    let data = gen_toy_dataset(&ToyTask { samples: 10, ..task.clone() }).unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let (x, y) = data.train.batch(&idx).unwrap();
    let mut model = build_model(&micro(&task), 0).unwrap();
    let losses = overfit_batch(&mut model, &x, &y, 5e-3, 200, 0).unwrap();
    assert!(losses.len() <= 200);
    assert_eq!(predict_labels(&model, &x).unwrap(), y);
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let task = small_task(24, 1);
    let data = gen_toy_dataset(&task).unwrap();
    let mut model = build_model(&micro(&task), 3).unwrap();
    let before = model.params.named_values();
    let cfg = TrainConfig { lr: 0.0, min_lr: 0.0, epochs: 2, batch_size: 8, warmup_steps: 1, ..TrainConfig::default() };
    let log = train(&mut model, &data, &cfg).unwrap();
    assert!(!log.step_losses.is_empty());
    for ((_, a), (_, b)) in before.iter().zip(model.params.named_values().iter()) {
        assert!(a.bitwise_eq(b));
    }
}

#[test]
fn training_is_reproducible() {
    let task = small_task(24, 1);
    let data = gen_toy_dataset(&task).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, warmup_steps: 2, ..TrainConfig::default() };
    let run = || {
        let mut model = build_model(&micro(&task), 3).unwrap();
        train(&mut model, &data, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.step_losses.len(), cfg.epochs * cfg.steps_per_epoch(data.train.len()));
    assert!(a.step_losses.iter().map(|v| v.to_bits()).eq(b.step_losses.iter().map(|v| v.to_bits())));
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
}

#[test]
fn log_has_one_row_per_epoch_and_split() {
    let task = small_task(20, 5);
    let data = gen_toy_dataset(&task).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 8, warmup_steps: 1, ..TrainConfig::default() };
    let mut model = build_model(&micro(&task), 0).unwrap();
    let log = train(&mut model, &data, &cfg).unwrap();
    let csv = log.to_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,split,loss,acc"));
    assert_eq!(lines.count(), 6);
    assert_eq!(log.last(Split::Val).unwrap().epoch, 2);
    let rows: Vec<_> = log.rows.iter().filter(|r| r.split == Split::Train).collect();
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.acc) && r.loss.is_finite()));
}

#[test]
fn untrained_model_sits_near_chance() {
    let data = gen_toy_dataset(&ToyTask { samples: 300, ..small_task(0, 8) }).unwrap();
    let model = build_model(&micro(&data.task), 12).unwrap();
    let eval = evaluate(&model, &data.train).unwrap();
    assert!(data.train.len() >= 200);
    assert!((0.3..=0.7).contains(&eval.accuracy), "{}", eval.accuracy);
}

#[test]
fn accuracy_is_the_confusion_trace_over_total() {
    let task = ToyTask::static_pattern(3, 60, 2);
    let task = ToyTask { frames: 2, height: 8, width: 8, ..task };
    let data = gen_toy_dataset(&task).unwrap();
    let model = build_model(&micro(&task), 1).unwrap();
    let eval = evaluate(&model, &data.train).unwrap();
    assert_eq!(eval.total(), data.train.len());
    assert_eq!(eval.confusion.len(), 3);
    assert_eq!(eval.accuracy, eval.trace() as f64 / eval.total() as f64);
    let pred = predict_labels(&model, &data.train.inputs).unwrap();
    let hits = pred.iter().zip(&data.train.labels).filter(|(p, l)| p == l).count();
    assert_eq!(hits, eval.trace());
}

#[test]
fn diverging_training_reports_the_step() {
    let task = small_task(16, 0);
    let mut data = gen_toy_dataset(&task).unwrap();
    let shape = data.train.inputs.shape().to_vec();
    data.train.inputs = Tensor::full(&shape, f32::NAN).unwrap();
    let mut model = build_model(&micro(&task), 0).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, warmup_steps: 1, ..TrainConfig::default() };
    match train(&mut model, &data, &cfg) {
        Err(vast::Error::Diverged { step, .. }) => assert_eq!(step, 0),
        Err(vast::Error::NonFinite { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn every_block_variant_trains() {
    use vast::BlockVariant::*;
    let task = small_task(8, 6);
    let data = gen_toy_dataset(&ToyTask { samples: 10, ..task.clone() }).unwrap();
    let (x, y) = data.train.batch(&(0..8).collect::<Vec<_>>()).unwrap();
    let mut counts = Vec::new();
    for row in [R1, R2, R3, R4, R5, R6] {
        let mut spec = micro(&task);
        spec.block_variant = row;
        let mut model = build_model(&spec, 0).unwrap();
        counts.push(model.num_params());
        let losses = overfit_batch(&mut model, &x, &y, 5e-3, 30, 0).unwrap();
        assert!(losses.last().unwrap() < &(0.8 * losses[0]), "{row:?}: {losses:?}");
    }
    // The bare-shift mixer is the lightest; the extra MLP shift adds no weights.
    assert!(counts[5] < counts[0]);
    assert_eq!(counts[3], counts[4]);
}
