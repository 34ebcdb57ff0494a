mod common;

use common::*;
use rand::Rng;
use reprog::experiment::score;
use reprog::foundation::{train_foundation, FoundationModel, LabeledSample, TcnArch, TimeWindow, TrainConfig};
use reprog::nn::{mlp_forward, mse, tcn_forward, Tensor};

#[test]
fn predict_equals_mlp_over_tcn() {
    let mut r = rng(3);
    let model = FoundationModel::init(&small_arch(), 3, 6, 2, &[0, 1, 2], 11).unwrap();
    for task in 0..3 {
        let x = uniform(&mut r, &[3, 6]);
        let oracle = mlp_forward(&tcn_forward(&x, model.shared()).unwrap(), model.head(task).unwrap()).unwrap();
        let w = TimeWindow {
            values: x,
            task,
            time_index: 5,
        };
        assert_eq!(model.predict(&w).unwrap(), oracle);
    }
}

/// Targets are `a_t · x[:, T-1] + b_t`, a different linear teacher per task.
fn linear_teacher(n: usize, seed: u64) -> Vec<LabeledSample> {
    let mut r = rng(seed);
    let coef = [([0.8, -0.5, 0.3], 0.2), ([-0.4, 0.6, 0.9], -0.3)];
    (0..n)
        .map(|i| {
            let task = (i % 2) as u32;
            let values = uniform(&mut r, &[3, 6]);
            let (a, b) = coef[task as usize];
            let y: f64 = (0..3).map(|c| a[c] * values.at2(c, 5)).sum::<f64>() + b;
            LabeledSample {
                window: TimeWindow {
                    values,
                    task,
                    time_index: i,
                },
                target: Tensor::vector(vec![y]),
            }
        })
        .collect()
}

#[test]
fn learns_a_linear_teacher_per_task() {
    let train = linear_teacher(600, 1);
    let test = linear_teacher(200, 2);
    let arch = TcnArch {
        channels: vec![8],
        kernel_sizes: vec![2],
        dilations: vec![1],
        head_hidden: 16,
    };
    let cfg = TrainConfig {
        epochs: 80,
        batch_size: 16,
        lr: 3e-3,
        seed: 5,
    };
    let (model, _) = train_foundation(&train, &[0, 1], &arch, &cfg).unwrap();
    for task in 0..2 {
        let samples: Vec<LabeledSample> = test.iter().filter(|s| s.window.task == task).cloned().collect();
        let r2 = score(&model, &samples).unwrap();
        assert!(r2 >= 0.99, "task {task}: held-out R² {r2}");
    }
}

#[test]
fn memorizes_a_single_sample() {
    let mut r = rng(9);
    let sample = random_samples(&mut r, 1, 3, 6, &[0]);
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 1,
        lr: 1e-2,
        seed: 1,
    };
    let (model, history) = train_foundation(&sample, &[0], &small_arch(), &cfg).unwrap();
    let loss = mse(&model.predict(&sample[0].window).unwrap(), &sample[0].target).unwrap();
    assert!(loss < 1e-4, "loss {loss}, history tail {:?}", &history[history.len() - 3..]);
}

#[test]
fn training_is_deterministic() {
    let mut r = rng(4);
    let data = random_samples(&mut r, 40, 3, 6, &[0, 1]);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr: 1e-3,
        seed: 21,
    };
    let (a, ha) = train_foundation(&data, &[0, 1], &small_arch(), &cfg).unwrap();
    let (b, hb) = train_foundation(&data, &[0, 1], &small_arch(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(ha, hb);
}

#[test]
fn freezing_preserves_predictions() {
    let mut r = rng(6);
    let model = FoundationModel::init(&small_arch(), 3, 6, 1, &[0, 1], 2).unwrap();
    let windows = random_samples(&mut r, 6, 3, 6, &[0, 1]);
    let before: Vec<Tensor> = windows.iter().map(|s| model.predict(&s.window).unwrap()).collect();
    let frozen = model.clone().freeze();
    let after: Vec<Tensor> = windows.iter().map(|s| frozen.predict(&s.window).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(model.checksum(), frozen.checksum());
}

#[test]
fn heads_are_isolated() {
    let mut r = rng(8);
    let mut model = FoundationModel::init(&small_arch(), 3, 6, 1, &[0, 1], 2).unwrap();
    let windows = random_samples(&mut r, 4, 3, 6, &[0]);
    let before: Vec<Tensor> = windows.iter().map(|s| model.predict(&s.window).unwrap()).collect();
    let head = model.head_mut(1).unwrap();
    for v in head.w1.data_mut().iter_mut().chain(head.b2.data_mut()) {
        *v += r.random_range(-1.0..1.0);
    }
    let after: Vec<Tensor> = windows.iter().map(|s| model.predict(&s.window).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn clamping_the_shared_core_restores_other_tasks() {
    let mut r = rng(12);
    let data = random_samples(&mut r, 24, 3, 6, &[0, 1]);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-2,
        seed: 3,
    };
    let base = FoundationModel::init(&small_arch(), 3, 6, 1, &[0, 1], cfg.seed).unwrap();
    let (trained, _) = train_foundation(&data, &[0, 1], &small_arch(), &cfg).unwrap();
    assert_ne!(base.checksum(), trained.checksum());

    // Trained shared core and task-0 head, original task-1 head.
    let names: Vec<String> = base.named_params().into_iter().map(|(n, _)| n).collect();
    let mixed: Vec<Tensor> = names
        .iter()
        .zip(base.named_params().into_iter().zip(trained.named_params()))
        .map(|(n, ((_, b), (_, t)))| if n.starts_with("head.1.") { b.clone() } else { t.clone() })
        .collect();
    let mixed = base.with_params(&mixed).unwrap();
    let probe = TimeWindow {
        values: uniform(&mut r, &[3, 6]),
        task: 1,
        time_index: 5,
    };
    assert_ne!(mixed.predict(&probe).unwrap(), base.predict(&probe).unwrap());

    // Restoring the shared core brings task 1 back exactly.
    let clamped: Vec<Tensor> = names
        .iter()
        .zip(base.named_params().into_iter().zip(mixed.named_params()))
        .map(|(n, ((_, b), (_, m)))| if n.starts_with("shared.") { b.clone() } else { m.clone() })
        .collect();
    let clamped = base.with_params(&clamped).unwrap();
    assert_eq!(clamped.predict(&probe).unwrap(), base.predict(&probe).unwrap());
}

#[test]
fn frozen_input_gradient_is_nonzero_and_matches_differences() {
    let mut r = rng(15);
    let model = FoundationModel::init(&small_arch(), 3, 6, 1, &[0], 4).unwrap().freeze();
    let x = TimeWindow {
        values: uniform(&mut r, &[3, 6]),
        task: 0,
        time_index: 5,
    };
    let before = model.checksum();
    let max = check_input_gradient(&model, &x, &Tensor::vector(vec![2.0])).unwrap();
    assert!(max > 0.0);
    assert_eq!(model.checksum(), before);
}
