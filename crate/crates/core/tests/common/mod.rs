#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprog::config::ExperimentConfig;
use reprog::foundation::{FoundationModel, LabeledSample, TcnArch, TimeWindow, TrainConfig};
use reprog::nn::{mse, Graph, Tensor};
use reprog::refurbish::{
    batch_loss, batch_loss_graph, AmputeeTrainingTriple, RefurbishArch, RefurbishModel,
    RefurbishTrainConfig,
};
use reprog::template::TemplateConfig;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (REL_TOL * analytic.abs().max(numeric.abs())).max(ABS_FLOOR)
}

/// Central differences of `f` with respect to every element of every tensor.
pub fn numeric_grads(params: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].shape());
        for j in 0..params[i].numel() {
            let mut plus = params.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = params.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            g.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Compares elementwise; returns the number of entries checked.
pub fn compare(what: &str, analytic: &[Tensor], numeric: &[Tensor]) -> Result<usize, String> {
    let mut n = 0;
    for (i, (a, b)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != b.shape() {
            return Err(format!("{what}: tensor {i} shape {:?} vs {:?}", a.shape(), b.shape()));
        }
        for (j, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            if !close(*x, *y) {
                return Err(format!("{what}: tensor {i} element {j}: analytic {x:e} numeric {y:e}"));
            }
            n += 1;
        }
    }
    Ok(n)
}

pub fn small_arch() -> TcnArch {
    TcnArch {
        channels: vec![4, 4],
        kernel_sizes: vec![2, 3],
        dilations: vec![1, 2],
        head_hidden: 5,
    }
}

pub fn random_samples(rng: &mut ChaCha8Rng, n: usize, c: usize, t: usize, tasks: &[u32]) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| LabeledSample {
            window: TimeWindow {
                values: uniform(rng, &[c, t]),
                task: tasks[i % tasks.len()],
                time_index: t - 1 + i,
            },
            target: uniform(rng, &[1]),
        })
        .collect()
}

/// Replaces every parameter, biases included, with uniform draws. Zero biases
/// from init can put a ReLU input exactly on its kink, where central
/// differences do not estimate the (sub)gradient.
pub fn randomized<'a>(rng: &mut ChaCha8Rng, params: impl IntoIterator<Item = (String, &'a Tensor)>) -> Vec<Tensor> {
    params.into_iter().map(|(_, p)| uniform(rng, p.shape())).collect()
}

fn model_loss(model: &FoundationModel, batch: &[LabeledSample]) -> f64 {
    batch
        .iter()
        .map(|s| mse(&model.predict(&s.window).unwrap(), &s.target).unwrap())
        .sum::<f64>()
        / batch.len() as f64
}

/// Mean-MSE parameter gradients of a TCN + heads model against finite differences.
pub fn check_tcn_model(seed: u64, tasks: &[u32]) -> Result<usize, String> {
    let mut r = rng(seed);
    let (c, t) = (3, 6);
    let model = FoundationModel::init(&small_arch(), c, t, 1, tasks, seed).map_err(|e| e.to_string())?;
    let model = model.with_params(&randomized(&mut r, model.named_params())).map_err(|e| e.to_string())?;
    let batch = random_samples(&mut r, 2 * tasks.len(), c, t, tasks);

    let mut g = Graph::new();
    let vars = model.leaves(&mut g, true);
    let mut losses = Vec::new();
    for s in &batch {
        let x = g.constant(s.window.values.clone());
        let y = model.forward_graph(&mut g, &vars, x, s.window.task).unwrap();
        let tv = g.constant(s.target.clone());
        losses.push(g.mse(y, tv).unwrap());
    }
    let total = g.sum(&losses).unwrap();
    let loss = g.scale(total, 1.0 / batch.len() as f64);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.ordered().into_iter().map(|v| grads.get_or_zeros(v, g.value(v))).collect();

    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, p)| p.clone()).collect();
    let numeric = numeric_grads(&params, |p| model_loss(&model.with_params(p).unwrap(), &batch));
    compare("tcn model", &analytic, &numeric)
}

pub fn refurbish_arch() -> RefurbishArch {
    RefurbishArch {
        channels: vec![4],
        kernel_sizes: vec![2],
        dilations: vec![1],
    }
}

pub fn random_triples(rng: &mut ChaCha8Rng, n: usize, c: usize, t: usize, task: u32) -> Vec<AmputeeTrainingTriple> {
    (0..n)
        .map(|i| AmputeeTrainingTriple {
            x_amp: TimeWindow {
                values: uniform(rng, &[c, t]),
                task,
                time_index: i,
            },
            x_corr: TimeWindow {
                values: uniform(rng, &[c, t]),
                task,
                time_index: i,
            },
            y_amp: uniform(rng, &[1]),
        })
        .collect()
}

/// Gradients of `mse(h(x), x_corr)` with respect to `Θ_h`.
pub fn check_refurbish(seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let (c, t) = (3, 5);
    let h = RefurbishModel::init(&refurbish_arch(), c, t, seed).map_err(|e| e.to_string())?;
    let h = h.with_params(&randomized(&mut r, h.named_params())).map_err(|e| e.to_string())?;
    let triples = random_triples(&mut r, 3, c, t, 0);

    let mut g = Graph::new();
    let vars = h.leaves(&mut g);
    let mut losses = Vec::new();
    for tr in &triples {
        let x = g.constant(tr.x_amp.values.clone());
        let y = h.forward_graph(&mut g, &vars, x).unwrap();
        let target = g.constant(tr.x_corr.values.clone());
        losses.push(g.mse(y, target).unwrap());
    }
    let total = g.sum(&losses).unwrap();
    let loss = g.scale(total, 1.0 / triples.len() as f64);
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.ordered().into_iter().map(|v| grads.get_or_zeros(v, g.value(v))).collect();

    let params: Vec<Tensor> = h.named_params().into_iter().map(|(_, p)| p.clone()).collect();
    let numeric = numeric_grads(&params, |p| {
        let hp = h.with_params(p).unwrap();
        triples
            .iter()
            .map(|tr| mse(&hp.forward_values(&tr.x_amp.values).unwrap(), &tr.x_corr.values).unwrap())
            .sum::<f64>()
            / triples.len() as f64
    });
    compare("refurbish", &analytic, &numeric)
}

/// The dual loss through a frozen foundation: graph gradients for `Θ_h`
/// against differences of the plain-forward batch loss.
pub fn check_composed(seed: u64) -> Result<usize, String> {
    let mut r = rng(seed);
    let (c, t) = (3, 6);
    let g_open = FoundationModel::init(&small_arch(), c, t, 1, &[0, 1], seed ^ 0x77).map_err(|e| e.to_string())?;
    let g_frozen = g_open
        .with_params(&randomized(&mut r, g_open.named_params()))
        .map_err(|e| e.to_string())?
        .freeze();
    let h = RefurbishModel::init(&refurbish_arch(), c, t, seed).map_err(|e| e.to_string())?;
    let h = h.with_params(&randomized(&mut r, h.named_params())).map_err(|e| e.to_string())?;
    let triples = random_triples(&mut r, 3, c, t, 1);
    let cfg = RefurbishTrainConfig {
        alpha: r.random_range(0.1..2.0),
        beta: r.random_range(0.1..30.0),
        ..Default::default()
    };

    let mut g = Graph::new();
    let g_vars = g_frozen.leaves(&mut g, false);
    let h_vars = h.leaves(&mut g);
    let refs: Vec<&AmputeeTrainingTriple> = triples.iter().collect();
    let loss = batch_loss_graph(&mut g, &refs, &h, &h_vars, &g_frozen, &g_vars, &cfg).unwrap();
    let plain = batch_loss(&triples, &h, &g_frozen, &cfg).unwrap();
    let graph_value = g.value(loss).data()[0];
    if !close(graph_value, plain) {
        return Err(format!("composed: graph loss {graph_value} vs plain {plain}"));
    }
    let grads = g.backward(loss).unwrap();
    for v in g_vars.ordered() {
        if grads.get(v).is_some() {
            return Err("composed: frozen parameter received a gradient".into());
        }
    }
    let analytic: Vec<Tensor> = h_vars.ordered().into_iter().map(|v| grads.get_or_zeros(v, g.value(v))).collect();
    let params: Vec<Tensor> = h.named_params().into_iter().map(|(_, p)| p.clone()).collect();
    let numeric = numeric_grads(&params, |p| batch_loss(&triples, &h.with_params(p).unwrap(), &g_frozen, &cfg).unwrap());
    compare("composed g∘h", &analytic, &numeric)
}

/// Input gradient of `mse(predict(g, x), y)` for a frozen model; returns
/// the gradient's max magnitude after checking it.
pub fn check_input_gradient(g_frozen: &FoundationModel, x: &TimeWindow, y: &Tensor) -> Result<f64, String> {
    let (_, analytic) = g_frozen.input_gradient(x, y).map_err(|e| e.to_string())?;
    let numeric = numeric_grads(std::slice::from_ref(&x.values), |v| {
        mse(&g_frozen.predict_values(&v[0], x.task).unwrap(), y).unwrap()
    });
    compare("input gradient", std::slice::from_ref(&analytic), &numeric)?;
    Ok(analytic.data().iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Brute-force scan of the matching cost, smallest index on ties.
pub fn brute_force_match(outputs: &[f64], y_seq: &[f64], m: usize) -> usize {
    let n = outputs.len();
    let mut best = (f64::INFINITY, usize::MAX);
    for i in m..n - m {
        let mut cost = 0.0;
        for (off, y) in y_seq.iter().enumerate() {
            cost += (outputs[i + off - m] - y).abs();
        }
        if cost < best.0 {
            best = (cost, i);
        }
    }
    best.1
}

/// Small but complete experiment for end-to-end tests.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.synth.able_subjects = 3;
    cfg.synth.amputee_subjects = 2;
    cfg.synth.able_cycles = 6;
    cfg.synth.amputee_cycles = 8;
    cfg.window_len = 8;
    cfg.foundation_arch = TcnArch {
        channels: vec![6, 6],
        kernel_sizes: vec![2, 2],
        dilations: vec![1, 2],
        head_hidden: 6,
    };
    cfg.direct_arch = cfg.foundation_arch.clone();
    cfg.foundation_train = TrainConfig {
        epochs: 2,
        batch_size: 32,
        lr: 3e-3,
        seed: 0,
    };
    cfg.direct_train = TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr: 3e-3,
        seed: 0,
    };
    cfg.refurbish_arch = RefurbishArch {
        channels: vec![4],
        kernel_sizes: vec![2],
        dilations: vec![1],
    };
    cfg.refurbish.epochs = 3;
    cfg.ratios = vec![0.2, 0.4];
    cfg.cross_ratio = 0.2;
    cfg.template = TemplateConfig::default();
    cfg.propagate_seed();
    cfg.validate().unwrap();
    cfg
}

pub fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
