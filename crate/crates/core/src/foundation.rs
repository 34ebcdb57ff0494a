//! Multi-task foundation model: a shared TCN core feeding one two-layer MLP
//! head per locomotion task. Trained on able-bodied windows, then frozen.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    check_same_shape, conv_leaves, mlp_forward, mlp_graph, mlp_leaves, tcn_forward, tcn_graph, Adam, AdamConfig,
    ConvLayerParams, ConvVars, Graph, MlpParams, MlpVars, Tensor, Var,
};
use crate::persist::{params_checksum, Artifact};

pub type TaskId = u32;

/// One model input: `[channels × window_len]` sensor values for a task at
/// stream position `time_index` (the index of the window's last sample).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWindow {
    pub values: Tensor,
    pub task: TaskId,
    pub time_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub window: TimeWindow,
    /// Motion variable one step after the window's last sample.
    pub target: Tensor,
}

/// Shape of a TCN core plus the hidden width of the MLP heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnArch {
    pub channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dilations: Vec<usize>,
    pub head_hidden: usize,
}

impl TcnArch {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::config(format!("{prefix}.channels"), "at least one layer"));
        }
        if self.kernel_sizes.len() != self.channels.len() {
            return Err(Error::config(
                format!("{prefix}.kernel_sizes"),
                "one entry per layer",
            ));
        }
        if self.dilations.len() != self.channels.len() {
            return Err(Error::config(format!("{prefix}.dilations"), "one entry per layer"));
        }
        let positive = |name: &str, v: &[usize]| {
            if v.contains(&0) {
                Err(Error::config(format!("{prefix}.{name}"), "entries must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("channels", &self.channels)?;
        positive("kernel_sizes", &self.kernel_sizes)?;
        positive("dilations", &self.dilations)?;
        if self.head_hidden == 0 {
            return Err(Error::config(format!("{prefix}.head_hidden"), "must be >= 1"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config(format!("{prefix}.epochs"), "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("{prefix}.lr"), "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoundationModel {
    shared: Vec<ConvLayerParams>,
    heads: BTreeMap<TaskId, MlpParams>,
    frozen: bool,
    in_channels: usize,
    window_len: usize,
    output_dim: usize,
}

/// Graph handles for a full foundation model.
#[derive(Debug, Clone)]
pub struct FoundationVars {
    pub shared: Vec<ConvVars>,
    pub heads: BTreeMap<TaskId, MlpVars>,
}

impl FoundationVars {
    /// Parameter handles in `named_params` order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in &self.shared {
            out.extend([c.kernel, c.bias]);
        }
        for h in self.heads.values() {
            out.extend([h.w1, h.b1, h.w2, h.b2]);
        }
        out
    }
}

impl FoundationModel {
    pub fn from_parts(
        shared: Vec<ConvLayerParams>,
        heads: BTreeMap<TaskId, MlpParams>,
        window_len: usize,
    ) -> Result<Self> {
        let first = shared
            .first()
            .ok_or_else(|| Error::Usage("foundation needs at least one conv layer".into()))?;
        let in_channels = first.in_channels();
        for pair in shared.windows(2) {
            if pair[1].in_channels() != pair[0].out_channels() {
                return Err(Error::Dimension {
                    op: "foundation_core",
                    axis: "in_channels",
                    expected: pair[0].out_channels(),
                    actual: pair[1].in_channels(),
                });
            }
        }
        let feature = shared.last().map(ConvLayerParams::out_channels).unwrap_or(0);
        let mut output_dim = None;
        for head in heads.values() {
            if head.input_dim() != feature {
                return Err(Error::Dimension {
                    op: "foundation_head",
                    axis: "in_features",
                    expected: feature,
                    actual: head.input_dim(),
                });
            }
            match output_dim {
                None => output_dim = Some(head.output_dim()),
                Some(o) if o != head.output_dim() => {
                    return Err(Error::Dimension {
                        op: "foundation_head",
                        axis: "out_features",
                        expected: o,
                        actual: head.output_dim(),
                    })
                }
                _ => {}
            }
        }
        let output_dim =
            output_dim.ok_or_else(|| Error::Usage("foundation needs at least one head".into()))?;
        if window_len == 0 {
            return Err(Error::config("window_len", "must be >= 1"));
        }
        Ok(Self {
            shared,
            heads,
            frozen: false,
            in_channels,
            window_len,
            output_dim,
        })
    }

    /// Randomly initialised model with one head per task.
    pub fn init(
        arch: &TcnArch,
        in_channels: usize,
        window_len: usize,
        output_dim: usize,
        tasks: &[TaskId],
        seed: u64,
    ) -> Result<Self> {
        arch.validate("arch")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = in_channels;
        let mut shared = Vec::with_capacity(arch.channels.len());
        for ((&c, &k), &d) in arch.channels.iter().zip(&arch.kernel_sizes).zip(&arch.dilations) {
            shared.push(ConvLayerParams::init(&mut rng, prev, c, k, d)?);
            prev = c;
        }
        let mut heads = BTreeMap::new();
        for &t in tasks {
            heads.insert(t, MlpParams::init(&mut rng, prev, arch.head_hidden, output_dim)?);
        }
        Self::from_parts(shared, heads, window_len)
    }

    pub fn shared(&self) -> &[ConvLayerParams] {
        &self.shared
    }

    pub fn heads(&self) -> &BTreeMap<TaskId, MlpParams> {
        &self.heads
    }

    pub fn head(&self, task: TaskId) -> Result<&MlpParams> {
        self.heads.get(&task).ok_or(Error::MissingHead(task))
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.heads.keys().copied().collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn ensure_mutable(&self) -> Result<()> {
        if self.frozen {
            Err(Error::Usage("foundation model is frozen".into()))
        } else {
            Ok(())
        }
    }

    pub fn head_mut(&mut self, task: TaskId) -> Result<&mut MlpParams> {
        self.ensure_mutable()?;
        self.heads.get_mut(&task).ok_or(Error::MissingHead(task))
    }

    pub fn shared_mut(&mut self) -> Result<&mut [ConvLayerParams]> {
        self.ensure_mutable()?;
        Ok(&mut self.shared)
    }

    pub fn check_geometry(&self, values: &Tensor) -> Result<()> {
        let checks = [
            ("channels", self.in_channels, values.dim(0)),
            ("time", self.window_len, values.dim(1)),
        ];
        if values.shape().len() != 2 {
            return Err(Error::Usage(format!(
                "window must be [channels × time], got {:?}",
                values.shape()
            )));
        }
        for (axis, expected, actual) in checks {
            if expected != actual {
                return Err(Error::Dimension {
                    op: "foundation_input",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    /// `g_task(g_s(values))`.
    pub fn predict_values(&self, values: &Tensor, task: TaskId) -> Result<Tensor> {
        let head = self.head(task)?;
        self.check_geometry(values)?;
        let features = tcn_forward(values, &self.shared)?;
        mlp_forward(&features, head)
    }

    pub fn predict(&self, x: &TimeWindow) -> Result<Tensor> {
        self.predict_values(&x.values, x.task)
    }

    /// Registers all parameters as graph leaves. With `trainable = false` no
    /// gradient is ever accumulated for them, though gradients still flow
    /// through to upstream inputs.
    pub fn leaves(&self, g: &mut Graph, trainable: bool) -> FoundationVars {
        FoundationVars {
            shared: conv_leaves(g, &self.shared, trainable),
            heads: self
                .heads
                .iter()
                .map(|(&t, h)| (t, mlp_leaves(g, h, trainable)))
                .collect(),
        }
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &FoundationVars,
        x: Var,
        task: TaskId,
    ) -> Result<Var> {
        let head = vars.heads.get(&task).ok_or(Error::MissingHead(task))?;
        self.check_geometry(g.value(x))?;
        let f = tcn_graph(g, x, &vars.shared)?;
        mlp_graph(g, f, head)
    }

    /// Loss `mse(predict(x), target)` and its gradient with respect to the
    /// input window. Parameters are treated as constants.
    pub fn input_gradient(&self, x: &TimeWindow, target: &Tensor) -> Result<(f64, Tensor)> {
        let mut g = Graph::new();
        let vars = self.leaves(&mut g, false);
        let xv = g.param(x.values.clone());
        let y = self.forward_graph(&mut g, &vars, xv, x.task)?;
        let t = g.constant(target.clone());
        let loss = g.mse(y, t)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).data()[0], grads.get_or_zeros(xv, &x.values)))
    }

    /// Parameters in canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.shared.iter().enumerate() {
            out.push((format!("shared.{i}.kernel"), &l.kernel));
            out.push((format!("shared.{i}.bias"), &l.bias));
        }
        for (t, h) in &self.heads {
            out.push((format!("head.{t}.w1"), &h.w1));
            out.push((format!("head.{t}.b1"), &h.b1));
            out.push((format!("head.{t}.w2"), &h.w2));
            out.push((format!("head.{t}.b2"), &h.b2));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.shared {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
        }
        for h in self.heads.values_mut() {
            out.push(&mut h.w1);
            out.push(&mut h.b1);
            out.push(&mut h.w2);
            out.push(&mut h.b2);
        }
        out
    }

    /// Copy with every parameter replaced, in `named_params` order.
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self> {
        if self.frozen {
            return Err(Error::Usage("frozen model parameters cannot be replaced".into()));
        }
        let mut out = self.clone();
        replace_params(out.params_mut(), params)?;
        Ok(out)
    }

    /// SHA-256 over the serialized parameters.
    pub fn checksum(&self) -> String {
        params_checksum(self.named_params())
    }

    pub fn to_artifact(&self, kind: &str) -> Artifact {
        let dilations: Vec<String> = self.shared.iter().map(|l| l.dilation.to_string()).collect();
        let mut art = Artifact::new(kind)
            .with_meta("window_len", self.window_len)
            .with_meta("dilations", dilations.join(","))
            .with_meta("frozen", self.frozen)
            .with_meta("model_checksum", self.checksum());
        for (name, t) in self.named_params() {
            art.push_array(name, t.clone());
        }
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        let window_len: usize = art.meta_parse("window_len")?;
        let dilations: Vec<usize> = art
            .meta("dilations")?
            .split(',')
            .map(|d| {
                d.parse().map_err(|e| Error::Format {
                    path: format!("<{} artifact>", art.kind),
                    line: 0,
                    reason: format!("dilations: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let mut shared = Vec::new();
        for (i, &d) in dilations.iter().enumerate() {
            shared.push(ConvLayerParams::new(
                art.array(&format!("shared.{i}.kernel"))?.clone(),
                art.array(&format!("shared.{i}.bias"))?.clone(),
                d,
            )?);
        }
        let tasks: BTreeSet<TaskId> = art
            .arrays
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("head.")?.split('.').next()?.parse().ok())
            .collect();
        let mut heads = BTreeMap::new();
        for t in tasks {
            let get = |p: &str| art.array(&format!("head.{t}.{p}")).cloned();
            heads.insert(t, MlpParams::new(get("w1")?, get("b1")?, get("w2")?, get("b2")?)?);
        }
        let mut model = Self::from_parts(shared, heads, window_len)?;
        if art.meta_parse::<bool>("frozen")? {
            model = model.freeze();
        }
        let stated = art.meta("model_checksum")?;
        if stated != model.checksum() {
            return Err(Error::Provenance(format!(
                "model checksum {stated} does not match parameters ({})",
                model.checksum()
            )));
        }
        Ok(model)
    }
}

pub(crate) fn replace_params(slots: Vec<&mut Tensor>, params: &[Tensor]) -> Result<()> {
    if slots.len() != params.len() {
        return Err(Error::Dimension {
            op: "with_params",
            axis: "count",
            expected: slots.len(),
            actual: params.len(),
        });
    }
    for (slot, p) in slots.into_iter().zip(params) {
        check_same_shape("with_params", slot, p)?;
        *slot = p.clone();
    }
    Ok(())
}

/// Per-epoch mean training loss.
pub type LossHistory = Vec<f64>;

/// Multi-task training with mixed-task minibatches. The shared core is updated
/// every step; a head is updated only when its task occurs in the batch.
pub fn train_foundation(
    data: &[LabeledSample],
    tasks: &[TaskId],
    arch: &TcnArch,
    cfg: &TrainConfig,
) -> Result<(FoundationModel, LossHistory)> {
    cfg.validate("train")?;
    let first = data
        .first()
        .ok_or_else(|| Error::config("data", "no training samples"))?;
    let declared: BTreeSet<TaskId> = tasks.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for s in data {
        if !declared.contains(&s.window.task) {
            return Err(Error::config(
                "tasks",
                format!("sample has undeclared task {}", s.window.task),
            ));
        }
        seen.insert(s.window.task);
    }
    if let Some(missing) = declared.difference(&seen).next() {
        return Err(Error::config(
            "tasks",
            format!("task {missing} has no training samples"),
        ));
    }
    let (channels, window_len) = (first.window.values.dim(0), first.window.values.dim(1));
    let mut model = FoundationModel::init(
        arch,
        channels,
        window_len,
        first.target.numel(),
        tasks,
        cfg.seed,
    )?;
    for s in data {
        model.check_geometry(&s.window.values)?;
        if s.target.numel() != model.output_dim {
            return Err(Error::Dimension {
                op: "train_foundation",
                axis: "target",
                expected: model.output_dim,
                actual: s.target.numel(),
            });
        }
    }

    let mut opt = {
        let params = model.named_params();
        let refs: Vec<&Tensor> = params.iter().map(|(_, t)| *t).collect();
        Adam::new(AdamConfig::with_lr(cfg.lr), &refs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let shared_slots = model.shared.len() * 2;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = model.leaves(&mut g, true);
            let mut losses = Vec::with_capacity(batch.len());
            let mut batch_tasks = BTreeSet::new();
            for &i in batch {
                let s = &data[i];
                batch_tasks.insert(s.window.task);
                let x = g.constant(s.window.values.clone());
                let y = model.forward_graph(&mut g, &vars, x, s.window.task)?;
                let t = g.constant(s.target.clone());
                losses.push(g.mse(y, t)?);
            }
            let total = g.sum(&losses)?;
            let loss = g.scale(total, 1.0 / batch.len() as f64);
            epoch_loss += g.value(loss).data()[0] * batch.len() as f64;
            let grads = g.backward(loss)?;

            let mut slot_grads: Vec<Option<Tensor>> = Vec::new();
            for cv in &vars.shared {
                slot_grads.push(Some(grads.get_or_zeros(cv.kernel, g.value(cv.kernel))));
                slot_grads.push(Some(grads.get_or_zeros(cv.bias, g.value(cv.bias))));
            }
            for (t, hv) in &vars.heads {
                let active = batch_tasks.contains(t);
                for v in [hv.w1, hv.b1, hv.w2, hv.b2] {
                    slot_grads.push(active.then(|| grads.get_or_zeros(v, g.value(v))));
                }
            }
            debug_assert!(slot_grads[..shared_slots].iter().all(Option::is_some));
            let mut params = model.params_mut();
            opt.step(&mut params, &slot_grads)?;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("foundation training diverged".into()));
        }
        history.push(mean);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(b2: &[(TaskId, f64)]) -> FoundationModel {
        let shared = vec![ConvLayerParams::new(
            Tensor::zeros(&[2, 2, 2]),
            Tensor::zeros(&[2]),
            1,
        )
        .unwrap()];
        let heads = b2
            .iter()
            .map(|&(t, b)| {
                (
                    t,
                    MlpParams::new(
                        Tensor::zeros(&[3, 2]),
                        Tensor::zeros(&[3]),
                        Tensor::zeros(&[1, 3]),
                        Tensor::vector(vec![b]),
                    )
                    .unwrap(),
                )
            })
            .collect();
        FoundationModel::from_parts(shared, heads, 4).unwrap()
    }

    fn window(task: TaskId) -> TimeWindow {
        TimeWindow {
            values: Tensor::new(vec![2, 4], vec![0.5, -1.0, 2.0, 0.1, 3.0, 0.0, -0.2, 1.0]).unwrap(),
            task,
            time_index: 3,
        }
    }

    #[test]
    fn constant_head() {
        let m = zero_model(&[(0, 0.3)]);
        assert_eq!(m.predict(&window(0)).unwrap().data(), &[0.3]);
    }

    #[test]
    fn heads_differ_by_bias() {
        let m = zero_model(&[(0, 0.3), (1, -1.2)]);
        let a = m.predict(&window(0)).unwrap().data()[0];
        let b = m.predict(&window(1)).unwrap().data()[0];
        assert_eq!(a - b, 0.3 - (-1.2));
    }

    #[test]
    fn unknown_task_and_bad_geometry() {
        let m = zero_model(&[(0, 0.3)]);
        assert!(matches!(m.predict(&window(9)), Err(Error::MissingHead(9))));
        let bad = TimeWindow {
            values: Tensor::zeros(&[2, 5]),
            task: 0,
            time_index: 0,
        };
        assert!(matches!(
            m.predict(&bad),
            Err(Error::Dimension { axis: "time", .. })
        ));
    }

    #[test]
    fn frozen_model_rejects_mutation() {
        let mut m = zero_model(&[(0, 0.3)]).freeze();
        assert!(m.head_mut(0).is_err());
        assert!(m.shared_mut().is_err());
    }

    #[test]
    fn artifact_round_trip() {
        let arch = TcnArch {
            channels: vec![3, 3],
            kernel_sizes: vec![2, 2],
            dilations: vec![1, 2],
            head_hidden: 4,
        };
        let m = FoundationModel::init(&arch, 2, 4, 1, &[0, 2], 11).unwrap().freeze();
        let text = m.to_artifact("foundation").to_text();
        let back =
            FoundationModel::from_artifact(&Artifact::parse(&text, "mem").unwrap()).unwrap();
        assert_eq!(m, back);
        assert_eq!(
            m.predict(&window(2)).unwrap(),
            back.predict(&window(2)).unwrap()
        );
    }

    #[test]
    fn empty_task_is_a_config_error() {
        let s = LabeledSample {
            window: window(0),
            target: Tensor::vector(vec![1.0]),
        };
        let arch = TcnArch {
            channels: vec![2],
            kernel_sizes: vec![2],
            dilations: vec![1],
            head_hidden: 2,
        };
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 1,
            lr: 1e-3,
            seed: 0,
        };
        let err = train_foundation(&[s], &[0, 1], &arch, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err}");
    }
}
