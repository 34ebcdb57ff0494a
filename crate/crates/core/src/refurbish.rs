//! Refurbish module `h`: a small causal-conv stack whose features, together
//! with the raw window, feed a linear map back to the foundation's input
//! geometry. Trained against correction templates and, through the frozen
//! foundation model, against the desired outputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::{replace_params, FoundationModel, FoundationVars, LossHistory, TimeWindow};
use crate::nn::{
    affine, conv_leaves, glorot, mse, tcn_forward_sequence, tcn_sequence_graph, Adam, AdamConfig,
    ConvLayerParams, ConvVars, Graph, Tensor, Var,
};
use crate::persist::{params_checksum, Artifact};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefurbishArch {
    pub channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl RefurbishArch {
    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if self.kernel_sizes.len() != n || self.dilations.len() != n {
            return Err(Error::config(
                "refurbish_arch",
                "channels, kernel_sizes and dilations need one entry per layer",
            ));
        }
        if self.channels.iter().chain(&self.kernel_sizes).chain(&self.dilations).any(|&v| v == 0) {
            return Err(Error::config("refurbish_arch", "entries must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefurbishTrainConfig {
    /// Weight of the template-regression term.
    pub alpha: f64,
    /// Weight of the output term through the frozen model.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RefurbishTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 20.0,
            epochs: 150,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl RefurbishTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("refurbish.alpha", self.alpha), ("refurbish.beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        if self.alpha + self.beta <= 0.0 {
            return Err(Error::config("refurbish.alpha", "alpha + beta must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("refurbish.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("refurbish.batch_size", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("refurbish.lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmputeeTrainingTriple {
    pub x_amp: TimeWindow,
    pub x_corr: TimeWindow,
    pub y_amp: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefurbishModel {
    convs: Vec<ConvLayerParams>,
    /// `[C·T × (C + H)·T]` over the flattened raw window followed by the flattened conv features.
    head_w: Tensor,
    head_b: Tensor,
    channels: usize,
    window_len: usize,
}

impl RefurbishModel {
    pub fn from_parts(
        convs: Vec<ConvLayerParams>,
        head_w: Tensor,
        head_b: Tensor,
        channels: usize,
        window_len: usize,
    ) -> Result<Self> {
        let mut prev = channels;
        for c in &convs {
            if c.in_channels() != prev {
                return Err(Error::Dimension {
                    op: "refurbish_core",
                    axis: "in_channels",
                    expected: prev,
                    actual: c.in_channels(),
                });
            }
            prev = c.out_channels();
        }
        let feat = if convs.is_empty() { 0 } else { prev };
        let (rows, cols) = (channels * window_len, (channels + feat) * window_len);
        if head_w.shape() != [rows, cols] {
            return Err(Error::Dimension {
                op: "refurbish_head",
                axis: "in_features",
                expected: cols,
                actual: head_w.dim(1),
            });
        }
        if head_b.numel() != rows {
            return Err(Error::Dimension {
                op: "refurbish_head",
                axis: "out_features",
                expected: rows,
                actual: head_b.numel(),
            });
        }
        Ok(Self {
            convs,
            head_w,
            head_b,
            channels,
            window_len,
        })
    }

    pub fn init(arch: &RefurbishArch, channels: usize, window_len: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prev = channels;
        let mut convs = Vec::new();
        for ((&c, &k), &d) in arch.channels.iter().zip(&arch.kernel_sizes).zip(&arch.dilations) {
            convs.push(ConvLayerParams::init(&mut rng, prev, c, k, d)?);
            prev = c;
        }
        let feat = if convs.is_empty() { 0 } else { prev };
        let (rows, cols) = (channels * window_len, (channels + feat) * window_len);
        let head_w = glorot(&mut rng, &[rows, cols], cols, rows);
        Self::from_parts(convs, head_w, Tensor::zeros(&[rows]), channels, window_len)
    }

    /// All parameters zero; maps every window to zeros.
    pub fn zeroed(arch: &RefurbishArch, channels: usize, window_len: usize) -> Result<Self> {
        let mut h = Self::init(arch, channels, window_len, 0)?;
        for p in h.params_mut() {
            p.data_mut().fill(0.0);
        }
        Ok(h)
    }

    /// Raw-input block of the head set to the identity, everything else zero.
    pub fn identity(arch: &RefurbishArch, channels: usize, window_len: usize) -> Result<Self> {
        let mut h = Self::zeroed(arch, channels, window_len)?;
        let (rows, cols) = (h.head_w.dim(0), h.head_w.dim(1));
        for r in 0..rows {
            h.head_w.data_mut()[r * cols + r] = 1.0;
        }
        Ok(h)
    }

    pub fn convs(&self) -> &[ConvLayerParams] {
        &self.convs
    }

    pub fn head(&self) -> (&Tensor, &Tensor) {
        (&self.head_w, &self.head_b)
    }

    fn check_geometry(&self, x: &Tensor) -> Result<()> {
        for (axis, expected, actual) in [
            ("channels", self.channels, x.dim(0)),
            ("time", self.window_len, x.dim(1)),
        ] {
            if expected != actual || x.shape().len() != 2 {
                return Err(Error::Dimension {
                    op: "refurbish_input",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }

    pub fn forward_values(&self, x: &Tensor) -> Result<Tensor> {
        self.check_geometry(x)?;
        let mut z = x.data().to_vec();
        if !self.convs.is_empty() {
            z.extend_from_slice(tcn_forward_sequence(x, &self.convs)?.data());
        }
        affine(&Tensor::vector(z), &self.head_w, &self.head_b)?
            .reshape(&[self.channels, self.window_len])
    }

    /// `X̂_corr = h(X_amp)`; keeps the window's task and position.
    pub fn forward(&self, x: &TimeWindow) -> Result<TimeWindow> {
        Ok(TimeWindow {
            values: self.forward_values(&x.values)?,
            task: x.task,
            time_index: x.time_index,
        })
    }

    pub fn leaves(&self, g: &mut Graph) -> RefurbishVars {
        RefurbishVars {
            convs: conv_leaves(g, &self.convs, true),
            head_w: g.param(self.head_w.clone()),
            head_b: g.param(self.head_b.clone()),
        }
    }

    pub fn forward_graph(&self, g: &mut Graph, vars: &RefurbishVars, x: Var) -> Result<Var> {
        self.check_geometry(g.value(x))?;
        let z = if vars.convs.is_empty() {
            g.reshape(x, &[self.channels * self.window_len])?
        } else {
            let feats = tcn_sequence_graph(g, x, &vars.convs)?;
            g.concat(x, feats)
        };
        let y = g.affine(z, vars.head_w, vars.head_b)?;
        g.reshape(y, &[self.channels, self.window_len])
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.convs.iter().enumerate() {
            out.push((format!("conv.{i}.kernel"), &l.kernel));
            out.push((format!("conv.{i}.bias"), &l.bias));
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.convs {
            out.push(&mut l.kernel);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Copy with every parameter replaced, in `named_params` order.
    pub fn with_params(&self, params: &[Tensor]) -> Result<Self> {
        let mut out = self.clone();
        replace_params(out.params_mut(), params)?;
        Ok(out)
    }

    pub fn checksum(&self) -> String {
        params_checksum(self.named_params())
    }

    pub fn to_artifact(&self) -> Artifact {
        let dilations: Vec<String> = self.convs.iter().map(|l| l.dilation.to_string()).collect();
        let mut art = Artifact::new("refurbish")
            .with_meta("channels", self.channels)
            .with_meta("window_len", self.window_len)
            .with_meta("dilations", dilations.join(","))
            .with_meta("model_checksum", self.checksum());
        for (name, t) in self.named_params() {
            art.push_array(name, t.clone());
        }
        art
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("refurbish")?;
        let dil_text = art.meta("dilations")?;
        let dilations: Vec<usize> = if dil_text.is_empty() {
            Vec::new()
        } else {
            dil_text
                .split(',')
                .map(|d| d.parse().map_err(|_| Error::Usage(format!("bad dilation `{d}`"))))
                .collect::<Result<_>>()?
        };
        let convs = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                ConvLayerParams::new(
                    art.array(&format!("conv.{i}.kernel"))?.clone(),
                    art.array(&format!("conv.{i}.bias"))?.clone(),
                    d,
                )
            })
            .collect::<Result<_>>()?;
        let h = Self::from_parts(
            convs,
            art.array("head.w")?.clone(),
            art.array("head.b")?.clone(),
            art.meta_parse("channels")?,
            art.meta_parse("window_len")?,
        )?;
        if art.meta("model_checksum")? != h.checksum() {
            return Err(Error::Provenance("refurbish checksum mismatch".into()));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct RefurbishVars {
    pub convs: Vec<ConvVars>,
    pub head_w: Var,
    pub head_b: Var,
}

impl RefurbishVars {
    /// Parameter handles in `named_params` order.
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.extend([c.kernel, c.bias]);
        }
        out.extend([self.head_w, self.head_b]);
        out
    }
}

fn require_frozen(g: &FoundationModel) -> Result<()> {
    if g.is_frozen() {
        Ok(())
    } else {
        Err(Error::Usage("refurbish training needs a frozen foundation model".into()))
    }
}

/// The two loss terms of one triple, returned separately.
pub fn loss_terms(
    triple: &AmputeeTrainingTriple,
    h: &RefurbishModel,
    g_frozen: &FoundationModel,
) -> Result<(f64, f64)> {
    require_frozen(g_frozen)?;
    let x_hat = h.forward(&triple.x_amp)?;
    let template = mse(&x_hat.values, &triple.x_corr.values)?;
    let output = mse(&g_frozen.predict(&x_hat)?, &triple.y_amp)?;
    Ok((template, output))
}

/// `α·mse(h(x_amp), x_corr) + β·mse(g(h(x_amp)), y_amp)`.
pub fn refurbish_loss(
    triple: &AmputeeTrainingTriple,
    h: &RefurbishModel,
    g_frozen: &FoundationModel,
    cfg: &RefurbishTrainConfig,
) -> Result<f64> {
    let (template, output) = loss_terms(triple, h, g_frozen)?;
    Ok(cfg.alpha * template + cfg.beta * output)
}

/// Mean of per-triple losses.
pub fn batch_loss(
    triples: &[AmputeeTrainingTriple],
    h: &RefurbishModel,
    g_frozen: &FoundationModel,
    cfg: &RefurbishTrainConfig,
) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut total = 0.0;
    for t in triples {
        total += refurbish_loss(t, h, g_frozen, cfg)?;
    }
    Ok(total / triples.len() as f64)
}

/// Builds the batch loss on a graph. Foundation parameters enter as
/// constants, so only `h` receives gradients.
pub fn batch_loss_graph(
    g: &mut Graph,
    triples: &[&AmputeeTrainingTriple],
    h: &RefurbishModel,
    h_vars: &RefurbishVars,
    g_frozen: &FoundationModel,
    g_vars: &FoundationVars,
    cfg: &RefurbishTrainConfig,
) -> Result<Var> {
    let mut losses = Vec::with_capacity(triples.len());
    for t in triples {
        let x = g.constant(t.x_amp.values.clone());
        let x_hat = h.forward_graph(g, h_vars, x)?;
        let corr = g.constant(t.x_corr.values.clone());
        let template = g.mse(x_hat, corr)?;
        let y_hat = g_frozen.forward_graph(g, g_vars, x_hat, t.x_amp.task)?;
        let y = g.constant(t.y_amp.clone());
        let output = g.mse(y_hat, y)?;
        let a = g.scale(template, cfg.alpha);
        let b = g.scale(output, cfg.beta);
        losses.push(g.add(a, b)?);
    }
    let total = g.sum(&losses)?;
    Ok(g.scale(total, 1.0 / triples.len() as f64))
}

/// Minimizes the mean refurbish loss over `Θ_h` only.
pub fn train_refurbish(
    data: &[AmputeeTrainingTriple],
    g_frozen: &FoundationModel,
    arch: &RefurbishArch,
    cfg: &RefurbishTrainConfig,
) -> Result<(RefurbishModel, LossHistory)> {
    cfg.validate()?;
    require_frozen(g_frozen)?;
    if data.is_empty() {
        return Err(Error::config("refurbish.data", "no training triples"));
    }
    for t in data {
        g_frozen.check_geometry(&t.x_amp.values)?;
        g_frozen.check_geometry(&t.x_corr.values)?;
        g_frozen.head(t.x_amp.task)?;
    }
    let mut h = RefurbishModel::init(arch, g_frozen.in_channels(), g_frozen.window_len(), cfg.seed)?;
    let mut opt = {
        let params = h.named_params();
        let refs: Vec<&Tensor> = params.iter().map(|(_, t)| *t).collect();
        Adam::new(AdamConfig::with_lr(cfg.lr), &refs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4ef0_b15c);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let g_vars = g_frozen.leaves(&mut g, false);
            let h_vars = h.leaves(&mut g);
            let triples: Vec<&AmputeeTrainingTriple> = batch.iter().map(|&i| &data[i]).collect();
            let loss = batch_loss_graph(&mut g, &triples, &h, &h_vars, g_frozen, &g_vars, cfg)?;
            epoch_loss += g.value(loss).data()[0] * batch.len() as f64;
            let grads = g.backward(loss)?;
            let slot_grads: Vec<Option<Tensor>> = h_vars
                .ordered()
                .into_iter()
                .map(|v| Some(grads.get_or_zeros(v, g.value(v))))
                .collect();
            opt.step(&mut h.params_mut(), &slot_grads)?;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("refurbish training diverged".into()));
        }
        history.push(mean);
    }
    Ok((h, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> RefurbishArch {
        RefurbishArch {
            channels: vec![3],
            kernel_sizes: vec![2],
            dilations: vec![1],
        }
    }

    fn window() -> TimeWindow {
        TimeWindow {
            values: Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, -3.0, 0.7]).unwrap(),
            task: 0,
            time_index: 2,
        }
    }

    #[test]
    fn zeroed_maps_to_zero() {
        let h = RefurbishModel::zeroed(&arch(), 2, 3).unwrap();
        assert_eq!(h.forward(&window()).unwrap().values, Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn identity_configuration() {
        let h = RefurbishModel::identity(&arch(), 2, 3).unwrap();
        assert_eq!(h.forward(&window()).unwrap(), window());
        let bare = RefurbishArch {
            channels: vec![],
            kernel_sizes: vec![],
            dilations: vec![],
        };
        let h = RefurbishModel::identity(&bare, 2, 3).unwrap();
        assert_eq!(h.forward(&window()).unwrap(), window());
    }

    #[test]
    fn geometry_mismatch() {
        let h = RefurbishModel::init(&arch(), 2, 4, 1).unwrap();
        assert!(matches!(
            h.forward(&window()),
            Err(Error::Dimension { axis: "time", .. })
        ));
    }

    #[test]
    fn graph_forward_matches_plain() {
        let h = RefurbishModel::init(&arch(), 2, 3, 9).unwrap();
        let mut g = Graph::new();
        let vars = h.leaves(&mut g);
        let x = g.constant(window().values);
        let y = h.forward_graph(&mut g, &vars, x).unwrap();
        assert_eq!(g.value(y), &h.forward(&window()).unwrap().values);
    }

    #[test]
    fn artifact_round_trip() {
        let h = RefurbishModel::init(&arch(), 2, 3, 4).unwrap();
        let back =
            RefurbishModel::from_artifact(&Artifact::parse(&h.to_artifact().to_text(), "m").unwrap())
                .unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn config_validation() {
        let cfg = RefurbishTrainConfig {
            alpha: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        RefurbishTrainConfig::default().validate().unwrap();
    }
}
