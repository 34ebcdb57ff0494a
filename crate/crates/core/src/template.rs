//! Template mapping: find, for each desired amputee output, the able-bodied
//! input whose frozen-model output sequence matches best, then blend the
//! closest able inputs around it into a correction template.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::{FoundationModel, TaskId, TimeWindow};
use crate::nn::Tensor;
use crate::persist::{params_checksum, Artifact};

/// Temporally ordered able-bodied inputs with the frozen model's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AbleBodiedIndex {
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
    time_indices: Vec<usize>,
    task: TaskId,
    model_checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Linear,
    Exponential,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Weighting::Linear),
            "exponential" => Ok(Weighting::Exponential),
            other => Err(Error::config("template.weighting", format!("unknown `{other}`"))),
        }
    }
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Weighting::Linear => "linear",
            Weighting::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// Half-length of the matched output sequence (`2m + 1` values).
    pub m: usize,
    /// Maximum neighbours blended into a template.
    pub n: usize,
    /// Neighbourhood radius in flattened input space.
    pub epsilon: f64,
    pub weighting: Weighting,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            m: 0,
            n: 5,
            epsilon: 4.0,
            weighting: Weighting::Linear,
        }
    }
}

impl TemplateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("template.n", "must be >= 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("template.epsilon", "must be > 0"));
        }
        Ok(())
    }

    fn raw_weight(&self, d: f64) -> f64 {
        match self.weighting {
            Weighting::Linear => (1.0 - d / self.epsilon).max(0.0),
            Weighting::Exponential => (-d / (self.epsilon / 3.0)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTemplate {
    /// Position in the desired-output series.
    pub k: usize,
    pub corrected: TimeWindow,
    pub matched_center: usize,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Templates for every admissible position plus the skipped boundary positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub templates: Vec<CorrectionTemplate>,
    pub skipped: Vec<usize>,
}

impl AbleBodiedIndex {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn model_checksum(&self) -> &str {
        &self.model_checksum
    }

    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn output(&self, i: usize) -> &Tensor {
        &self.outputs[i]
    }

    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn time_index(&self, i: usize) -> usize {
        self.time_indices[i]
    }

    /// Index over precomputed outputs; used by tests and by loaders.
    pub fn from_parts(
        inputs: Vec<Tensor>,
        outputs: Vec<Tensor>,
        time_indices: Vec<usize>,
        task: TaskId,
        model_checksum: String,
    ) -> Result<Self> {
        if inputs.len() != outputs.len() || inputs.len() != time_indices.len() {
            return Err(Error::Dimension {
                op: "index",
                axis: "entries",
                expected: inputs.len(),
                actual: outputs.len().min(time_indices.len()),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            time_indices,
            task,
            model_checksum,
        })
    }

    /// Rebuilds the outputs with `model` and compares them bitwise.
    pub fn verify_against(&self, model: &FoundationModel) -> Result<()> {
        if self.model_checksum != model.checksum() {
            return Err(Error::Provenance(format!(
                "index was built from model {} but checkpoint is {}",
                self.model_checksum,
                model.checksum()
            )));
        }
        for (i, (x, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            if &model.predict_values(x, self.task)? != y {
                return Err(Error::Provenance(format!(
                    "index entry {i} does not reproduce under the stated model"
                )));
            }
        }
        Ok(())
    }

    pub fn checksum(&self) -> String {
        let named = self
            .inputs
            .iter()
            .zip(&self.outputs)
            .enumerate()
            .flat_map(|(i, (x, y))| [(format!("x{i}"), x), (format!("y{i}"), y)]);
        params_checksum(named)
    }

    pub fn to_artifact(&self) -> Result<Artifact> {
        let first = self
            .inputs
            .first()
            .ok_or_else(|| Error::InsufficientData("cannot persist an empty index".into()))?;
        let (c, t) = (first.dim(0), first.dim(1));
        let o = self.outputs[0].numel();
        let n = self.len();
        let mut art = Artifact::new("index")
            .with_meta("task", self.task)
            .with_meta("model_checksum", &self.model_checksum)
            .with_meta("index_checksum", self.checksum());
        art.push_array(
            "time_index",
            Tensor::vector(self.time_indices.iter().map(|&v| v as f64).collect()),
        );
        art.push_array(
            "inputs",
            Tensor::new(
                vec![n, c, t],
                self.inputs.iter().flat_map(|x| x.data().to_vec()).collect(),
            )?,
        );
        art.push_array(
            "outputs",
            Tensor::new(
                vec![n, o],
                self.outputs.iter().flat_map(|x| x.data().to_vec()).collect(),
            )?,
        );
        Ok(art)
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("index")?;
        let inputs = art.array("inputs")?;
        let outputs = art.array("outputs")?;
        let (n, c, t) = (inputs.dim(0), inputs.dim(1), inputs.dim(2));
        let o = outputs.dim(1);
        let idx = Self::from_parts(
            inputs
                .data()
                .chunks(c * t)
                .map(|d| Tensor::new(vec![c, t], d.to_vec()))
                .collect::<Result<_>>()?,
            outputs
                .data()
                .chunks(o)
                .map(|d| Tensor::vector(d.to_vec()))
                .collect(),
            art.array("time_index")?
                .data()
                .iter()
                .map(|&v| v as usize)
                .collect(),
            art.meta_parse("task")?,
            art.meta("model_checksum")?.to_string(),
        )?;
        if idx.len() != n {
            return Err(Error::Usage("index entry count mismatch".into()));
        }
        if art.meta("index_checksum")? != idx.checksum() {
            return Err(Error::Provenance("index content checksum mismatch".into()));
        }
        Ok(idx)
    }
}

/// `entries[i] = (stream[i], predict(model, stream[i]))` in stream order.
pub fn build_index(model: &FoundationModel, stream: &[TimeWindow]) -> Result<AbleBodiedIndex> {
    if !model.is_frozen() {
        return Err(Error::Usage("index must be built from a frozen model".into()));
    }
    let task = match stream.first() {
        Some(w) => w.task,
        None => *model
            .tasks()
            .first()
            .ok_or_else(|| Error::Usage("model has no heads".into()))?,
    };
    if let Some(w) = stream.iter().find(|w| w.task != task) {
        return Err(Error::Usage(format!(
            "index windows must share one task, found {} and {}",
            task, w.task
        )));
    }
    let outputs = stream
        .par_iter()
        .map(|w| model.predict(w))
        .collect::<Result<Vec<_>>>()?;
    AbleBodiedIndex::from_parts(
        stream.iter().map(|w| w.values.clone()).collect(),
        outputs,
        stream.iter().map(|w| w.time_index).collect(),
        task,
        model.checksum(),
    )
}

fn euclid(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Centre `i*` minimizing `Σ_{j=−m..m} ‖f(X^{i−j}) − y^{k−j}‖₂` over centres
/// with a full neighbourhood; `y_seq[m + j]` holds `y^{k+j}`. Ties go to the
/// smallest centre.
pub fn sequence_match(index: &AbleBodiedIndex, y_seq: &[Tensor]) -> Result<usize> {
    if y_seq.len() % 2 == 0 {
        return Err(Error::Usage(format!(
            "desired sequence must have odd length 2m+1, got {}",
            y_seq.len()
        )));
    }
    let m = y_seq.len() / 2;
    let n = index.len();
    if n < y_seq.len() {
        return Err(Error::InsufficientData(format!(
            "index of length {n} has no centre admitting a {}-long sequence",
            y_seq.len()
        )));
    }
    let out_dim = index.outputs[0].numel();
    if let Some(bad) = y_seq.iter().find(|y| y.numel() != out_dim) {
        return Err(Error::Dimension {
            op: "sequence_match",
            axis: "output",
            expected: out_dim,
            actual: bad.numel(),
        });
    }
    let mut best = (f64::INFINITY, m);
    for i in m..n - m {
        let cost: f64 = (0..y_seq.len())
            .map(|off| euclid(&index.outputs[i + off - m], &y_seq[off]))
            .sum();
        if cost < best.0 {
            best = (cost, i);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numeric("non-finite sequence matching cost".into()));
    }
    Ok(best.1)
}

/// Weighted blend of at most `n` entries within `ε` of entry `center` in
/// input space, closest first.
pub fn neighborhood_average(
    index: &AbleBodiedIndex,
    center: usize,
    cfg: &TemplateConfig,
) -> Result<CorrectionTemplate> {
    cfg.validate()?;
    if center >= index.len() {
        return Err(Error::Usage(format!(
            "centre {center} outside index of length {}",
            index.len()
        )));
    }
    let x0 = &index.inputs[center];
    let mut candidates: Vec<(f64, usize)> = index
        .inputs
        .iter()
        .enumerate()
        .filter_map(|(j, x)| {
            let d = if j == center { 0.0 } else { euclid(x, x0) };
            (d <= cfg.epsilon).then_some((d, j))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(cfg.n);

    let raw: Vec<f64> = candidates.iter().map(|&(d, _)| cfg.raw_weight(d)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

    let numel = x0.numel();
    let mut acc = vec![0.0; numel];
    let mut lo = vec![f64::INFINITY; numel];
    let mut hi = vec![f64::NEG_INFINITY; numel];
    for (&(_, j), &w) in candidates.iter().zip(&weights) {
        for (e, &v) in index.inputs[j].data().iter().enumerate() {
            acc[e] += w * v;
            lo[e] = lo[e].min(v);
            hi[e] = hi[e].max(v);
        }
    }
    // A convex combination cannot leave the hull; clamp away rounding residue.
    for ((v, l), h) in acc.iter_mut().zip(&lo).zip(&hi) {
        *v = v.clamp(*l, *h);
    }
    Ok(CorrectionTemplate {
        k: 0,
        corrected: TimeWindow {
            values: Tensor::new(x0.shape().to_vec(), acc)?,
            task: index.task,
            time_index: index.time_indices[center],
        },
        matched_center: center,
        neighbors: candidates.iter().map(|&(_, j)| j).collect(),
        weights,
    })
}

/// Runs matching and blending for every position `k` of `desired` with a
/// full `2m+1` window; the rest are reported as skipped.
pub fn compute_corrections(
    index: &AbleBodiedIndex,
    desired: &[Tensor],
    cfg: &TemplateConfig,
) -> Result<TemplateSet> {
    cfg.validate()?;
    if desired.is_empty() {
        return Err(Error::InsufficientData("empty desired-output series".into()));
    }
    let m = cfg.m;
    if index.len() < 2 * m + 1 {
        return Err(Error::InsufficientData(format!(
            "index of length {} admits no centre for m = {m}",
            index.len()
        )));
    }
    let len = desired.len();
    let admissible: Vec<usize> = (0..len).filter(|&k| k >= m && k + m < len).collect();
    let skipped = (0..len).filter(|&k| k < m || k + m >= len).collect();
    let templates = admissible
        .par_iter()
        .map(|&k| {
            let center = sequence_match(index, &desired[k - m..=k + m])?;
            let mut t = neighborhood_average(index, center, cfg)?;
            t.k = k;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemplateSet { templates, skipped })
}

impl TemplateSet {
    pub fn to_artifact(&self, model_checksum: &str, cfg: &TemplateConfig) -> Result<Artifact> {
        let skipped: Vec<String> = self.skipped.iter().map(usize::to_string).collect();
        let mut art = Artifact::new("templates")
            .with_meta("model_checksum", model_checksum)
            .with_meta("m", cfg.m)
            .with_meta("n", cfg.n)
            .with_meta("epsilon", crate::persist::fmt_f64(cfg.epsilon))
            .with_meta("weighting", cfg.weighting)
            .with_meta("count", self.templates.len())
            .with_meta("skipped", skipped.join(","));
        for (r, t) in self.templates.iter().enumerate() {
            art.push_array(
                format!("template.{r}.record"),
                Tensor::vector(vec![t.k as f64, t.matched_center as f64, t.corrected.task as f64, t.corrected.time_index as f64]),
            );
            art.push_array(
                format!("template.{r}.neighbors"),
                Tensor::vector(t.neighbors.iter().map(|&j| j as f64).collect()),
            );
            art.push_array(format!("template.{r}.weights"), Tensor::vector(t.weights.clone()));
            art.push_array(format!("template.{r}.corrected"), t.corrected.values.clone());
        }
        Ok(art)
    }

    pub fn from_artifact(art: &Artifact) -> Result<Self> {
        art.expect_kind("templates")?;
        let count: usize = art.meta_parse("count")?;
        let skipped_text = art.meta("skipped")?;
        let skipped = if skipped_text.is_empty() {
            Vec::new()
        } else {
            skipped_text
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::Usage(format!("bad skipped entry `{s}`"))))
                .collect::<Result<_>>()?
        };
        let mut templates = Vec::with_capacity(count);
        for r in 0..count {
            let rec = art.array(&format!("template.{r}.record"))?.data().to_vec();
            if rec.len() != 4 {
                return Err(Error::Usage(format!("template {r}: malformed record")));
            }
            templates.push(CorrectionTemplate {
                k: rec[0] as usize,
                matched_center: rec[1] as usize,
                corrected: TimeWindow {
                    values: art.array(&format!("template.{r}.corrected"))?.clone(),
                    task: rec[2] as TaskId,
                    time_index: rec[3] as usize,
                },
                neighbors: art
                    .array(&format!("template.{r}.neighbors"))?
                    .data()
                    .iter()
                    .map(|&v| v as usize)
                    .collect(),
                weights: art.array(&format!("template.{r}.weights"))?.data().to_vec(),
            });
        }
        Ok(Self { templates, skipped })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_index(outputs: &[f64]) -> AbleBodiedIndex {
        AbleBodiedIndex::from_parts(
            outputs.iter().map(|&v| Tensor::new(vec![1, 1], vec![v]).unwrap()).collect(),
            outputs.iter().map(|&v| Tensor::vector(vec![v])).collect(),
            (0..outputs.len()).collect(),
            0,
            "test".into(),
        )
        .unwrap()
    }

    fn ys(v: &[f64]) -> Vec<Tensor> {
        v.iter().map(|&x| Tensor::vector(vec![x])).collect()
    }

    #[test]
    fn match_examples() {
        let idx = scalar_index(&[0.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(sequence_match(&idx, &ys(&[0.9])).unwrap(), 2);
        assert_eq!(sequence_match(&idx, &ys(&[0.5])).unwrap(), 1);
        assert_eq!(sequence_match(&idx, &ys(&[0.5, 1.0, 0.5])).unwrap(), 2);
    }

    #[test]
    fn short_index_is_insufficient() {
        let idx = scalar_index(&[0.0, 1.0]);
        assert!(matches!(
            sequence_match(&idx, &ys(&[0.0, 1.0, 0.0])),
            Err(Error::InsufficientData(_))
        ));
        let empty = scalar_index(&[]);
        assert!(sequence_match(&empty, &ys(&[0.0])).is_err());
    }

    #[test]
    fn single_neighbor_returns_center() {
        let idx = scalar_index(&[0.0, 0.1, 0.2, 0.3]);
        let cfg = TemplateConfig {
            n: 1,
            epsilon: 10.0,
            ..Default::default()
        };
        let t = neighborhood_average(&idx, 2, &cfg).unwrap();
        assert_eq!(t.corrected.values, *idx.input(2));
        assert_eq!(t.weights, vec![1.0]);
    }

    #[test]
    fn linear_weights_two_thirds_one_third() {
        // distances 0 and ε/2
        let idx = scalar_index(&[0.0, 1.0, 5.0]);
        let cfg = TemplateConfig {
            m: 0,
            n: 5,
            epsilon: 2.0,
            weighting: Weighting::Linear,
        };
        let t = neighborhood_average(&idx, 0, &cfg).unwrap();
        assert_eq!(t.neighbors, vec![0, 1]);
        assert!((t.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.corrected.values.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_epsilon_isolates_center() {
        let idx = scalar_index(&[0.0, 0.1, 0.2, 0.3]);
        for weighting in [Weighting::Linear, Weighting::Exponential] {
            let cfg = TemplateConfig {
                m: 0,
                n: 4,
                epsilon: 1e-9,
                weighting,
            };
            let t = neighborhood_average(&idx, 1, &cfg).unwrap();
            assert_eq!(t.corrected.values, *idx.input(1));
        }
    }

    #[test]
    fn boundary_positions_are_skipped() {
        let idx = scalar_index(&[0.0, 0.5, 1.0, 0.5, 0.0, 0.2]);
        let cfg = TemplateConfig {
            m: 1,
            ..Default::default()
        };
        let set = compute_corrections(&idx, &ys(&[0.0, 0.5, 1.0, 0.5, 0.0]), &cfg).unwrap();
        assert_eq!(set.templates.iter().map(|t| t.k).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(set.skipped, vec![0, 4]);

        let cfg = TemplateConfig::default();
        let set = compute_corrections(&idx, &ys(&[0.1, 0.7, 0.3]), &cfg).unwrap();
        assert_eq!(set.templates.len(), 3);
        assert!(set.skipped.is_empty());
    }

    #[test]
    fn template_artifact_round_trip() {
        let idx = scalar_index(&[0.0, 0.5, 1.0, 0.5, 0.0, 0.2]);
        let cfg = TemplateConfig::default();
        let set = compute_corrections(&idx, &ys(&[0.1, 0.7, 0.3]), &cfg).unwrap();
        let art = set.to_artifact("abc", &cfg).unwrap();
        let back = Artifact::parse(&art.to_text(), "mem").unwrap();
        assert_eq!(TemplateSet::from_artifact(&back).unwrap(), set);
    }
}
