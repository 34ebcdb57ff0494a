//! Assembly of the synthetic suite: streams for every subject and task, the
//! frozen foundation fit, and one evaluation case per amputee.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::data::{
    derive_desired_outputs, fit_normalizer, make_windows, match_anthropometry, synth_able,
    synth_amputee, with_targets, GaitStream, NormalizationStats, SubjectMeta, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::r2;
use crate::foundation::{train_foundation, FoundationModel, LabeledSample, LossHistory, TaskId, TimeWindow};
use crate::nn::Tensor;
use crate::template::{build_index, AbleBodiedIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub able: Vec<SubjectMeta>,
    pub amputees: Vec<SubjectMeta>,
    pub able_streams: Vec<GaitStream>,
    pub amputee_streams: Vec<GaitStream>,
}

impl Dataset {
    pub fn able_stream(&self, subject: u32, task: TaskId) -> Result<&GaitStream> {
        self.able_streams
            .iter()
            .find(|s| s.subject.id == subject && s.task == task)
            .ok_or_else(|| Error::InsufficientData(format!("no stream for able subject {subject}, task {task}")))
    }

    pub fn amputee_stream(&self, subject: u32, task: TaskId) -> Result<&GaitStream> {
        self.amputee_streams
            .iter()
            .find(|s| s.subject.id == subject && s.task == task)
            .ok_or_else(|| Error::InsufficientData(format!("no stream for amputee {subject}, task {task}")))
    }
}

/// Every able subject and every amputee on every task.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (able, amputees) = cfg.subjects();
    let tasks = cfg.task_ids();
    let jobs: Vec<(&SubjectMeta, TaskId)> = able
        .iter()
        .flat_map(|s| tasks.iter().map(move |&t| (s, t)))
        .collect();
    let able_streams = jobs
        .par_iter()
        .map(|&(s, t)| synth_able(cfg, s, t, cfg.able_cycles))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&SubjectMeta, TaskId)> = amputees
        .iter()
        .flat_map(|s| tasks.iter().map(move |&t| (s, t)))
        .collect();
    let amputee_streams = jobs
        .par_iter()
        .map(|&(s, t)| synth_amputee(cfg, s, t, cfg.amputee_cycles))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        able,
        amputees,
        able_streams,
        amputee_streams,
    })
}

/// Samples `range` of a stream.
pub fn slice_stream(s: &GaitStream, range: Range<usize>) -> Result<GaitStream> {
    if range.start >= range.end || range.end > s.len() {
        return Err(Error::InsufficientData(format!(
            "cannot slice {}..{} from a stream of length {}",
            range.start,
            range.end,
            s.len()
        )));
    }
    let (c, l, o) = (s.num_channels(), s.len(), s.output_dim());
    let mut channels = Vec::with_capacity(c * range.len());
    for ch in 0..c {
        channels.extend_from_slice(&s.channels.data()[ch * l + range.start..ch * l + range.end]);
    }
    Ok(GaitStream {
        subject: s.subject.clone(),
        task: s.task,
        channel_names: s.channel_names.clone(),
        time: s.time[range.clone()].to_vec(),
        channels: Tensor::new(vec![c, range.len()], channels)?,
        phase: s.phase[range.clone()].to_vec(),
        target_series: Tensor::new(
            vec![range.len(), o],
            s.target_series.data()[range.start * o..range.end * o].to_vec(),
        )?,
    })
}

/// Leading part for training, trailing `holdout_fraction` for evaluation.
pub fn split_stream(s: &GaitStream, holdout_fraction: f64) -> Result<(GaitStream, GaitStream)> {
    let cut = s.len() - (holdout_fraction * s.len() as f64).floor() as usize;
    Ok((slice_stream(s, 0..cut)?, slice_stream(s, cut..s.len())?))
}

pub fn windows_of(samples: &[LabeledSample]) -> Vec<TimeWindow> {
    samples.iter().map(|s| s.window.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct FoundationFit {
    /// Frozen.
    pub model: FoundationModel,
    pub norm: NormalizationStats,
    pub heldout_r2: BTreeMap<TaskId, f64>,
    pub history: LossHistory,
}

/// Trains the multi-task model on the leading part of every able stream and
/// scores each task on the trailing part. Normalization is fitted on the
/// training parts only.
pub fn fit_foundation(cfg: &ExperimentConfig, data: &Dataset) -> Result<FoundationFit> {
    let tasks = cfg.synth.task_ids();
    for s in &data.able_streams {
        if !tasks.contains(&s.task) {
            return Err(Error::config(
                "synth.tasks",
                format!("stream for subject {} has unknown task {}", s.subject.id, s.task),
            ));
        }
    }
    let splits = data
        .able_streams
        .iter()
        .map(|s| split_stream(s, cfg.holdout_fraction))
        .collect::<Result<Vec<_>>>()?;
    let train_refs: Vec<&GaitStream> = splits.iter().map(|(a, _)| a).collect();
    let norm = fit_normalizer(&train_refs)?;

    let mut train = Vec::new();
    let mut heldout: BTreeMap<TaskId, Vec<LabeledSample>> = BTreeMap::new();
    for (tr, te) in &splits {
        train.extend(make_windows(&norm.apply(tr)?, cfg.window_len, cfg.stride)?);
        heldout
            .entry(te.task)
            .or_default()
            .extend(make_windows(&norm.apply(te)?, cfg.window_len, 1)?);
    }
    let (model, history) = train_foundation(&train, &tasks, &cfg.foundation_arch, &cfg.foundation_train)?;
    let model = model.freeze();
    let heldout_r2 = heldout
        .iter()
        .map(|(&task, samples)| Ok((task, score(&model, samples)?)))
        .collect::<Result<_>>()?;
    Ok(FoundationFit {
        model,
        norm,
        heldout_r2,
        history,
    })
}

/// R² of a model's predictions on labeled samples.
pub fn score(model: &FoundationModel, samples: &[LabeledSample]) -> Result<f64> {
    let preds = samples
        .par_iter()
        .map(|s| model.predict(&s.window))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor> = samples.iter().map(|s| s.target.clone()).collect();
    r2(&preds, &targets)
}

/// One amputee's evaluation material: normalized windows labeled with the
/// desired outputs, and the index over the matched able subject.
#[derive(Debug, Clone)]
pub struct AmputeeCase {
    pub subject: SubjectMeta,
    pub matched_able: u32,
    pub samples: Vec<LabeledSample>,
    pub index: AbleBodiedIndex,
}

impl AmputeeCase {
    /// `(training, held-out)` with the first `⌊ratio·N⌋` samples for training.
    pub fn split(&self, ratio: f64) -> (&[LabeledSample], &[LabeledSample]) {
        let cut = split_point(self.samples.len(), ratio);
        self.samples.split_at(cut)
    }
}

pub fn split_point(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).min(n)
}

/// Desired-output-labeled amputee windows for `task`.
pub fn amputee_samples(
    cfg: &ExperimentConfig,
    amputee: &GaitStream,
    matched: &GaitStream,
    norm: &NormalizationStats,
) -> Result<Vec<LabeledSample>> {
    let desired = derive_desired_outputs(amputee, matched)?;
    make_windows(&norm.apply(&with_targets(amputee, &desired)?)?, cfg.window_len, 1)
}

/// Stride-1 normalized windows of the able stream an index is built from.
pub fn index_windows(cfg: &ExperimentConfig, able: &GaitStream, norm: &NormalizationStats) -> Result<Vec<TimeWindow>> {
    Ok(windows_of(&make_windows(&norm.apply(able)?, cfg.window_len, 1)?))
}

pub fn amputee_cases(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: &FoundationModel,
    norm: &NormalizationStats,
) -> Result<Vec<AmputeeCase>> {
    let task = cfg.amputee_task_id()?;
    data.amputees
        .par_iter()
        .map(|amp| {
            let matched = match_anthropometry(amp, &data.able)?;
            let able = data.able_stream(matched.id, task)?;
            let samples = amputee_samples(cfg, data.amputee_stream(amp.id, task)?, able, norm)?;
            let index = build_index(model, &index_windows(cfg, able, norm)?)?;
            Ok(AmputeeCase {
                subject: amp.clone(),
                matched_able: matched.id,
                samples,
                index,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_point_floors() {
        assert_eq!(split_point(100, 0.1), 10);
        assert_eq!(split_point(99, 0.1), 9);
        assert_eq!(split_point(10, 0.05), 0);
    }

    #[test]
    fn slices_cover_the_stream() {
        let cfg = SynthConfig {
            able_cycles: 3,
            ..Default::default()
        };
        let (able, _) = cfg.subjects();
        let s = synth_able(&cfg, &able[0], 0, 3).unwrap();
        let (a, b) = split_stream(&s, 0.25).unwrap();
        assert_eq!(a.len() + b.len(), s.len());
        assert_eq!(b.len(), (0.25 * s.len() as f64).floor() as usize);
        assert_eq!(b.channels.at2(2, 0), s.channels.at2(2, a.len()));
        assert_eq!(b.target_at(0), s.target_at(a.len()));
    }
}
