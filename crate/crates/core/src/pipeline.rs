//! File-to-file pipeline stages. Each stage reads the artifacts of earlier
//! stages by path, checks their provenance, and writes its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{load_csv, match_anthropometry, write_csv, NormalizationStats, SubjectMeta};
use crate::error::{Error, Result};
use crate::eval::{emit_report, fit_refurbish, sweep, RefurbishSetup, Strategy, SweepReport};
use crate::experiment::{amputee_samples, fit_foundation, generate, index_windows, AmputeeCase, Dataset};
use crate::foundation::{FoundationModel, TaskId};
use crate::nn::Tensor;
use crate::persist::{fmt_f64, Artifact};
use crate::refurbish::{train_refurbish, AmputeeTrainingTriple};
use crate::template::{build_index, AbleBodiedIndex, TemplateSet};

pub const MANIFEST: &str = "subjects.json";
pub const CHECKPOINT: &str = "foundation.ckpt";
pub const REPORT: &str = "report.json";

/// Index of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: Vec<String>,
    pub channel_names: Vec<String>,
    pub able: Vec<SubjectMeta>,
    pub amputees: Vec<SubjectMeta>,
}

fn stream_file(kind: &str, id: u32, task: &str) -> String {
    format!("{kind}_{id:03}_{task}.csv")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn index_file(dir: &Path, amputee: u32) -> PathBuf {
    dir.join(format!("index_{amputee:03}.idx"))
}

pub fn templates_file(dir: &Path, amputee: u32) -> PathBuf {
    dir.join(format!("templates_{amputee:03}.tpl"))
}

pub fn refurbish_file(dir: &Path, amputee: u32) -> PathBuf {
    dir.join(format!("refurbish_{amputee:03}.ckpt"))
}

/// Writes one CSV per subject and task plus the manifest. Returns the CSV paths.
pub fn cmd_synth(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = generate(&cfg.synth)?;
    let names: Vec<String> = cfg.synth.tasks.iter().map(|t| t.name.clone()).collect();
    let mut written = Vec::new();
    for (kind, streams) in [("able", &data.able_streams), ("amputee", &data.amputee_streams)] {
        for s in streams {
            let path = out_dir.join(stream_file(kind, s.subject.id, &names[s.task as usize]));
            write_csv(s, &path)?;
            written.push(path);
        }
    }
    let manifest = Manifest {
        tasks: names,
        channel_names: cfg.synth.channel_names.clone(),
        able: data.able,
        amputees: data.amputees,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_text(&out_dir.join(MANIFEST), &text)?;
    Ok(written)
}

/// Reads a dataset directory, mapping task names onto the configured task ids.
pub fn load_dataset(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Dataset> {
    let path = data_dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Format {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let mut ids = Vec::new();
    for name in &manifest.tasks {
        let id = cfg
            .synth
            .tasks
            .iter()
            .position(|t| &t.name == name)
            .ok_or_else(|| Error::config("synth.tasks", format!("data contains unknown task `{name}`")))?;
        ids.push((name, id as TaskId));
    }
    let load = |kind: &str, subjects: &[SubjectMeta]| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for s in subjects {
            s.validate()?;
            for (name, id) in &ids {
                let stream = load_csv(&data_dir.join(stream_file(kind, s.id, name)), s.clone(), *id)?;
                if stream.channel_names != manifest.channel_names {
                    return Err(Error::Format {
                        path: data_dir.join(stream_file(kind, s.id, name)).display().to_string(),
                        line: 1,
                        reason: "channel columns differ from the manifest".into(),
                    });
                }
                out.push(stream);
            }
        }
        Ok(out)
    };
    Ok(Dataset {
        able_streams: load("able", &manifest.able)?,
        amputee_streams: load("amputee", &manifest.amputees)?,
        able: manifest.able,
        amputees: manifest.amputees,
    })
}

/// The foundation checkpoint also carries the normalization it was trained under.
pub struct Checkpoint {
    pub model: FoundationModel,
    pub norm: NormalizationStats,
}

pub fn save_checkpoint(ck: &Checkpoint, cfg: &ExperimentConfig, extra: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let mut art = ck.model.to_artifact("foundation").with_meta("config", serde_json::to_string(cfg).expect("config serializes"));
    for (k, v) in extra {
        art = art.with_meta(k, v);
    }
    let (mean, std) = ck.norm.as_tensors();
    art.push_array("norm.mean", mean);
    art.push_array("norm.std", std);
    art.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let art = Artifact::load(path)?;
    art.expect_kind("foundation")?;
    let model = FoundationModel::from_artifact(&art)?;
    if !model.is_frozen() {
        return Err(Error::Usage(format!("{} holds an unfrozen model", path.display())));
    }
    let norm = NormalizationStats::from_tensors(art.array("norm.mean")?, art.array("norm.std")?)?;
    Ok(Checkpoint { model, norm })
}

/// Trains, freezes and saves the foundation model. Returns held-out R² per task name.
pub fn cmd_train_foundation(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<BTreeMap<String, f64>> {
    cfg.validate()?;
    let data = load_dataset(cfg, data_dir)?;
    let fit = fit_foundation(cfg, &data)?;
    let scores: BTreeMap<String, f64> = fit
        .heldout_r2
        .iter()
        .map(|(&t, &r)| (cfg.synth.tasks[t as usize].name.clone(), r))
        .collect();
    let extra = scores
        .iter()
        .map(|(name, r)| (format!("heldout_r2.{name}"), fmt_f64(*r)))
        .collect();
    save_checkpoint(
        &Checkpoint {
            model: fit.model,
            norm: fit.norm,
        },
        cfg,
        &extra,
        out,
    )?;
    Ok(scores)
}

/// Builds one index per amputee over its anthropometric match's stream for the amputee task.
pub fn cmd_build_index(cfg: &ExperimentConfig, data_dir: &Path, checkpoint: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let data = load_dataset(cfg, data_dir)?;
    let task = cfg.amputee_task_id()?;
    let mut written = Vec::new();
    for amp in &data.amputees {
        let matched = match_anthropometry(amp, &data.able)?;
        let windows = index_windows(cfg, data.able_stream(matched.id, task)?, &ck.norm)?;
        let index = build_index(&ck.model, &windows)?;
        let path = index_file(out_dir, amp.id);
        index
            .to_artifact()?
            .with_meta("amputee", amp.id)
            .with_meta("matched_able", matched.id)
            .save(&path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_index(path: &Path, model: &FoundationModel) -> Result<(AbleBodiedIndex, u32)> {
    let art = Artifact::load(path)?;
    let index = AbleBodiedIndex::from_artifact(&art)?;
    if index.model_checksum() != model.checksum() {
        return Err(Error::Provenance(format!(
            "{} was built from model {}, checkpoint is {}",
            path.display(),
            index.model_checksum(),
            model.checksum()
        )));
    }
    Ok((index, art.meta_parse("matched_able")?))
}

/// Evaluation cases from files: stored indices plus recomputed amputee samples.
pub fn load_cases(cfg: &ExperimentConfig, data_dir: &Path, ck: &Checkpoint, index_dir: &Path) -> Result<Vec<AmputeeCase>> {
    let data = load_dataset(cfg, data_dir)?;
    let task = cfg.amputee_task_id()?;
    data.amputees
        .iter()
        .map(|amp| {
            let (index, matched) = load_index(&index_file(index_dir, amp.id), &ck.model)?;
            let samples = amputee_samples(cfg, data.amputee_stream(amp.id, task)?, data.able_stream(matched, task)?, &ck.norm)?;
            Ok(AmputeeCase {
                subject: amp.clone(),
                matched_able: matched,
                samples,
                index,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedTemplates {
    pub amputee: u32,
    pub path: PathBuf,
    pub templates: usize,
    pub skipped: usize,
}

/// Correction templates for the training split (`ratio`) of every amputee.
pub fn cmd_map_templates(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    checkpoint: &Path,
    index_dir: &Path,
    ratio: f64,
    out_dir: &Path,
) -> Result<Vec<MappedTemplates>> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let cases = load_cases(cfg, data_dir, &ck, index_dir)?;
    let mut out = Vec::new();
    for case in &cases {
        let (tr, _) = case.split(ratio);
        let desired: Vec<Tensor> = tr.iter().map(|s| s.target.clone()).collect();
        let set = crate::template::compute_corrections(&case.index, &desired, &cfg.template)?;
        let path = templates_file(out_dir, case.subject.id);
        set.to_artifact(&ck.model.checksum(), &cfg.template)?
            .with_meta("amputee", case.subject.id)
            .with_meta("train_ratio", fmt_f64(ratio))
            .save(&path)?;
        out.push(MappedTemplates {
            amputee: case.subject.id,
            path,
            templates: set.templates.len(),
            skipped: set.skipped.len(),
        });
    }
    Ok(out)
}

/// Trains one refurbish module per amputee from its stored templates.
pub fn cmd_train_refurbish(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    checkpoint: &Path,
    index_dir: &Path,
    templates_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let cases = load_cases(cfg, data_dir, &ck, index_dir)?;
    let mut written = Vec::new();
    for case in &cases {
        let path = templates_file(templates_dir, case.subject.id);
        let art = Artifact::load(&path)?;
        if art.meta("model_checksum")? != ck.model.checksum() {
            return Err(Error::Provenance(format!(
                "{} was mapped under a different foundation checkpoint",
                path.display()
            )));
        }
        let set = TemplateSet::from_artifact(&art)?;
        let triples = set
            .templates
            .into_iter()
            .map(|t| {
                let s = case.samples.get(t.k).ok_or_else(|| Error::Format {
                    path: path.display().to_string(),
                    line: 0,
                    reason: format!("template position {} beyond the amputee stream", t.k),
                })?;
                Ok(AmputeeTrainingTriple {
                    x_amp: s.window.clone(),
                    x_corr: t.corrected,
                    y_amp: s.target.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (h, history) = train_refurbish(&triples, &ck.model, &cfg.refurbish_arch, &cfg.refurbish)?;
        let out = refurbish_file(out_dir, case.subject.id);
        h.to_artifact()
            .with_meta("amputee", case.subject.id)
            .with_meta("foundation_checksum", ck.model.checksum())
            .with_meta("final_loss", fmt_f64(*history.last().expect("at least one epoch")))
            .save(&out)?;
        written.push(out);
    }
    Ok(written)
}

/// Runs the requested strategies over `ratios` and writes `report.json`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    checkpoint: &Path,
    index_dir: &Path,
    strategies: &[Strategy],
    out_dir: &Path,
) -> Result<SweepReport> {
    cfg.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let cases = load_cases(cfg, data_dir, &ck, index_dir)?;
    let report = sweep(&ck.model, &cases, cfg, strategies)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&out_dir.join(REPORT), &text)?;
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<SweepReport> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn cmd_report(report: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    emit_report(&load_report(report)?, out_dir)
}

/// Held-out template tracking of a refurbish module trained at `ratio`;
/// returns `(RMSE(h(x), x_corr), RMSE(x, x_corr))` per amputee.
pub fn tracking(
    cfg: &ExperimentConfig,
    g_frozen: &FoundationModel,
    cases: &[AmputeeCase],
    ratio: f64,
) -> Result<Vec<(u32, f64, f64)>> {
    let setup = RefurbishSetup::from_config(cfg);
    cases
        .iter()
        .map(|case| {
            let out = fit_refurbish(g_frozen, &[case], ratio, &setup)?;
            let (h_rmse, raw_rmse) = crate::eval::template_tracking(&out.h, case, ratio, &cfg.template)?;
            Ok((case.subject.id, h_rmse, raw_rmse))
        })
        .collect()
}

