mod common;

use std::path::Path;

use common::*;
use reprog::config::ExperimentConfig;
use reprog::eval::Strategy;
use reprog::experiment::{fit_foundation, generate};
use reprog::persist::Artifact;
use reprog::pipeline::{
    cmd_build_index, cmd_eval, cmd_map_templates, cmd_report, cmd_synth, cmd_train_foundation, cmd_train_refurbish,
    load_checkpoint, load_dataset, templates_file, CHECKPOINT, MANIFEST, REPORT,
};
use reprog::Error;

/// Every stage, file to file, under `root`.
fn run_all(cfg: &ExperimentConfig, root: &Path) {
    let data = root.join("data");
    let ckpt = root.join("model").join(CHECKPOINT);
    let index = root.join("index");
    let templates = root.join("templates");
    cmd_synth(cfg, &data).unwrap();
    cmd_train_foundation(cfg, &data, &ckpt).unwrap();
    cmd_build_index(cfg, &data, &ckpt, &index).unwrap();
    cmd_map_templates(cfg, &data, &ckpt, &index, 0.2, &templates).unwrap();
    cmd_train_refurbish(cfg, &data, &ckpt, &index, &templates, &root.join("refurbish")).unwrap();
    cmd_eval(cfg, &data, &ckpt, &index, &Strategy::ALL, &root.join("eval")).unwrap();
    cmd_report(&root.join("eval").join(REPORT), &root.join("report")).unwrap();
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let cfg = tiny_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(&cfg, a.path());
    run_all(&cfg, b.path());
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs between runs");
    }
    for f in ["report/results.csv", "report/summary.json", "report/summary.md", "report/chart.svg"] {
        assert!(ta.contains_key(f), "missing {f}");
    }
    assert!(ta.contains_key("refurbish/refurbish_003.ckpt"));
}

#[test]
fn synth_writes_one_file_per_subject_and_task() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let files = cmd_synth(&cfg, dir.path()).unwrap();
    assert_eq!(files.len(), (3 + 2) * 3);
    assert!(dir.path().join(MANIFEST).exists());
    assert!(dir.path().join("able_000_walk-normal.csv").exists());
    assert!(dir.path().join("amputee_004_ramp-ascent.csv").exists());
}

#[test]
fn loaded_data_equals_generated_data() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, dir.path()).unwrap();
    let loaded = load_dataset(&cfg, dir.path()).unwrap();
    let made = generate(&cfg.synth).unwrap();
    assert_eq!(loaded.able, made.able);
    assert_eq!(loaded.amputees, made.amputees);
    assert_eq!(loaded.able_streams, made.able_streams);
    assert_eq!(loaded.amputee_streams, made.amputee_streams);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&cfg, &data).unwrap();
    let ckpt = dir.path().join(CHECKPOINT);
    let scores = cmd_train_foundation(&cfg, &data, &ckpt).unwrap();
    assert_eq!(scores.len(), 3);

    let fit = fit_foundation(&cfg, &generate(&cfg.synth).unwrap()).unwrap();
    let loaded = load_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.model.checksum(), fit.model.checksum());
    assert_eq!(loaded.norm, fit.norm);
    let mut r = rng(3);
    for task in 0..3 {
        let x = uniform(&mut r, &[6, cfg.window_len]);
        let a = fit.model.predict_values(&x, task).unwrap();
        let b = loaded.model.predict_values(&x, task).unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }
}

#[test]
fn unknown_task_in_data_is_a_config_error() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, dir.path()).unwrap();
    let mut other = cfg.clone();
    other.synth.tasks[2].name = "stairs".into();
    match load_dataset(&other, dir.path()) {
        Err(Error::Config { field, reason }) => {
            assert_eq!(field, "synth.tasks");
            assert!(reason.contains("ramp-ascent"), "{reason}");
        }
        other => panic!("expected a configuration error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn missing_data_is_an_io_error() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_train_foundation(&cfg, &dir.path().join("nowhere"), &dir.path().join("m.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

/// Data, two checkpoints trained under different seeds, and an index from the first.
fn two_checkpoints(cfg: &ExperimentConfig, root: &Path) {
    cmd_synth(cfg, &root.join("data")).unwrap();
    cmd_train_foundation(cfg, &root.join("data"), &root.join("a.ckpt")).unwrap();
    let mut other = cfg.clone();
    other.foundation_train.seed += 100;
    cmd_train_foundation(&other, &root.join("data"), &root.join("b.ckpt")).unwrap();
    cmd_build_index(cfg, &root.join("data"), &root.join("a.ckpt"), &root.join("index")).unwrap();
}

#[test]
fn index_from_another_checkpoint_is_a_provenance_error() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    two_checkpoints(&cfg, root);
    let (data, index) = (root.join("data"), root.join("index"));
    let err = cmd_eval(&cfg, &data, &root.join("b.ckpt"), &index, &Strategy::ALL, &root.join("eval")).unwrap_err();
    assert!(matches!(err, Error::Provenance(_)), "{err}");
    let err = cmd_map_templates(&cfg, &data, &root.join("b.ckpt"), &index, 0.2, &root.join("t")).unwrap_err();
    assert!(matches!(err, Error::Provenance(_)), "{err}");
}

#[test]
fn templates_from_another_checkpoint_are_a_provenance_error() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    two_checkpoints(&cfg, root);
    let (data, index) = (root.join("data"), root.join("index"));
    cmd_map_templates(&cfg, &data, &root.join("a.ckpt"), &index, 0.2, &root.join("t")).unwrap();
    cmd_build_index(&cfg, &data, &root.join("b.ckpt"), &root.join("index_b")).unwrap();
    let err = cmd_train_refurbish(&cfg, &data, &root.join("b.ckpt"), &root.join("index_b"), &root.join("t"), &root.join("h"))
        .unwrap_err();
    assert!(matches!(err, Error::Provenance(_)), "{err}");
}

#[test]
fn map_templates_reports_boundary_skips() {
    let mut cfg = tiny_config();
    cfg.template.m = 1;
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    cmd_synth(&cfg, &root.join("data")).unwrap();
    cmd_train_foundation(&cfg, &root.join("data"), &root.join("a.ckpt")).unwrap();
    cmd_build_index(&cfg, &root.join("data"), &root.join("a.ckpt"), &root.join("index")).unwrap();
    let mapped = cmd_map_templates(&cfg, &root.join("data"), &root.join("a.ckpt"), &root.join("index"), 0.2, &root.join("t"))
        .unwrap();
    assert_eq!(mapped.len(), 2);
    for m in &mapped {
        assert_eq!(m.skipped, 2);
        assert!(m.templates > 0);
        let art = Artifact::load(&templates_file(&root.join("t"), m.amputee)).unwrap();
        assert_eq!(art.meta_parse::<f64>("train_ratio").unwrap(), 0.2);
    }
}

#[test]
fn stages_do_not_modify_their_inputs() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    two_checkpoints(&cfg, root);
    let before = read_tree(root);
    cmd_map_templates(&cfg, &root.join("data"), &root.join("a.ckpt"), &root.join("index"), 0.2, &root.join("t")).unwrap();
    cmd_eval(&cfg, &root.join("data"), &root.join("a.ckpt"), &root.join("index"), &[Strategy::Cross], &root.join("e"))
        .unwrap();
    let after = read_tree(root);
    for (name, bytes) in &before {
        assert!(&after[name] == bytes, "{name} changed");
    }
}
