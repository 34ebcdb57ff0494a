//! Seeded synthetic gait generator.
//!
//! Every channel and the target are truncated Fourier series in gait phase.
//! Subjects scale the series according to their anthropometry, each stride
//! draws its own cadence and amplitude jitter, and Gaussian sensor noise is
//! added on top. Amputee streams are able streams passed through a set of
//! distortions while keeping the undistorted target.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream::{GaitStream, SubjectKind, SubjectMeta};
use crate::error::{Error, Result};
use crate::foundation::TaskId;
use crate::nn::Tensor;

/// Fourier coefficients: entry `h` is `[a_h, b_h]` for
/// `a_h cos(2πhφ) + b_h sin(2πhφ)`; entry 0 holds the constant term in `a_0`.
pub type Fourier = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// Strides per second.
    pub cadence: f64,
    pub channels: Vec<Fourier>,
    pub target: Fourier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// Channels with no sensor on the missing limb; recorded as zero.
    pub dropout_channels: Vec<usize>,
    /// Phase lag of the remaining channels, in cycles.
    pub phase_lag: f64,
    /// Gain applied during the first half of every cycle.
    pub asymmetry: f64,
    pub compensatory_amplitude: f64,
    pub compensatory_harmonic: usize,
    /// Relative per-amputee spread of lag, asymmetry and compensation.
    pub subject_spread: f64,
}

impl DistortionParams {
    pub fn identity() -> Self {
        Self {
            dropout_channels: Vec::new(),
            phase_lag: 0.0,
            asymmetry: 1.0,
            compensatory_amplitude: 0.0,
            compensatory_harmonic: 2,
            subject_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tasks: Vec<TaskSpec>,
    pub channel_names: Vec<String>,
    pub samples_per_second: f64,
    pub noise_std: f64,
    /// Relative std of per-stride cadence.
    pub cadence_jitter: f64,
    /// Relative std of per-stride amplitude.
    pub amplitude_jitter: f64,
    pub distortion: DistortionParams,
    pub able_subjects: usize,
    pub amputee_subjects: usize,
    pub able_cycles: usize,
    pub amputee_cycles: usize,
    pub seed: u64,
}

fn mirror(f: &Fourier) -> Fourier {
    // Half a cycle later: harmonic h picks up a factor (−1)^h.
    f.iter()
        .enumerate()
        .map(|(h, [a, b])| if h % 2 == 1 { [-a, -b] } else { [*a, *b] })
        .collect()
}

fn scaled(f: &Fourier, gain: f64, dc_shift: f64) -> Fourier {
    f.iter()
        .enumerate()
        .map(|(h, [a, b])| {
            if h == 0 {
                [a + dc_shift, 0.0]
            } else {
                [a * gain, b * gain]
            }
        })
        .collect()
}

fn task_tables(gain: f64, thigh_dc: f64, knee_dc: f64, knee_h2: f64) -> (Vec<Fourier>, Fourier) {
    let thigh: Fourier = vec![[0.1 + thigh_dc, 0.0], [0.45, 0.05], [0.05, -0.04], [0.01, 0.02]];
    let shank: Fourier = vec![[0.0, 0.0], [0.2, 0.6], [-0.25, 0.15], [0.08, -0.05]];
    let foot: Fourier = vec![
        [1.0, 0.0],
        [0.3, -0.2],
        [0.35, 0.1],
        [-0.15, 0.12],
        [0.08, 0.05],
    ];
    let mut channels = Vec::new();
    for base in [&thigh, &shank, &foot] {
        let left = scaled(base, gain, 0.0);
        channels.push(mirror(&left));
        channels.push(left);
    }
    let knee: Fourier = vec![
        [0.55 + knee_dc, 0.0],
        [-0.30 * gain, -0.12 * gain],
        [-0.18 * gain * knee_h2, 0.14 * gain * knee_h2],
        [0.04 * gain, 0.05 * gain],
    ];
    (channels, knee)
}

impl Default for SynthConfig {
    fn default() -> Self {
        let specs = [
            ("walk-slow", 0.85, 0.85, 0.0, -0.05, 1.0),
            ("walk-normal", 1.0, 1.0, 0.0, 0.0, 1.0),
            ("ramp-ascent", 0.9, 1.05, 0.15, 0.1, 0.7),
        ];
        let tasks = specs
            .iter()
            .map(|&(name, cadence, gain, thigh_dc, knee_dc, knee_h2)| {
                let (channels, target) = task_tables(gain, thigh_dc, knee_dc, knee_h2);
                TaskSpec {
                    name: name.to_string(),
                    cadence,
                    channels,
                    target,
                }
            })
            .collect();
        Self {
            tasks,
            channel_names: [
                "thigh_r", "thigh_l", "shank_r", "shank_l", "foot_r", "foot_l",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            samples_per_second: 40.0,
            noise_std: 0.08,
            cadence_jitter: 0.1,
            amplitude_jitter: 0.15,
            distortion: DistortionParams {
                dropout_channels: vec![4],
                phase_lag: 0.08,
                asymmetry: 1.3,
                compensatory_amplitude: 0.25,
                compensatory_harmonic: 2,
                subject_spread: 0.2,
            },
            able_subjects: 10,
            amputee_subjects: 3,
            able_cycles: 60,
            amputee_cycles: 30,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("synth.tasks", "at least one task"));
        }
        let c = self.channel_names.len();
        if c == 0 {
            return Err(Error::config("synth.channel_names", "at least one channel"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.channels.len() != c {
                return Err(Error::config(
                    format!("synth.tasks[{i}].channels"),
                    format!("expected {c} channel tables, got {}", t.channels.len()),
                ));
            }
            if !(t.cadence.is_finite() && t.cadence > 0.0) {
                return Err(Error::config(format!("synth.tasks[{i}].cadence"), "must be positive"));
            }
            if t.target.is_empty() || t.channels.iter().any(Vec::is_empty) {
                return Err(Error::config(
                    format!("synth.tasks[{i}]"),
                    "Fourier tables need at least the constant term",
                ));
            }
        }
        let nonneg = [
            ("synth.noise_std", self.noise_std),
            ("synth.cadence_jitter", self.cadence_jitter),
            ("synth.amplitude_jitter", self.amplitude_jitter),
            ("synth.distortion.phase_lag", self.distortion.phase_lag),
            ("synth.distortion.subject_spread", self.distortion.subject_spread),
        ];
        for (field, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        if self.cadence_jitter >= 0.5 {
            return Err(Error::config("synth.cadence_jitter", "must be < 0.5"));
        }
        if !(self.samples_per_second.is_finite() && self.samples_per_second > 0.0) {
            return Err(Error::config("synth.samples_per_second", "must be positive"));
        }
        if !(self.distortion.asymmetry.is_finite() && self.distortion.asymmetry > 0.0) {
            return Err(Error::config("synth.distortion.asymmetry", "must be > 0"));
        }
        if !self.distortion.compensatory_amplitude.is_finite() {
            return Err(Error::config("synth.distortion.compensatory_amplitude", "must be finite"));
        }
        if self.distortion.subject_spread >= 1.0 {
            return Err(Error::config("synth.distortion.subject_spread", "must be < 1"));
        }
        if let Some(&bad) = self.distortion.dropout_channels.iter().find(|&&ch| ch >= c) {
            return Err(Error::config(
                "synth.distortion.dropout_channels",
                format!("channel {bad} out of range"),
            ));
        }
        for (field, v) in [
            ("synth.able_subjects", self.able_subjects),
            ("synth.amputee_subjects", self.amputee_subjects),
            ("synth.able_cycles", self.able_cycles),
            ("synth.amputee_cycles", self.amputee_cycles),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        (0..self.tasks.len() as TaskId).collect()
    }

    fn task(&self, task: TaskId) -> Result<&TaskSpec> {
        self.tasks
            .get(task as usize)
            .ok_or_else(|| Error::config("task", format!("unknown task {task}")))
    }

    /// Able subjects get ids `0..able_subjects`, amputees follow.
    pub fn subjects(&self) -> (Vec<SubjectMeta>, Vec<SubjectMeta>) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0xA17B, 0, 0));
        let mut draw = |id: u32, kind| SubjectMeta {
            id,
            height: rng.random_range(1.55..1.95),
            mass: rng.random_range(50.0..100.0),
            age: rng.random_range(20.0..70.0),
            kind,
        };
        let able = (0..self.able_subjects as u32)
            .map(|i| draw(i, SubjectKind::Able))
            .collect();
        let amputees = (0..self.amputee_subjects as u32)
            .map(|i| draw(self.able_subjects as u32 + i, SubjectKind::Amputee))
            .collect();
        (able, amputees)
    }
}

fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fourier(f: &Fourier, phase: f64, gain: f64) -> f64 {
    let mut v = f[0][0];
    for (h, [a, b]) in f.iter().enumerate().skip(1) {
        let w = TAU * h as f64 * phase;
        v += gain * (a * w.cos() + b * w.sin());
    }
    v
}

/// Per-subject gains derived from anthropometry and a subject-seeded draw.
struct SubjectProfile {
    channel_gain: Vec<f64>,
    target_gain: f64,
    cadence: f64,
}

fn profile(cfg: &SynthConfig, subject: &SubjectMeta) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5B7, subject.id as u64, 0));
    let stature = subject.height / 1.75;
    let channel_gain = (0..cfg.channel_names.len())
        .map(|_| stature.sqrt() * (1.0 + 0.08 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let target_gain = stature * (1.0 - 0.003 * (subject.age - 45.0)) * (1.0 + 0.02 * (subject.mass / 75.0 - 1.0));
    SubjectProfile {
        channel_gain,
        target_gain,
        cadence: (1.0 / stature).sqrt(),
    }
}

/// Pieces of an able recording before channel synthesis.
struct Skeleton {
    phase: Vec<f64>,
    stride_gain: Vec<f64>,
    noise: Vec<f64>,
}

fn skeleton(cfg: &SynthConfig, subject: &SubjectMeta, spec: &TaskSpec, task: TaskId, cycles: usize) -> Skeleton {
    let prof = profile(cfg, subject);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x57E, subject.id as u64, task as u64 + 1));
    let mut phase = Vec::new();
    let mut stride_gain = Vec::new();
    let normal = StandardNormal;
    for _ in 0..cycles {
        let z1: f64 = normal.sample(&mut rng);
        let z2: f64 = normal.sample(&mut rng);
        let cadence = spec.cadence * prof.cadence * (1.0 + cfg.cadence_jitter * z1).max(0.5);
        let gain = (1.0 + cfg.amplitude_jitter * z2).max(0.2);
        let n = ((cfg.samples_per_second / cadence).round() as usize).max(2);
        for i in 0..n {
            phase.push(i as f64 / n as f64);
            stride_gain.push(gain);
        }
    }
    let c = cfg.channel_names.len();
    let noise = (0..c * phase.len())
        .map(|_| cfg.noise_std * Distribution::<f64>::sample(&normal, &mut rng))
        .collect();
    Skeleton {
        phase,
        stride_gain,
        noise,
    }
}

fn assemble(
    cfg: &SynthConfig,
    subject: &SubjectMeta,
    task: TaskId,
    sk: &Skeleton,
    channel_data: Vec<f64>,
    target: Vec<f64>,
) -> GaitStream {
    let l = sk.phase.len();
    GaitStream {
        subject: subject.clone(),
        task,
        channel_names: cfg.channel_names.clone(),
        time: (0..l).map(|i| i as f64 / cfg.samples_per_second).collect(),
        channels: Tensor::new(vec![cfg.channel_names.len(), l], channel_data).expect("geometry"),
        phase: sk.phase.clone(),
        target_series: Tensor::new(vec![l, 1], target).expect("geometry"),
    }
}

fn target_series(spec: &TaskSpec, prof: &SubjectProfile, sk: &Skeleton) -> Vec<f64> {
    sk.phase
        .iter()
        .zip(&sk.stride_gain)
        .map(|(&p, &g)| fourier(&spec.target, p, g * prof.target_gain))
        .collect()
}

/// Able-bodied stream of `cycles` strides.
pub fn synth_able(cfg: &SynthConfig, subject: &SubjectMeta, task: TaskId, cycles: usize) -> Result<GaitStream> {
    synth_distorted(cfg, subject, task, cycles, &DistortionParams::identity(), 1.0)
}

/// Amputee stream: the subject's able stream with missing-limb channels
/// zeroed, lag, half-cycle asymmetry and a compensatory harmonic applied to
/// the remaining channels. Targets stay undistorted.
pub fn synth_amputee(cfg: &SynthConfig, subject: &SubjectMeta, task: TaskId, cycles: usize) -> Result<GaitStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0xD15, subject.id as u64, 0));
    let spread = 1.0 + cfg.distortion.subject_spread * rng.random_range(-1.0..=1.0);
    synth_distorted(cfg, subject, task, cycles, &cfg.distortion, spread)
}

fn synth_distorted(
    cfg: &SynthConfig,
    subject: &SubjectMeta,
    task: TaskId,
    cycles: usize,
    d: &DistortionParams,
    spread: f64,
) -> Result<GaitStream> {
    if cycles == 0 {
        return Err(Error::config("cycles", "must be >= 1"));
    }
    subject.validate()?;
    let spec = cfg.task(task)?;
    let prof = profile(cfg, subject);
    let sk = skeleton(cfg, subject, spec, task, cycles);
    let l = sk.phase.len();
    let lag = d.phase_lag * spread;
    let asym = 1.0 + (d.asymmetry - 1.0) * spread;
    let comp = d.compensatory_amplitude * spread;
    let mut data = vec![0.0; cfg.channel_names.len() * l];
    for (c, table) in spec.channels.iter().enumerate() {
        if d.dropout_channels.contains(&c) {
            continue;
        }
        let offset = c as f64 * TAU / cfg.channel_names.len() as f64;
        for t in 0..l {
            let p = sk.phase[t];
            let mut v = fourier(table, p - lag, sk.stride_gain[t] * prof.channel_gain[c]);
            if p < 0.5 {
                v *= asym;
            }
            v += comp * (TAU * d.compensatory_harmonic as f64 * p + offset).sin();
            data[c * l + t] = v + sk.noise[c * l + t];
        }
    }
    let target = target_series(spec, &prof, &sk);
    Ok(assemble(cfg, subject, task, &sk, data, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            noise_std: 0.0,
            cadence_jitter: 0.0,
            amplitude_jitter: 0.0,
            samples_per_second: 20.0,
            ..SynthConfig::default()
        }
    }

    fn subject(cfg: &SynthConfig) -> SubjectMeta {
        cfg.subjects().0[3].clone()
    }

    #[test]
    fn default_is_valid() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn noiseless_cycles_repeat() {
        let cfg = small();
        let st = synth_able(&cfg, &subject(&cfg), 1, 2).unwrap();
        let half = st.len() / 2;
        assert_eq!(st.cycle_ids()[half], 1);
        assert_eq!(st.cycle_ids()[half - 1], 0);
        for t in 0..half {
            assert_eq!(st.phase[t], st.phase[t + half]);
            assert_eq!(st.target_at(t), st.target_at(t + half));
            for c in 0..st.num_channels() {
                assert_eq!(st.channels.at2(c, t), st.channels.at2(c, t + half));
            }
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = SynthConfig::default();
        let s = subject(&cfg);
        assert_eq!(synth_able(&cfg, &s, 0, 3).unwrap(), synth_able(&cfg, &s, 0, 3).unwrap());
        assert_eq!(
            synth_amputee(&cfg, &s, 2, 3).unwrap(),
            synth_amputee(&cfg, &s, 2, 3).unwrap()
        );
    }

    #[test]
    fn identity_distortion_equals_able() {
        let mut cfg = SynthConfig::default();
        cfg.distortion = DistortionParams::identity();
        cfg.distortion.subject_spread = 0.3;
        let s = subject(&cfg);
        let mut amp = synth_amputee(&cfg, &s, 1, 4).unwrap();
        let able = synth_able(&cfg, &s, 1, 4).unwrap();
        amp.subject.kind = able.subject.kind;
        assert_eq!(amp, able);
    }

    #[test]
    fn dropout_channel_is_zero() {
        let mut cfg = SynthConfig::default();
        cfg.distortion.dropout_channels = vec![3];
        let s = subject(&cfg);
        let amp = synth_amputee(&cfg, &s, 0, 3).unwrap();
        assert!((0..amp.len()).all(|t| amp.channels.at2(3, t) == 0.0));
        assert!((0..amp.len()).any(|t| amp.channels.at2(2, t) != 0.0));
    }

    #[test]
    fn asymmetry_scales_first_half_cycles() {
        let mut cfg = small();
        cfg.distortion = DistortionParams::identity();
        cfg.distortion.asymmetry = 1.2;
        let s = subject(&cfg);
        let amp = synth_amputee(&cfg, &s, 0, 3).unwrap();
        let able = synth_able(&cfg, &s, 0, 3).unwrap();
        for t in 0..amp.len() {
            let factor = if amp.phase[t] < 0.5 { 1.2 } else { 1.0 };
            for c in 0..amp.num_channels() {
                let want = able.channels.at2(c, t) * factor;
                assert!((amp.channels.at2(c, t) - want).abs() < 1e-12);
            }
        }
        assert_eq!(amp.target_series, able.target_series);
    }

    #[test]
    fn phase_wraps_within_unit_interval() {
        let cfg = SynthConfig::default();
        let st = synth_able(&cfg, &subject(&cfg), 2, 5).unwrap();
        st.validate().unwrap();
        assert_eq!(*st.cycle_ids().last().unwrap(), 4);
    }
}
