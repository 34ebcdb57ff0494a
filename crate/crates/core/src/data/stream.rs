use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::{LabeledSample, TaskId, TimeWindow};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectKind {
    Able,
    Amputee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: u32,
    /// metres
    pub height: f64,
    /// kilograms
    pub mass: f64,
    /// years
    pub age: f64,
    pub kind: SubjectKind,
}

impl SubjectMeta {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("height", self.height), ("mass", self.mass), ("age", self.age)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("subject.{}.{name}", self.id),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// A multichannel recording for one subject and task.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitStream {
    pub subject: SubjectMeta,
    pub task: TaskId,
    pub channel_names: Vec<String>,
    /// Seconds since the start of the recording.
    pub time: Vec<f64>,
    /// `[C × L]`
    pub channels: Tensor,
    /// Gait-cycle fraction in `[0, 1)`, wrapping at each new cycle.
    pub phase: Vec<f64>,
    /// `[L × O]`
    pub target_series: Tensor,
}

impl GaitStream {
    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.dim(0)
    }

    pub fn output_dim(&self) -> usize {
        self.target_series.dim(1)
    }

    pub fn target_at(&self, k: usize) -> Tensor {
        let o = self.output_dim();
        Tensor::vector(self.target_series.data()[k * o..(k + 1) * o].to_vec())
    }

    /// Cycle number of every sample, counting phase wraps from 0.
    pub fn cycle_ids(&self) -> Vec<usize> {
        cycle_ids(&self.phase)
    }

    /// `[C × T]` slice of channels ending at sample `k` inclusive.
    pub fn window_values(&self, k: usize, window_len: usize) -> Tensor {
        let (c, l) = (self.num_channels(), self.len());
        let start = k + 1 - window_len;
        let mut data = Vec::with_capacity(c * window_len);
        for ch in 0..c {
            data.extend_from_slice(&self.channels.data()[ch * l + start..=ch * l + k]);
        }
        Tensor::new(vec![c, window_len], data).expect("window geometry")
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        let checks = [
            ("time", self.time.len()),
            ("channels", self.channels.dim(1)),
            ("target_series", self.target_series.dim(0)),
        ];
        for (axis, actual) in checks {
            if actual != l {
                return Err(Error::Dimension {
                    op: "gait_stream",
                    axis,
                    expected: l,
                    actual,
                });
            }
        }
        if self.channel_names.len() != self.num_channels() {
            return Err(Error::Dimension {
                op: "gait_stream",
                axis: "channel_names",
                expected: self.num_channels(),
                actual: self.channel_names.len(),
            });
        }
        if let Some(bad) = self.phase.iter().position(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Data {
                path: "<stream>".into(),
                line: bad + 2,
                reason: format!("phase {} outside [0, 1)", self.phase[bad]),
            });
        }
        Ok(())
    }
}

pub fn cycle_ids(phase: &[f64]) -> Vec<usize> {
    let mut cycle = 0;
    let mut out = Vec::with_capacity(phase.len());
    for (i, p) in phase.iter().enumerate() {
        if i > 0 && *p < phase[i - 1] {
            cycle += 1;
        }
        out.push(cycle);
    }
    out
}

/// Next-step samples: windows `[k−T+1 ..= k]` with target `target_series[k+1]`
/// for `k = T−1, T−1+stride, …` while `k ≤ L−2`.
pub fn make_windows(stream: &GaitStream, window_len: usize, stride: usize) -> Result<Vec<LabeledSample>> {
    if window_len == 0 {
        return Err(Error::config("window_len", "must be >= 1"));
    }
    if stride == 0 {
        return Err(Error::config("stride", "must be >= 1"));
    }
    let l = stream.len();
    if l < window_len + 1 {
        return Err(Error::InsufficientData(format!(
            "stream of length {l} cannot hold a window of {window_len} plus a target"
        )));
    }
    Ok((window_len - 1..=l - 2)
        .step_by(stride)
        .map(|k| LabeledSample {
            window: TimeWindow {
                values: stream.window_values(k, window_len),
                task: stream.task,
                time_index: k,
            },
            target: stream.target_at(k + 1),
        })
        .collect())
}

/// Desired amputee outputs aligned with an amputee sample stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredOutputSeries {
    pub values: Vec<Tensor>,
    pub phase: Vec<f64>,
}

impl DesiredOutputSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// For every amputee sample, the matched able subject's target at the same
/// gait phase, linearly interpolated within the corresponding able cycle
/// (cycle numbers wrap if the able stream is shorter).
pub fn derive_desired_outputs(
    amputee: &GaitStream,
    able: &GaitStream,
) -> Result<DesiredOutputSeries> {
    if amputee.task != able.task {
        return Err(Error::config(
            "task",
            format!(
                "amputee task {} differs from reference task {}",
                amputee.task, able.task
            ),
        ));
    }
    if able.is_empty() {
        return Err(Error::InsufficientData("empty reference stream".into()));
    }
    let o = able.output_dim();
    let able_cycles = able.cycle_ids();
    let n_cycles = able_cycles.last().map_or(0, |c| c + 1);
    let mut starts = vec![0usize; n_cycles + 1];
    for (i, &c) in able_cycles.iter().enumerate().rev() {
        starts[c] = i;
    }
    starts[n_cycles] = able.len();

    let targets = able.target_series.data();
    let amp_cycles = amputee.cycle_ids();
    let mut values = Vec::with_capacity(amputee.len());
    for (k, &phase) in amputee.phase.iter().enumerate() {
        let cyc = amp_cycles[k] % n_cycles;
        let (lo, hi) = (starts[cyc], starts[cyc + 1]);
        // Points of this cycle plus one neighbour on each side (phase shifted by ∓1).
        let mut pts: Vec<(f64, usize)> = Vec::with_capacity(hi - lo + 2);
        if lo > 0 {
            pts.push((able.phase[lo - 1] - 1.0, lo - 1));
        }
        pts.extend((lo..hi).map(|i| (able.phase[i], i)));
        if hi < able.len() {
            pts.push((able.phase[hi] + 1.0, hi));
        }
        let pos = pts.partition_point(|(p, _)| *p <= phase);
        let row = |i: usize| &targets[i * o..(i + 1) * o];
        let value: Vec<f64> = if pos == 0 {
            row(pts[0].1).to_vec()
        } else if pos == pts.len() {
            row(pts[pts.len() - 1].1).to_vec()
        } else {
            let (p0, i0) = pts[pos - 1];
            let (p1, i1) = pts[pos];
            let w = (phase - p0) / (p1 - p0);
            row(i0)
                .iter()
                .zip(row(i1))
                .map(|(a, b)| a + w * (b - a))
                .collect()
        };
        values.push(Tensor::vector(value));
    }
    Ok(DesiredOutputSeries {
        values,
        phase: amputee.phase.clone(),
    })
}

/// Replaces a stream's targets with a desired-output series of equal length.
pub fn with_targets(stream: &GaitStream, desired: &DesiredOutputSeries) -> Result<GaitStream> {
    if desired.len() != stream.len() {
        return Err(Error::Dimension {
            op: "with_targets",
            axis: "time",
            expected: stream.len(),
            actual: desired.len(),
        });
    }
    let o = desired.values.first().map_or(1, Tensor::numel);
    let data: Vec<f64> = desired.values.iter().flat_map(|v| v.data().to_vec()).collect();
    Ok(GaitStream {
        target_series: Tensor::new(vec![stream.len(), o], data)?,
        ..stream.clone()
    })
}
