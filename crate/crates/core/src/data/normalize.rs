use serde::{Deserialize, Serialize};

use super::stream::GaitStream;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Per-channel z-score statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pools every sample of every stream per channel (population std).
pub fn fit_normalizer(streams: &[&GaitStream]) -> Result<NormalizationStats> {
    let first = streams
        .first()
        .ok_or_else(|| Error::InsufficientData("no streams to fit normalization on".into()))?;
    let c = first.num_channels();
    let mut sum = vec![0.0; c];
    let mut count = 0usize;
    for s in streams {
        if s.num_channels() != c {
            return Err(Error::Dimension {
                op: "fit_normalizer",
                axis: "channels",
                expected: c,
                actual: s.num_channels(),
            });
        }
        let l = s.len();
        for (ch, acc) in sum.iter_mut().enumerate() {
            *acc += s.channels.data()[ch * l..(ch + 1) * l].iter().sum::<f64>();
        }
        count += l;
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / count as f64).collect();
    let mut sq = vec![0.0; c];
    for s in streams {
        let l = s.len();
        for (ch, acc) in sq.iter_mut().enumerate() {
            *acc += s.channels.data()[ch * l..(ch + 1) * l]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    let std: Vec<f64> = sq.iter().map(|v| (v / count as f64).sqrt()).collect();
    // Anything this small relative to the mean is floating-point residue of a constant.
    if let Some(channel) = std
        .iter()
        .zip(&mean)
        .position(|(s, m)| !(*s > 1e-12 * m.abs().max(1.0)))
    {
        return Err(Error::ConstantChannel { channel });
    }
    Ok(NormalizationStats { mean, std })
}

impl NormalizationStats {
    fn check(&self, stream: &GaitStream) -> Result<()> {
        if stream.num_channels() != self.mean.len() {
            return Err(Error::Dimension {
                op: "normalizer",
                axis: "channels",
                expected: self.mean.len(),
                actual: stream.num_channels(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, stream: &GaitStream) -> Result<GaitStream> {
        self.check(stream)?;
        let l = stream.len();
        let mut data = stream.channels.data().to_vec();
        for (ch, row) in data.chunks_mut(l).enumerate() {
            for v in row {
                *v = (*v - self.mean[ch]) / self.std[ch];
            }
        }
        Ok(GaitStream {
            channels: Tensor::new(stream.channels.shape().to_vec(), data)?,
            ..stream.clone()
        })
    }

    pub fn invert(&self, stream: &GaitStream) -> Result<GaitStream> {
        self.check(stream)?;
        let l = stream.len();
        let mut data = stream.channels.data().to_vec();
        for (ch, row) in data.chunks_mut(l).enumerate() {
            for v in row {
                *v = *v * self.std[ch] + self.mean[ch];
            }
        }
        Ok(GaitStream {
            channels: Tensor::new(stream.channels.shape().to_vec(), data)?,
            ..stream.clone()
        })
    }

    pub fn as_tensors(&self) -> (Tensor, Tensor) {
        (
            Tensor::vector(self.mean.clone()),
            Tensor::vector(self.std.clone()),
        )
    }

    pub fn from_tensors(mean: &Tensor, std: &Tensor) -> Result<Self> {
        if mean.numel() != std.numel() {
            return Err(Error::Dimension {
                op: "normalizer",
                axis: "channels",
                expected: mean.numel(),
                actual: std.numel(),
            });
        }
        if let Some(channel) = std.data().iter().position(|s| !(*s > 0.0)) {
            return Err(Error::ConstantChannel { channel });
        }
        Ok(Self {
            mean: mean.data().to_vec(),
            std: std.data().to_vec(),
        })
    }
}
