//! Forward kernels for the layer types used throughout the crate: dilated causal
//! convolution, the residual TCN stack built from it, the two-layer ReLU MLP and
//! the mean-squared-error loss. The autodiff graph reuses these kernels for its
//! forward pass, so the plain functions here are the reference semantics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{check_same_shape, Tensor};
use crate::error::{Error, Result};

/// One dilated causal convolution: kernel `[out × in × k]`, bias `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl ConvLayerParams {
    pub fn new(kernel: Tensor, bias: Tensor, dilation: usize) -> Result<Self> {
        if kernel.shape().len() != 3 {
            return Err(Error::Usage(format!(
                "conv kernel must be rank 3, got shape {:?}",
                kernel.shape()
            )));
        }
        if dilation == 0 {
            return Err(Error::config("dilation", "must be >= 1"));
        }
        if bias.shape() != [kernel.dim(0)] {
            return Err(Error::Dimension {
                op: "conv_params",
                axis: "out_channels",
                expected: kernel.dim(0),
                actual: bias.numel(),
            });
        }
        Ok(Self {
            kernel,
            bias,
            dilation,
        })
    }

    /// Glorot-uniform kernel, zero bias.
    pub fn init<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
    ) -> Result<Self> {
        let kernel = glorot(
            rng,
            &[out_channels, in_channels, kernel_size],
            in_channels * kernel_size,
            out_channels * kernel_size,
        );
        Self::new(kernel, Tensor::zeros(&[out_channels]), dilation)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim(1)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.dim(2)
    }

    /// Whether the layer carries an identity skip connection.
    pub fn is_residual(&self) -> bool {
        self.in_channels() == self.out_channels()
    }
}

/// Two-layer perceptron `w2 · relu(w1 · f + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpParams {
    pub fn new(w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Result<Self> {
        if w1.shape().len() != 2 || w2.shape().len() != 2 {
            return Err(Error::Usage("mlp weights must be rank 2".into()));
        }
        let hidden = w1.dim(0);
        let checks = [
            ("hidden", hidden, b1.numel()),
            ("hidden", hidden, w2.dim(1)),
            ("out", w2.dim(0), b2.numel()),
        ];
        for (axis, expected, actual) in checks {
            if expected != actual {
                return Err(Error::Dimension {
                    op: "mlp_params",
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Result<Self> {
        Self::new(
            glorot(rng, &[hidden, input], input, hidden),
            Tensor::zeros(&[hidden]),
            glorot(rng, &[output, hidden], hidden, output),
            Tensor::zeros(&[output]),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.w1.dim(1)
    }

    pub fn output_dim(&self) -> usize {
        self.w2.dim(0)
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data built together")
}

/// `y[c, t] = bias[c] + Σ_{c', k} kernel[c, c', k] · x[c', t − k·dilation]`,
/// reading zero for negative time indices.
pub fn causal_conv_forward(x: &Tensor, p: &ConvLayerParams) -> Result<Tensor> {
    if x.shape().len() != 2 {
        return Err(Error::Usage(format!(
            "conv input must be [channels × time], got {:?}",
            x.shape()
        )));
    }
    let (c_in, steps) = (x.dim(0), x.dim(1));
    if c_in != p.in_channels() {
        return Err(Error::Dimension {
            op: "causal_conv",
            axis: "in_channels",
            expected: p.in_channels(),
            actual: c_in,
        });
    }
    let (c_out, ks, dil) = (p.out_channels(), p.kernel_size(), p.dilation);
    let w = p.kernel.data();
    let xd = x.data();
    let mut y = vec![0.0; c_out * steps];
    for c in 0..c_out {
        let row = &mut y[c * steps..(c + 1) * steps];
        row.fill(p.bias.data()[c]);
        for ci in 0..c_in {
            let xrow = &xd[ci * steps..(ci + 1) * steps];
            for k in 0..ks {
                let wv = w[(c * c_in + ci) * ks + k];
                let shift = k * dil;
                if shift >= steps {
                    continue;
                }
                for t in shift..steps {
                    row[t] += wv * xrow[t - shift];
                }
            }
        }
    }
    Tensor::new(vec![c_out, steps], y)
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// One TCN block: `relu(conv(x) + x)` when channel counts match, else `relu(conv(x))`.
pub fn tcn_block_forward(x: &Tensor, p: &ConvLayerParams) -> Result<Tensor> {
    let mut z = causal_conv_forward(x, p)?;
    if p.is_residual() {
        z.add_assign(x)?;
    }
    Ok(relu(&z))
}

/// Runs the whole stack and returns the final activations at every timestep.
pub fn tcn_forward_sequence(x: &Tensor, layers: &[ConvLayerParams]) -> Result<Tensor> {
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        if h.dim(0) != layer.in_channels() {
            return Err(Error::Dimension {
                op: if i == 0 { "tcn_input" } else { "tcn_chain" },
                axis: "in_channels",
                expected: layer.in_channels(),
                actual: h.dim(0),
            });
        }
        h = tcn_block_forward(&h, layer)?;
    }
    Ok(h)
}

/// Feature vector of a TCN: the last layer's activations at the last timestep.
pub fn tcn_forward(x: &Tensor, layers: &[ConvLayerParams]) -> Result<Tensor> {
    let h = tcn_forward_sequence(x, layers)?;
    let last = h.dim(1) - 1;
    Ok(Tensor::vector(h.column(last)))
}

/// `w · x + b` for a `[out × in]` matrix.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (w.dim(0), w.dim(1));
    if x.numel() != cols {
        return Err(Error::Dimension {
            op: "affine",
            axis: "in_features",
            expected: cols,
            actual: x.numel(),
        });
    }
    if b.numel() != rows {
        return Err(Error::Dimension {
            op: "affine",
            axis: "out_features",
            expected: rows,
            actual: b.numel(),
        });
    }
    let (wd, xd) = (w.data(), x.data());
    let out = (0..rows)
        .map(|r| {
            let row = &wd[r * cols..(r + 1) * cols];
            b.data()[r] + row.iter().zip(xd).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn mlp_forward(f: &Tensor, p: &MlpParams) -> Result<Tensor> {
    let hidden = relu(&affine(f, &p.w1, &p.b1)?);
    affine(&hidden, &p.w2, &p.b2)
}

/// Mean over all elements of `(pred − target)²`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_same_shape("mse", pred, target)?;
    let n = pred.numel() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}
