//! Minimal differentiable core: tensors, causal convolutions, MLPs, MSE, a
//! reverse-mode tape and Adam.

mod graph;
mod layers;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{
    affine, causal_conv_forward, glorot, mlp_forward, mse, relu, tcn_block_forward, tcn_forward,
    tcn_forward_sequence, ConvLayerParams, MlpParams,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
pub(crate) use tensor::check_same_shape;

use crate::error::{Error, Result};

/// Graph handles for one conv layer.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
    pub dilation: usize,
    pub residual: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Registers conv layers as graph leaves, trainable or constant.
pub fn conv_leaves(g: &mut Graph, layers: &[ConvLayerParams], trainable: bool) -> Vec<ConvVars> {
    layers
        .iter()
        .map(|l| {
            let (kernel, bias) = if trainable {
                (g.param(l.kernel.clone()), g.param(l.bias.clone()))
            } else {
                (g.constant(l.kernel.clone()), g.constant(l.bias.clone()))
            };
            ConvVars {
                kernel,
                bias,
                dilation: l.dilation,
                residual: l.is_residual(),
            }
        })
        .collect()
}

pub fn mlp_leaves(g: &mut Graph, p: &MlpParams, trainable: bool) -> MlpVars {
    let mut leaf = |t: &Tensor| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    MlpVars {
        w1: leaf(&p.w1),
        b1: leaf(&p.b1),
        w2: leaf(&p.w2),
        b2: leaf(&p.b2),
    }
}

/// Graph version of [`tcn_forward_sequence`].
pub fn tcn_sequence_graph(g: &mut Graph, x: Var, layers: &[ConvVars]) -> Result<Var> {
    let mut h = x;
    for l in layers {
        let expected = g.value(l.kernel).dim(1);
        let actual = g.value(h).dim(0);
        if expected != actual {
            return Err(Error::Dimension {
                op: "tcn_chain",
                axis: "in_channels",
                expected,
                actual,
            });
        }
        let mut z = g.conv(h, l.kernel, l.bias, l.dilation)?;
        if l.residual {
            z = g.add(z, h)?;
        }
        h = g.relu(z);
    }
    Ok(h)
}

/// Graph version of [`tcn_forward`].
pub fn tcn_graph(g: &mut Graph, x: Var, layers: &[ConvVars]) -> Result<Var> {
    let h = tcn_sequence_graph(g, x, layers)?;
    Ok(g.last_step(h))
}

/// Graph version of [`mlp_forward`].
pub fn mlp_graph(g: &mut Graph, f: Var, p: &MlpVars) -> Result<Var> {
    let h = g.affine(f, p.w1, p.b1)?;
    let h = g.relu(h);
    g.affine(h, p.w2, p.b2)
}
