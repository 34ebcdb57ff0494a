use serde::{Deserialize, Serialize};

use super::tensor::{check_same_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
///
/// Each parameter slot keeps its own update count so that slots skipped in a
/// step (for instance a task head absent from a minibatch) are bias-corrected
/// against the updates they actually received.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    slot_steps: Vec<u64>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            slot_steps: vec![0; params.len()],
            steps: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    /// Applies one update. A `None` gradient leaves that parameter and its
    /// moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension {
                op: "adam",
                axis: "param_count",
                expected: self.first.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            check_same_shape("adam", &self.first[i], p)?;
            if let Some(g) = g {
                check_same_shape("adam", p, g)?;
            }
        }
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            self.slot_steps[i] += 1;
            let t = self.slot_steps[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![1.5, -2.0]);
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        opt.step(&mut [&mut p], &[Some(Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps) = 0.1/(1 + 1e-8)
        let mut p = Tensor::scalar(0.0);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &[&p]);
        opt.step(&mut [&mut p], &[Some(Tensor::scalar(1.0))]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Tensor::vector(vec![0.3, 0.7]);
            let mut opt = Adam::new(AdamConfig::with_lr(0.01), &[&p]);
            for _ in 0..2 {
                opt.step(&mut [&mut p], &[Some(Tensor::vector(vec![0.2, -1.1]))])
                    .unwrap();
            }
            (p, opt)
        };
        let (a, oa) = run();
        let (b, ob) = run();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn skipped_slot_is_untouched() {
        let mut a = Tensor::scalar(1.0);
        let mut b = Tensor::scalar(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &[&a, &b]);
        opt.step(&mut [&mut a, &mut b], &[Some(Tensor::scalar(1.0)), None])
            .unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data()[0], 1.0);
        assert_eq!(opt.first_moments()[1].data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        assert!(opt.step(&mut [&mut p], &[Some(Tensor::zeros(&[3]))]).is_err());
    }
}
