use crate::error::{Error, Result};
use crate::nn::Tensor;

fn check_lengths(pred: &[Tensor], target: &[Tensor]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::InsufficientData("no predictions to score".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "metric",
            axis: "samples",
            expected: target.len(),
            actual: pred.len(),
        });
    }
    for (p, t) in pred.iter().zip(target) {
        if p.numel() != t.numel() {
            return Err(Error::Dimension {
                op: "metric",
                axis: "outputs",
                expected: t.numel(),
                actual: p.numel(),
            });
        }
    }
    Ok(())
}

/// Coefficient of determination `1 − SS_res/SS_tot`, with `SS_tot` taken
/// around the elementwise target mean.
pub fn r2(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    check_lengths(pred, target)?;
    let o = target[0].numel();
    let n = target.len() as f64;
    let mut mean = vec![0.0; o];
    for t in target {
        for (m, v) in mean.iter_mut().zip(t.data()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (p, t) in pred.iter().zip(target) {
        for ((pv, tv), m) in p.data().iter().zip(t.data()).zip(&mean) {
            ss_res += (tv - pv).powi(2);
            ss_tot += (tv - m).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("target has zero variance".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Root of the mean squared elementwise difference over all samples.
pub fn rmse(pred: &[Tensor], target: &[Tensor]) -> Result<f64> {
    check_lengths(pred, target)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        sum += p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += p.numel();
    }
    Ok((sum / count as f64).sqrt())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
