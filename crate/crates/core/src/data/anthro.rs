use super::stream::SubjectMeta;
use crate::error::{Error, Result};

/// The pool member nearest to `amputee` in z-scored (height, mass, age),
/// with z-scores taken from the pool. Ties go to the smaller id.
pub fn match_anthropometry<'a>(amputee: &SubjectMeta, pool: &'a [SubjectMeta]) -> Result<&'a SubjectMeta> {
    if pool.is_empty() {
        return Err(Error::config("able_pool", "empty reference pool"));
    }
    let features = |s: &SubjectMeta| [s.height, s.mass, s.age];
    let n = pool.len() as f64;
    let mut mean = [0.0; 3];
    for s in pool {
        for (m, v) in mean.iter_mut().zip(features(s)) {
            *m += v / n;
        }
    }
    let mut std = [0.0; 3];
    for s in pool {
        for ((sd, v), m) in std.iter_mut().zip(features(s)).zip(mean) {
            *sd += (v - m).powi(2) / n;
        }
    }
    let std = std.map(f64::sqrt);
    let z = |s: &SubjectMeta| {
        let f = features(s);
        // A feature with no spread in the pool cannot discriminate; drop it.
        [0, 1, 2].map(|i| if std[i] > 0.0 { (f[i] - mean[i]) / std[i] } else { 0.0 })
    };
    let target = z(amputee);
    let mut best: Option<(f64, &SubjectMeta)> = None;
    for s in pool {
        let d = z(s)
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        best = match best {
            Some((bd, bs)) if bd < d || (bd == d && bs.id < s.id) => Some((bd, bs)),
            _ => Some((d, s)),
        };
    }
    Ok(best.expect("pool is non-empty").1)
}
