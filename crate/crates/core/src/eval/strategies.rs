use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, r2, rmse};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::AmputeeCase;
use crate::foundation::{train_foundation, FoundationModel, LabeledSample, LossHistory, TcnArch, TrainConfig};
use crate::nn::Tensor;
use crate::refurbish::{train_refurbish, AmputeeTrainingTriple, RefurbishArch, RefurbishModel, RefurbishTrainConfig};
use crate::template::{compute_corrections, TemplateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cross,
    Direct,
    Refurbished,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Cross, Strategy::Direct, Strategy::Refurbished];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Cross => "cross",
            Strategy::Direct => "direct",
            Strategy::Refurbished => "refurbished",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmputeeScore {
    pub amputee_id: u32,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub train_ratio: f64,
    pub per_amputee: Vec<AmputeeScore>,
    pub mean: f64,
    /// Population std over amputees.
    pub std: f64,
    pub seed: u64,
    /// Compact JSON of the settings this strategy ran with.
    pub config: String,
}

impl StrategyResult {
    pub fn new(strategy: Strategy, train_ratio: f64, per_amputee: Vec<AmputeeScore>, seed: u64, config: String) -> Self {
        let scores: Vec<f64> = per_amputee.iter().map(|s| s.r2).collect();
        let (mean, std) = mean_std(&scores);
        Self {
            strategy,
            train_ratio,
            per_amputee,
            mean,
            std,
            seed,
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub results: Vec<StrategyResult>,
    /// Checksums of the models and data a report was computed from.
    pub provenance: BTreeMap<String, String>,
}

impl SweepReport {
    pub fn get(&self, strategy: Strategy, ratio: f64) -> Option<&StrategyResult> {
        self.results
            .iter()
            .find(|r| r.strategy == strategy && r.train_ratio == ratio)
    }

    pub fn of(&self, strategy: Strategy) -> impl Iterator<Item = &StrategyResult> {
        self.results.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.results.is_empty() {
            return Err(Error::InsufficientData("empty report".into()));
        }
        for (i, a) in self.results.iter().enumerate() {
            if self.results[..i]
                .iter()
                .any(|b| b.strategy == a.strategy && b.train_ratio == a.train_ratio)
            {
                return Err(Error::Usage(format!(
                    "duplicate result for {} at ratio {}",
                    a.strategy, a.train_ratio
                )));
            }
        }
        Ok(())
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::config("train_ratio", format!("{ratio} outside (0, 1)")))
    }
}

fn predictions(samples: &[LabeledSample], f: impl Fn(&LabeledSample) -> Result<Tensor> + Sync + Send) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let preds = samples.par_iter().map(f).collect::<Result<Vec<_>>>()?;
    Ok((preds, samples.iter().map(|s| s.target.clone()).collect()))
}

fn heldout(case: &AmputeeCase, ratio: f64) -> Result<&[LabeledSample]> {
    let (_, test) = case.split(ratio);
    if test.is_empty() {
        return Err(Error::InsufficientData(format!(
            "amputee {} has no held-out samples at ratio {ratio}",
            case.subject.id
        )));
    }
    Ok(test)
}

/// Frozen model applied to raw amputee windows; scored on the held-out part
/// of the `ratio` split so it shares an evaluation set with the other strategies.
pub fn run_cross_mapping(g_frozen: &FoundationModel, cases: &[AmputeeCase], ratio: f64, seed: u64) -> Result<StrategyResult> {
    check_ratio(ratio)?;
    if !g_frozen.is_frozen() {
        return Err(Error::Usage("cross mapping needs a frozen model".into()));
    }
    let scores = cases
        .iter()
        .map(|case| {
            let (p, t) = predictions(heldout(case, ratio)?, |s| g_frozen.predict(&s.window))?;
            Ok(AmputeeScore {
                amputee_id: case.subject.id,
                r2: r2(&p, &t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StrategyResult::new(Strategy::Cross, ratio, scores, seed, "{}".into()))
}

/// Fresh single-task model trained on one amputee's leading split.
pub fn direct_case(case: &AmputeeCase, ratio: f64, arch: &TcnArch, train: &TrainConfig) -> Result<(FoundationModel, f64)> {
    check_ratio(ratio)?;
    let (tr, _) = case.split(ratio);
    if tr.len() < train.batch_size {
        return Err(Error::config(
            "direct_train.batch_size",
            format!(
                "amputee {} has {} training samples at ratio {ratio}, fewer than one batch of {}",
                case.subject.id,
                tr.len(),
                train.batch_size
            ),
        ));
    }
    let task = tr[0].window.task;
    let (model, _) = train_foundation(tr, &[task], arch, train)?;
    let model = model.freeze();
    let (p, t) = predictions(heldout(case, ratio)?, |s| model.predict(&s.window))?;
    let score = r2(&p, &t)?;
    Ok((model, score))
}

pub fn run_direct_mapping(cases: &[AmputeeCase], ratio: f64, arch: &TcnArch, train: &TrainConfig) -> Result<StrategyResult> {
    let scores = cases
        .par_iter()
        .map(|case| {
            Ok(AmputeeScore {
                amputee_id: case.subject.id,
                r2: direct_case(case, ratio, arch, train)?.1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = serde_json::json!({ "arch": arch, "train": train }).to_string();
    Ok(StrategyResult::new(Strategy::Direct, ratio, scores, train.seed, config))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefurbishSetup {
    pub template: TemplateConfig,
    pub arch: RefurbishArch,
    pub train: RefurbishTrainConfig,
    pub pooled: bool,
}

impl RefurbishSetup {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            template: cfg.template,
            arch: cfg.refurbish_arch.clone(),
            train: cfg.refurbish,
            pooled: cfg.pooled_refurbish,
        }
    }
}

/// Training triples from correction templates over `samples` (in stream
/// order). Boundary samples without a full output sequence are dropped.
pub fn training_triples(case: &AmputeeCase, samples: &[LabeledSample], cfg: &TemplateConfig) -> Result<Vec<AmputeeTrainingTriple>> {
    let desired: Vec<Tensor> = samples.iter().map(|s| s.target.clone()).collect();
    let set = compute_corrections(&case.index, &desired, cfg)?;
    Ok(set
        .templates
        .into_iter()
        .map(|t| AmputeeTrainingTriple {
            x_amp: samples[t.k].window.clone(),
            x_corr: t.corrected,
            y_amp: samples[t.k].target.clone(),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct RefurbishOutcome {
    pub h: RefurbishModel,
    pub history: LossHistory,
    pub triples: usize,
}

/// Trains `h` on templates computed from the leading split of `cases` only.
pub fn fit_refurbish(g_frozen: &FoundationModel, cases: &[&AmputeeCase], ratio: f64, setup: &RefurbishSetup) -> Result<RefurbishOutcome> {
    check_ratio(ratio)?;
    let mut triples = Vec::new();
    for case in cases {
        case.index.verify_against(g_frozen)?;
        let (tr, _) = case.split(ratio);
        if tr.is_empty() {
            return Err(Error::config(
                "ratios",
                format!("amputee {} has no training samples at ratio {ratio}", case.subject.id),
            ));
        }
        triples.extend(training_triples(case, tr, &setup.template)?);
    }
    let (h, history) = train_refurbish(&triples, g_frozen, &setup.arch, &setup.train)?;
    Ok(RefurbishOutcome {
        h,
        history,
        triples: triples.len(),
    })
}

pub fn refurbished_r2(g_frozen: &FoundationModel, h: &RefurbishModel, case: &AmputeeCase, ratio: f64) -> Result<f64> {
    let (p, t) = predictions(heldout(case, ratio)?, |s| g_frozen.predict(&h.forward(&s.window)?))?;
    r2(&p, &t)
}

/// Held-out `(RMSE(h(x), x_corr), RMSE(x, x_corr))`. Templates for the
/// held-out windows are computed here for diagnosis only.
pub fn template_tracking(h: &RefurbishModel, case: &AmputeeCase, ratio: f64, cfg: &TemplateConfig) -> Result<(f64, f64)> {
    let triples = training_triples(case, heldout(case, ratio)?, cfg)?;
    let corr: Vec<Tensor> = triples.iter().map(|t| t.x_corr.values.clone()).collect();
    let raw: Vec<Tensor> = triples.iter().map(|t| t.x_amp.values.clone()).collect();
    let mapped = raw.iter().map(|x| h.forward_values(x)).collect::<Result<Vec<_>>>()?;
    Ok((rmse(&mapped, &corr)?, rmse(&raw, &corr)?))
}

pub fn run_refurbished(g_frozen: &FoundationModel, cases: &[AmputeeCase], ratio: f64, setup: &RefurbishSetup) -> Result<StrategyResult> {
    let scores = if setup.pooled {
        let all: Vec<&AmputeeCase> = cases.iter().collect();
        let out = fit_refurbish(g_frozen, &all, ratio, setup)?;
        cases
            .par_iter()
            .map(|case| {
                Ok(AmputeeScore {
                    amputee_id: case.subject.id,
                    r2: refurbished_r2(g_frozen, &out.h, case, ratio)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        cases
            .par_iter()
            .map(|case| {
                let out = fit_refurbish(g_frozen, &[case], ratio, setup)?;
                Ok(AmputeeScore {
                    amputee_id: case.subject.id,
                    r2: refurbished_r2(g_frozen, &out.h, case, ratio)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let config = serde_json::to_string(setup).expect("setup serializes");
    Ok(StrategyResult::new(Strategy::Refurbished, ratio, scores, setup.train.seed, config))
}

/// Cross baseline once at `cfg.cross_ratio`, then direct and refurbished at
/// every ratio, each restricted to `strategies`.
pub fn sweep(g_frozen: &FoundationModel, cases: &[AmputeeCase], cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<SweepReport> {
    if cfg.ratios.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("ratios", "must be strictly ascending"));
    }
    let mut jobs = Vec::new();
    if strategies.contains(&Strategy::Cross) {
        jobs.push((Strategy::Cross, cfg.cross_ratio));
    }
    for &ratio in &cfg.ratios {
        for st in [Strategy::Direct, Strategy::Refurbished] {
            if strategies.contains(&st) {
                jobs.push((st, ratio));
            }
        }
    }
    let setup = RefurbishSetup::from_config(cfg);
    let results = jobs
        .par_iter()
        .map(|&(st, ratio)| match st {
            Strategy::Cross => run_cross_mapping(g_frozen, cases, ratio, cfg.seed),
            Strategy::Direct => run_direct_mapping(cases, ratio, &cfg.direct_arch, &cfg.direct_train),
            Strategy::Refurbished => run_refurbished(g_frozen, cases, ratio, &setup),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut provenance = BTreeMap::new();
    provenance.insert("foundation".to_string(), g_frozen.checksum());
    for case in cases {
        provenance.insert(format!("index.amputee_{}", case.subject.id), case.index.checksum());
    }
    provenance.insert("aggregation".to_string(), "mean and population std over amputees".to_string());
    let report = SweepReport { results, provenance };
    report.validate()?;
    Ok(report)
}
