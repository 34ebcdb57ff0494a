//! Metrics, the three mapping strategies, ratio sweeps and report files.

mod metrics;
mod report;
mod strategies;

pub use metrics::{mean_std, r2, rmse};
pub use report::{
    chart_svg, emit_report, parse_results_csv, results_csv, summary_json, summary_markdown,
    ResultRow, RESULTS_HEADER,
};
pub use strategies::{
    direct_case, fit_refurbish, refurbished_r2, run_cross_mapping, run_direct_mapping,
    run_refurbished, sweep, template_tracking, training_triples, AmputeeScore, RefurbishOutcome,
    RefurbishSetup, Strategy, StrategyResult, SweepReport,
};
