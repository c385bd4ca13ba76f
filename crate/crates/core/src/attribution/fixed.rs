use serde::{Deserialize, Serialize};

use crate::engine::{Constraints, Hyperparameters};
use crate::error::{CfxError, Result};
use crate::eval::{evaluate_set_excluding, mean, MetricsReport, Workbench};

/// Quality of the sets generated while one feature is held at the query's
/// value. The metric fields are `None` ("-") when no run produced a valid
/// set; validity is always reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedFeatureRow {
    pub feature: String,
    /// Mean target confidence over every run.
    pub validity: f64,
    pub runs: usize,
    pub valid_runs: usize,
    pub proximity: Option<f64>,
    pub sparsity: Option<f64>,
    pub plausibility: Option<f64>,
    pub diversity: Option<f64>,
}

/// Runs generation for each query and seed with `feature` fixed. Distance
/// metrics exclude the fixed feature and are averaged over valid sets only.
pub fn fixed_feature_analysis(
    bench: &Workbench,
    queries: &[usize],
    seeds: &[u64],
    target: usize,
    feature: &str,
    hp: &Hyperparameters,
) -> Result<FixedFeatureRow> {
    let index = bench
        .preprocessor()
        .schema()
        .index_of(feature)
        .ok_or_else(|| CfxError::Config(format!("unknown feature `{feature}`")))?;
    let outcomes = bench.run_batch(queries, seeds, target, hp, &Constraints::fixing([feature]))?;
    let ctx = bench.metric_context(hp);
    let mut valid = Vec::new();
    for o in &outcomes {
        if o.is_valid() {
            let q = bench
                .preprocessor()
                .transform_row(&bench.data.raw.rows[o.query])?;
            valid.push(evaluate_set_excluding(
                &ctx,
                &o.set.encoded,
                &q,
                target,
                &[index],
            )?);
        }
    }
    let m = MetricsReport::mean_of(&valid);
    Ok(FixedFeatureRow {
        feature: feature.to_string(),
        validity: mean(
            &outcomes
                .iter()
                .map(|o| o.metrics.confidence)
                .collect::<Vec<_>>(),
        ),
        runs: outcomes.len(),
        valid_runs: valid.len(),
        proximity: m.map(|m| m.proximity),
        sparsity: m.map(|m| m.sparsity),
        plausibility: m.map(|m| m.plausibility),
        diversity: m.map(|m| m.diversity),
    })
}
