//! Metrics on counterfactual sets and the experiment drivers built on them.

mod experiment;
mod stats;

use serde::{Deserialize, Serialize};

use crate::data::Layout;
use crate::error::{CfxError, Result};
use crate::loss::{diversity_loss, plausibility_loss, proximity_loss, sparsity_loss};
use crate::matrix::Matrix;
use crate::nn::Mlp;

pub use experiment::{
    ablation_combos, ablation_run, bench, grid_sweep, multiclass_sweep, set_hyperparameter,
    toggle_study, AblationCombo, BenchRow, ExperimentRow, ExperimentTable, Explanation, LossTerm,
    MulticlassSweep, RunOutcome, Toggle, ToggleStudy, Workbench,
};
pub use stats::{mean, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub proximity: f64,
    pub sparsity: f64,
    pub plausibility: f64,
    pub diversity: f64,
    pub confidence: f64,
    pub average: f64,
}

/// Mean of the five criteria, with the minimised ones flipped.
pub fn average_score(
    proximity: f64,
    sparsity: f64,
    plausibility: f64,
    diversity: f64,
    confidence: f64,
) -> f64 {
    (confidence + diversity + (1.0 - proximity) + (1.0 - sparsity) + (1.0 - plausibility)) / 5.0
}

impl MetricsReport {
    pub fn new(
        proximity: f64,
        sparsity: f64,
        plausibility: f64,
        diversity: f64,
        confidence: f64,
    ) -> Self {
        Self {
            proximity,
            sparsity,
            plausibility,
            diversity,
            confidence,
            average: average_score(proximity, sparsity, plausibility, diversity, confidence),
        }
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean_of(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let m = |f: fn(&MetricsReport) -> f64| mean(&reports.iter().map(f).collect::<Vec<_>>());
        Some(MetricsReport::new(
            m(|r| r.proximity),
            m(|r| r.sparsity),
            m(|r| r.plausibility),
            m(|r| r.diversity),
            m(|r| r.confidence),
        ))
    }

    pub fn all_in_unit_interval(&self) -> bool {
        [
            self.proximity,
            self.sparsity,
            self.plausibility,
            self.diversity,
            self.confidence,
        ]
        .iter()
        .all(|v| (0.0..=1.0).contains(v))
    }
}

/// Inputs shared by every metric evaluation of one query.
#[derive(Debug, Clone, Copy)]
pub struct MetricContext<'a> {
    pub model: &'a Mlp,
    pub layout: &'a Layout,
    /// Observed rows, encoded.
    pub observed: &'a Matrix,
    /// Encoded MAD per column.
    pub mad: &'a [f64],
    pub k: usize,
    pub epsilon_change: f64,
}

/// Metrics of an encoded (discretised) set. Sparsity uses the exact change
/// indicator; confidence is the mean target-class probability.
pub fn evaluate_set(
    ctx: &MetricContext<'_>,
    set: &Matrix,
    query: &[f64],
    target: usize,
) -> Result<MetricsReport> {
    evaluate_set_excluding(ctx, set, query, target, &[])
}

/// Like [`evaluate_set`], but the listed original features are dropped from
/// the four distance metrics. Confidence always sees the full rows.
pub fn evaluate_set_excluding(
    ctx: &MetricContext<'_>,
    set: &Matrix,
    query: &[f64],
    target: usize,
    excluded: &[usize],
) -> Result<MetricsReport> {
    if set.rows() == 0 {
        return Err(CfxError::Config(
            "cannot evaluate an empty counterfactual set".into(),
        ));
    }
    if set.cols() != ctx.layout.width || query.len() != ctx.layout.width {
        return Err(CfxError::shape(
            "evaluated set width",
            ctx.layout.width,
            set.cols(),
        ));
    }
    ctx.model.check_class(target)?;
    let mut conf = 0.0;
    for row in set.iter_rows() {
        conf += ctx.model.forward(row)?.probability_of(target);
    }
    let confidence = conf / set.rows() as f64;

    let keep = ctx.layout.columns_excluding(excluded);
    if keep.is_empty() {
        return Err(CfxError::Config("no features left to evaluate".into()));
    }
    let layout = ctx.layout.without(excluded);
    let x = set.select_columns(&keep);
    let q: Vec<f64> = keep.iter().map(|&c| query[c]).collect();
    let mad: Vec<f64> = keep.iter().map(|&c| ctx.mad[c]).collect();
    let observed = ctx.observed.select_columns(&keep);

    let proximity = proximity_loss(&x, &q, &mad)?.value;
    let sparsity = sparsity_loss(&x, &q, &layout, ctx.epsilon_change, 1.0)?.exact;
    let plausibility = plausibility_loss(&x, &observed, ctx.k)?.value;
    let diversity = diversity_loss(&x).value;
    Ok(MetricsReport::new(
        proximity,
        sparsity,
        plausibility,
        diversity,
        confidence,
    ))
}
