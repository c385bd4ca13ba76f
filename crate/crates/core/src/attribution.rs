//! Feature attribution from input gradients accumulated during generation.
//!
//! Every optimisation step records the gradient of the target-class
//! probability with respect to each row of the counterfactual set. The score
//! of a feature is the magnitude of that gradient averaged over steps and
//! rows; one-hot groups collapse to the Euclidean norm of their columns.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureSchema, Layout};
use crate::error::{CfxError, Result};
use crate::matrix::Matrix;

mod fixed;

pub use fixed::{fixed_feature_analysis, FixedFeatureRow};

/// Per-step `n x d` gradients of the target-class probability.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientHistory {
    rows: usize,
    cols: usize,
    steps: Vec<Matrix>,
}

impl GradientHistory {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            steps: Vec::new(),
        }
    }

    pub fn record_step_gradient(&mut self, gradient: Matrix) -> Result<()> {
        if gradient.rows() != self.rows {
            return Err(CfxError::shape(
                "step gradient rows",
                self.rows,
                gradient.rows(),
            ));
        }
        if gradient.cols() != self.cols {
            return Err(CfxError::shape(
                "step gradient columns",
                self.cols,
                gradient.cols(),
            ));
        }
        self.steps.push(gradient);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Matrix] {
        &self.steps
    }

    /// Mean gradient per encoded column, over steps and rows.
    pub fn mean_gradient(&self) -> Result<Vec<f64>> {
        if self.steps.is_empty() {
            return Err(CfxError::Data("gradient history is empty".into()));
        }
        let mut mean = vec![0.0; self.cols];
        for step in &self.steps {
            for row in step.iter_rows() {
                for (m, g) in mean.iter_mut().zip(row) {
                    *m += g;
                }
            }
        }
        let denom = (self.steps.len() * self.rows) as f64;
        mean.iter_mut().for_each(|m| *m /= denom);
        Ok(mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub attr: f64,
    /// The feature was held fixed while generating.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub query_id: Option<String>,
    pub target: usize,
    pub steps: usize,
    /// Sorted by descending score.
    pub scores: Vec<FeatureScore>,
}

impl AttributionReport {
    pub fn top(&self) -> Option<&FeatureScore> {
        self.scores.first()
    }

    pub fn score_of(&self, feature: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.feature == feature)
            .map(|s| s.attr)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "attr"])?;
        for s in &self.scores {
            w.write_record([s.feature.clone(), format!("{}", s.attr)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Collapses mean column gradients to one score per original feature:
/// absolute value for continuous columns, Euclidean norm over one-hot groups.
pub fn feature_scores(mean_gradient: &[f64], layout: &Layout) -> Vec<f64> {
    layout
        .spans
        .iter()
        .map(|s| {
            if s.is_categorical() {
                mean_gradient[s.range()]
                    .iter()
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt()
            } else {
                mean_gradient[s.start].abs()
            }
        })
        .collect()
}

pub fn compute_attributions(
    history: &GradientHistory,
    schema: &FeatureSchema,
    target: usize,
    query_id: Option<String>,
    fixed: &[usize],
) -> Result<AttributionReport> {
    let layout = schema.layout();
    if layout.width != history.cols {
        return Err(CfxError::shape(
            "attribution width",
            layout.width,
            history.cols,
        ));
    }
    let mean = history.mean_gradient()?;
    let mut scores: Vec<FeatureScore> = feature_scores(&mean, &layout)
        .into_iter()
        .zip(&schema.features)
        .enumerate()
        .map(|(i, (attr, f))| FeatureScore {
            feature: f.name.clone(),
            attr,
            fixed: fixed.contains(&i),
        })
        .collect();
    scores.sort_by(|a, b| b.attr.total_cmp(&a.attr));
    Ok(AttributionReport {
        query_id,
        target,
        steps: history.len(),
        scores,
    })
}

/// Writes attribution reports as JSON lines.
pub fn write_reports(path: impl AsRef<Path>, reports: &[AttributionReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in reports {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::categorical("b", ["x", "y"]),
            FeatureSpec::continuous("c"),
        ])
        .unwrap()
    }

    fn g(rows: &[[f64; 4]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn empty_history_is_an_error() {
        let h = GradientHistory::new(2, 4);
        assert!(compute_attributions(&h, &schema(), 1, None, &[]).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut h = GradientHistory::new(2, 4);
        assert!(h.record_step_gradient(Matrix::zeros(3, 4)).is_err());
        h.record_step_gradient(Matrix::zeros(2, 4)).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn zero_history_gives_zero_scores() {
        let mut h = GradientHistory::new(1, 4);
        h.record_step_gradient(Matrix::zeros(1, 4)).unwrap();
        let r = compute_attributions(&h, &schema(), 1, None, &[]).unwrap();
        assert!(r.scores.iter().all(|s| s.attr == 0.0));
    }

    #[test]
    fn opposite_steps_cancel() {
        let mut h = GradientHistory::new(1, 4);
        h.record_step_gradient(g(&[[1.0, -2.0, 0.5, 3.0]])).unwrap();
        h.record_step_gradient(g(&[[-1.0, 2.0, -0.5, -3.0]]))
            .unwrap();
        let r = compute_attributions(&h, &schema(), 1, None, &[]).unwrap();
        assert!(r.scores.iter().all(|s| s.attr == 0.0));
        assert_eq!(r.steps, 2);
    }

    #[test]
    fn groups_collapse_by_euclidean_norm() {
        let mut h = GradientHistory::new(2, 4);
        h.record_step_gradient(g(&[[1.0, 3.0, 4.0, -0.5], [1.0, 3.0, 4.0, -0.5]]))
            .unwrap();
        let r = compute_attributions(&h, &schema(), 0, Some("q".into()), &[2]).unwrap();
        assert_eq!(r.top().unwrap().feature, "b");
        assert_eq!(r.score_of("b"), Some(5.0));
        assert_eq!(r.score_of("a"), Some(1.0));
        assert_eq!(r.score_of("c"), Some(0.5));
        assert!(r.scores.iter().find(|s| s.feature == "c").unwrap().fixed);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"query_id\":\"q\""));
    }
}
