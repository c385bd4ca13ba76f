use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, spearman};
use super::{evaluate_set, MetricContext, MetricsReport};
use crate::attribution::AttributionReport;
use crate::data::{Cell, PreprocessedDataset, Preprocessor, RawTable};
use crate::engine::{
    generate, Constraints, CounterfactualResult, CounterfactualSet, Hyperparameters, Problem,
    TraceRecord,
};
use crate::error::{CfxError, Result};
use crate::loss::diversity_loss;
use crate::matrix::Matrix;
use crate::nn::{train_model, AccuracyReport, Mlp, TrainConfig};

/// A trained model together with its dataset, ready for batch generation.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub tag: String,
    pub model: Mlp,
    pub data: PreprocessedDataset,
    /// Encoded training rows.
    pub observed: Matrix,
    mad: Vec<f64>,
    predicted: Vec<usize>,
}

/// One generated set with its scores.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub result: CounterfactualResult,
    pub metrics: MetricsReport,
    pub attribution: AttributionReport,
    pub taus_met: bool,
    pub violations: Vec<String>,
    pub runtime_s: f64,
}

/// One generation run and its evaluation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Row index into the dataset.
    pub query: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub best_loss: f64,
    pub threshold_met: bool,
    /// The returned set meets every penalty threshold.
    pub taus_met: bool,
    pub restarts: usize,
    pub violations: Vec<String>,
    pub runtime_s: f64,
    pub set: CounterfactualSet,
    pub trace: Vec<TraceRecord>,
    pub attribution: AttributionReport,
}

impl RunOutcome {
    /// Mean target-class confidence above one half.
    pub fn is_valid(&self) -> bool {
        self.metrics.confidence > 0.5
    }
}

impl Workbench {
    pub fn new(tag: impl Into<String>, model: Mlp, data: PreprocessedDataset) -> Result<Self> {
        let width = data.preprocessor.width();
        if model.input_dim() != width {
            return Err(CfxError::shape(
                "model input width",
                width,
                model.input_dim(),
            ));
        }
        if model.n_classes() != data.n_classes() {
            return Err(CfxError::InvalidModel(format!(
                "model has {} classes but the dataset has {}",
                model.n_classes(),
                data.n_classes()
            )));
        }
        let predicted = data
            .x
            .iter_rows()
            .map(|r| model.forward(r).map(|p| p.predicted_class))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tag: tag.into(),
            observed: data.train_x(),
            mad: data.preprocessor.encoded_mad(),
            model,
            data,
            predicted,
        })
    }

    /// Splits and preprocesses `raw`, then trains a model on it.
    pub fn train(
        tag: impl Into<String>,
        raw: RawTable,
        split_seed: u64,
        config: &TrainConfig,
    ) -> Result<(Self, AccuracyReport)> {
        let data = PreprocessedDataset::prepare(raw, split_seed)?;
        let trained = train_model(&data, config)?;
        Ok((Self::new(tag, trained.model, data)?, trained.accuracy))
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.data.preprocessor
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            model: &self.model,
            preprocessor: &self.data.preprocessor,
            observed: &self.observed,
        }
    }

    pub fn metric_context(&self, hp: &Hyperparameters) -> MetricContext<'_> {
        MetricContext {
            model: &self.model,
            layout: self.data.preprocessor.layout(),
            observed: &self.observed,
            mad: &self.mad,
            k: hp.k,
            epsilon_change: hp.epsilon_change,
        }
    }

    pub fn predicted_class(&self, row: usize) -> usize {
        self.predicted[row]
    }

    /// Test-split rows the model does not already assign to `target`.
    pub fn test_queries(&self, target: usize, limit: usize) -> Vec<usize> {
        self.data
            .split
            .test
            .iter()
            .copied()
            .filter(|&i| self.predicted[i] != target)
            .take(limit)
            .collect()
    }

    /// Test-split rows predicted as `class` (which must differ from `target`).
    pub fn queries_of_class(&self, class: usize, limit: usize) -> Vec<usize> {
        self.data
            .split
            .test
            .iter()
            .copied()
            .filter(|&i| self.predicted[i] == class)
            .take(limit)
            .collect()
    }

    /// Generates and scores a set for an arbitrary raw query row.
    pub fn explain(
        &self,
        query: &[Cell],
        query_id: Option<String>,
        target: usize,
        hp: &Hyperparameters,
        constraints: &Constraints,
    ) -> Result<Explanation> {
        let start = Instant::now();
        let result = generate(self.problem(), query, target, hp, constraints)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let metrics = evaluate_set(
            &self.metric_context(hp),
            &result.set.encoded,
            &result.projection.query_encoded,
            target,
        )?;
        let attribution = result.attributions(self.preprocessor(), query_id)?;
        let taus_met = hp.penalties.thresholds_met(
            metrics.proximity,
            metrics.sparsity,
            metrics.plausibility,
            metrics.diversity,
        );
        let violations = result.violations(self.preprocessor().layout());
        Ok(Explanation {
            result,
            metrics,
            attribution,
            taus_met,
            violations,
            runtime_s,
        })
    }

    pub fn run(
        &self,
        query: usize,
        target: usize,
        hp: &Hyperparameters,
        constraints: &Constraints,
    ) -> Result<RunOutcome> {
        let raw = self
            .data
            .raw
            .rows
            .get(query)
            .ok_or_else(|| CfxError::Config(format!("query index {query} out of range")))?;
        let e = self.explain(raw, Some(query.to_string()), target, hp, constraints)?;
        Ok(RunOutcome {
            query,
            seed: hp.seed,
            metrics: e.metrics,
            best_loss: e.result.loss.total,
            threshold_met: e.result.threshold_met,
            taus_met: e.taus_met,
            restarts: e.result.restarts,
            violations: e.violations,
            runtime_s: e.runtime_s,
            attribution: e.attribution,
            trace: e.result.trace,
            set: e.result.set,
        })
    }

    /// Runs every query under every seed (seed-major order), in parallel.
    pub fn run_batch(
        &self,
        queries: &[usize],
        seeds: &[u64],
        target: usize,
        hp: &Hyperparameters,
        constraints: &Constraints,
    ) -> Result<Vec<RunOutcome>> {
        let jobs: Vec<(u64, usize)> = seeds
            .iter()
            .flat_map(|&s| queries.iter().map(move |&q| (s, q)))
            .collect();
        jobs.par_iter()
            .map(|&(seed, q)| {
                let hp = Hyperparameters { seed, ..hp.clone() };
                self.run(q, target, &hp, constraints)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub label: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub runs: usize,
    pub proximity: f64,
    pub sparsity: f64,
    pub plausibility: f64,
    pub diversity: f64,
    pub confidence: f64,
    pub average: f64,
    /// Runs whose mean target confidence stayed at or below one half.
    pub invalid: usize,
    /// Fraction of runs whose best loss is within `tau_loss`.
    pub threshold_rate: f64,
    /// Fraction of returned sets meeting every penalty threshold.
    pub tau_rate: f64,
    pub best_loss: f64,
    pub runtime_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_distance: Option<f64>,
}

impl ExperimentRow {
    pub fn from_outcomes(
        label: impl Into<String>,
        dataset: &str,
        outcomes: &[RunOutcome],
    ) -> Result<Self> {
        let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.metrics).collect();
        let m = MetricsReport::mean_of(&reports)
            .ok_or_else(|| CfxError::Config("an experiment row needs at least one run".into()))?;
        let mut seeds: Vec<u64> = outcomes.iter().map(|o| o.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let n = outcomes.len() as f64;
        Ok(Self {
            label: label.into(),
            dataset: dataset.to_string(),
            seeds,
            runs: outcomes.len(),
            proximity: m.proximity,
            sparsity: m.sparsity,
            plausibility: m.plausibility,
            diversity: m.diversity,
            confidence: m.confidence,
            average: m.average,
            invalid: outcomes.iter().filter(|o| !o.is_valid()).count(),
            threshold_rate: outcomes.iter().filter(|o| o.threshold_met).count() as f64 / n,
            tau_rate: outcomes.iter().filter(|o| o.taus_met).count() as f64 / n,
            best_loss: mean(&outcomes.iter().map(|o| o.best_loss).collect::<Vec<_>>()),
            runtime_s: outcomes.iter().map(|o| o.runtime_s).sum(),
            class_distance: None,
        })
    }

    pub fn metrics(&self) -> MetricsReport {
        MetricsReport::new(
            self.proximity,
            self.sparsity,
            self.plausibility,
            self.diversity,
            self.confidence,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub name: String,
    pub rows: Vec<ExperimentRow>,
}

const CSV_HEADER: [&str; 16] = [
    "label",
    "dataset",
    "seeds",
    "runs",
    "proximity",
    "sparsity",
    "plausibility",
    "diversity",
    "confidence",
    "average",
    "invalid",
    "threshold_rate",
    "tau_rate",
    "best_loss",
    "runtime_s",
    "class_distance",
];

impl ExperimentTable {
    pub fn row(&self, label: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let seeds = r
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                r.label.clone(),
                r.dataset.clone(),
                seeds,
                r.runs.to_string(),
                r.proximity.to_string(),
                r.sparsity.to_string(),
                r.plausibility.to_string(),
                r.diversity.to_string(),
                r.confidence.to_string(),
                r.average.to_string(),
                r.invalid.to_string(),
                r.threshold_rate.to_string(),
                r.tau_rate.to_string(),
                r.best_loss.to_string(),
                r.runtime_s.to_string(),
                r.class_distance.map(|d| d.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Validity,
    Proximity,
    Sparsity,
    Plausibility,
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCombo {
    pub name: String,
    pub terms: Vec<LossTerm>,
}

impl AblationCombo {
    pub fn new(name: impl Into<String>, terms: &[LossTerm]) -> Self {
        Self {
            name: name.into(),
            terms: terms.to_vec(),
        }
    }

    pub fn has(&self, term: LossTerm) -> bool {
        self.terms.contains(&term)
    }

    /// Zeroes the weights of the absent terms.
    pub fn apply(&self, hp: &Hyperparameters) -> Result<Hyperparameters> {
        if !self.has(LossTerm::Validity) || !self.has(LossTerm::Proximity) {
            return Err(CfxError::Config(format!(
                "combination `{}` must include validity and proximity",
                self.name
            )));
        }
        let mut hp = hp.clone();
        if !self.has(LossTerm::Sparsity) {
            hp.weights.sparsity = 0.0;
        }
        if !self.has(LossTerm::Plausibility) {
            hp.weights.plausibility = 0.0;
        }
        if !self.has(LossTerm::Diversity) {
            hp.weights.diversity = 0.0;
        }
        Ok(hp)
    }
}

/// The eight combinations of optional terms on top of validity and
/// proximity, the last one being the full loss.
pub fn ablation_combos() -> Vec<AblationCombo> {
    use LossTerm::*;
    let base = [Validity, Proximity];
    let extras: [&[LossTerm]; 8] = [
        &[],
        &[Sparsity],
        &[Plausibility],
        &[Diversity],
        &[Sparsity, Plausibility],
        &[Sparsity, Diversity],
        &[Plausibility, Diversity],
        &[Sparsity, Plausibility, Diversity],
    ];
    extras
        .iter()
        .map(|extra| {
            let mut terms = base.to_vec();
            terms.extend_from_slice(extra);
            let name = terms
                .iter()
                .map(|t| match t {
                    Validity => "val",
                    Proximity => "prox",
                    Sparsity => "spars",
                    Plausibility => "plaus",
                    Diversity => "div",
                })
                .collect::<Vec<_>>()
                .join("+");
            AblationCombo { name, terms }
        })
        .collect()
}

/// One row per combination, averaged over queries and seeds.
pub fn ablation_run(
    bench: &Workbench,
    combos: &[AblationCombo],
    hp: &Hyperparameters,
    seeds: &[u64],
    queries: &[usize],
    target: usize,
) -> Result<ExperimentTable> {
    let configs = combos
        .iter()
        .map(|c| c.apply(hp))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(combos.len());
    for (combo, hp) in combos.iter().zip(&configs) {
        let outcomes = bench.run_batch(queries, seeds, target, hp, &Constraints::none())?;
        rows.push(ExperimentRow::from_outcomes(
            &combo.name,
            &bench.tag,
            &outcomes,
        )?);
    }
    Ok(ExperimentTable {
        name: "ablation".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Perturbation,
    Penalty,
}

impl std::str::FromStr for Toggle {
    type Err = CfxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbation" => Ok(Toggle::Perturbation),
            "penalty" => Ok(Toggle::Penalty),
            other => Err(CfxError::Config(format!(
                "unknown toggle `{other}` (expected perturbation or penalty)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToggleStudy {
    pub table: ExperimentTable,
    /// Paired outcomes: `on[i]` and `off[i]` share query and seed.
    pub on: Vec<RunOutcome>,
    pub off: Vec<RunOutcome>,
}

pub fn toggle_study(
    bench: &Workbench,
    toggle: Toggle,
    hp: &Hyperparameters,
    seeds: &[u64],
    queries: &[usize],
    target: usize,
) -> Result<ToggleStudy> {
    let mut off_hp = hp.clone();
    let (name, on_label, off_label) = match toggle {
        Toggle::Perturbation => {
            off_hp.max_perturbations = 0;
            ("perturbation", "with perturbation", "without perturbation")
        }
        Toggle::Penalty => {
            off_hp.penalties.enabled = false;
            ("penalty", "with penalty", "without penalty")
        }
    };
    let mut on_hp = hp.clone();
    if toggle == Toggle::Penalty {
        on_hp.penalties.enabled = true;
    }
    let on = bench.run_batch(queries, seeds, target, &on_hp, &Constraints::none())?;
    let off = bench.run_batch(queries, seeds, target, &off_hp, &Constraints::none())?;
    let table = ExperimentTable {
        name: name.into(),
        rows: vec![
            ExperimentRow::from_outcomes(on_label, &bench.tag, &on)?,
            ExperimentRow::from_outcomes(off_label, &bench.tag, &off)?,
        ],
    };
    Ok(ToggleStudy { table, on, off })
}

#[derive(Debug, Clone)]
pub struct MulticlassSweep {
    /// One row per origin class, with its distance to the target.
    pub table: ExperimentTable,
    /// Spearman correlation of class distance against proximity over
    /// every (origin, seed) cell.
    pub correlation: f64,
    /// The same correlation computed within each seed.
    pub per_seed: Vec<(u64, f64)>,
}

/// Generates towards `target` from every other class. Rows are ordered by
/// origin class; the target's own row is skipped.
pub fn multiclass_sweep(
    bench: &Workbench,
    target: usize,
    hp: &Hyperparameters,
    seeds: &[u64],
    per_class: usize,
) -> Result<MulticlassSweep> {
    let classes = bench.data.n_classes();
    if target >= classes {
        return Err(CfxError::InvalidClass {
            index: target,
            classes,
        });
    }
    let mut rows = Vec::new();
    let mut cells: Vec<(u64, f64, f64)> = Vec::new();
    for origin in (0..classes).filter(|&c| c != target) {
        let queries = bench.queries_of_class(origin, per_class);
        if queries.is_empty() {
            log::warn!("no test rows predicted as class {origin}; row skipped");
            continue;
        }
        let outcomes = bench.run_batch(&queries, seeds, target, hp, &Constraints::none())?;
        let distance = origin.abs_diff(target) as f64;
        for &seed in seeds {
            let prox: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.seed == seed)
                .map(|o| o.metrics.proximity)
                .collect();
            cells.push((seed, distance, mean(&prox)));
        }
        let mut row =
            ExperimentRow::from_outcomes(format!("origin={origin}"), &bench.tag, &outcomes)?;
        row.class_distance = Some(distance);
        rows.push(row);
    }
    let correlation = spearman(
        &cells.iter().map(|c| c.1).collect::<Vec<_>>(),
        &cells.iter().map(|c| c.2).collect::<Vec<_>>(),
    );
    let per_seed = seeds
        .iter()
        .map(|&s| {
            let mine: Vec<_> = cells.iter().filter(|c| c.0 == s).collect();
            let d: Vec<f64> = mine.iter().map(|c| c.1).collect();
            let p: Vec<f64> = mine.iter().map(|c| c.2).collect();
            (s, spearman(&d, &p))
        })
        .collect();
    Ok(MulticlassSweep {
        table: ExperimentTable {
            name: format!("multiclass target={target}"),
            rows,
        },
        correlation,
        per_seed,
    })
}

/// Sets one hyperparameter by name. `lambda` sets all four weights.
pub fn set_hyperparameter(hp: &mut Hyperparameters, name: &str, value: f64) -> Result<()> {
    let count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
            Ok(v as usize)
        } else {
            Err(CfxError::Config(format!(
                "`{name}` needs a non-negative integer, got {v}"
            )))
        }
    };
    match name {
        "learning_rate" | "alpha" => hp.learning_rate = value,
        "lambda" => {
            hp.weights.proximity = value;
            hp.weights.sparsity = value;
            hp.weights.plausibility = value;
            hp.weights.diversity = value;
        }
        "lambda_prox" => hp.weights.proximity = value,
        "lambda_spars" => hp.weights.sparsity = value,
        "lambda_plaus" => hp.weights.plausibility = value,
        "lambda_div" => hp.weights.diversity = value,
        "tau_prox" => hp.penalties.tau_proximity = value,
        "tau_spars" => hp.penalties.tau_sparsity = value,
        "tau_plaus" => hp.penalties.tau_plausibility = value,
        "tau_div" => hp.penalties.tau_diversity = value,
        "gamma_pen" => hp.penalties.gamma = value,
        "gamma_pert" => hp.gamma_pert = value,
        "tau_loss" => hp.tau_loss = value,
        "tau_ld" => hp.tau_ld = value,
        "patience" => hp.patience = count(value)?,
        "max_iterations" | "mu" => hp.max_iterations = count(value)?,
        "max_perturbations" | "delta" => hp.max_perturbations = count(value)?,
        "n" => hp.n = count(value)?,
        "k" => hp.k = count(value)?,
        "epsilon_change" => hp.epsilon_change = value,
        "sparsity_temperature" => hp.sparsity_temperature = value,
        "seed" => hp.seed = count(value)? as u64,
        other => {
            return Err(CfxError::Config(format!(
                "unknown hyperparameter `{other}`"
            )))
        }
    }
    Ok(())
}

/// Cartesian product of the grid, rows ranked by average score (ties keep
/// enumeration order).
pub fn grid_sweep(
    bench: &Workbench,
    grid: &BTreeMap<String, Vec<f64>>,
    base: &Hyperparameters,
    seeds: &[u64],
    queries: &[usize],
    target: usize,
) -> Result<ExperimentTable> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(CfxError::Config(
            "the grid needs at least one value per parameter".into(),
        ));
    }
    let mut points: Vec<Vec<(&str, f64)>> = vec![Vec::new()];
    for (name, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push((name.as_str(), v));
                    q
                })
            })
            .collect();
    }
    let mut rows = Vec::with_capacity(points.len());
    for point in &points {
        let mut hp = base.clone();
        for &(name, v) in point {
            set_hyperparameter(&mut hp, name, v)?;
        }
        hp.validate()?;
        let label = point
            .iter()
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        let outcomes = bench.run_batch(queries, seeds, target, &hp, &Constraints::none())?;
        rows.push(ExperimentRow::from_outcomes(label, &bench.tag, &outcomes)?);
    }
    rows.sort_by(|a, b| b.average.total_cmp(&a.average));
    Ok(ExperimentTable {
        name: "grid".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    /// Wall time of one diversity-term evaluation (value and gradient).
    pub seconds_per_iteration: f64,
    /// Time ratio against the previous row; `None` for the first.
    pub ratio: Option<f64>,
}

/// Times the diversity term for each set size on random `n x d` sets.
pub fn bench(sizes: &[usize], d: usize, repetitions: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || repetitions == 0 || d == 0 {
        return Err(CfxError::Config(
            "bench needs sizes, a width and repetitions".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<BenchRow> = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let data: Vec<f64> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Matrix::from_vec(n, d, data)?;
        let mut sink = 0.0;
        let start = Instant::now();
        for _ in 0..repetitions {
            let term = diversity_loss(std::hint::black_box(&x));
            sink += term.value + term.grad.as_slice()[0];
        }
        std::hint::black_box(sink);
        let t = start.elapsed().as_secs_f64() / repetitions as f64;
        let ratio = out.last().map(|prev| t / prev.seconds_per_iteration);
        out.push(BenchRow {
            n,
            seconds_per_iteration: t,
            ratio,
        });
    }
    Ok(out)
}
