//! Counterfactual set generation: random initialisation, Adam updates of the
//! relaxed set, projection onto the user constraints, convergence detection,
//! perturbation restarts and best-set tracking.

mod constraints;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::attribution::{compute_attributions, AttributionReport, GradientHistory};
use crate::data::{argmax, Cell, FeatureKind, Layout, Preprocessor, RawRow};
use crate::error::{CfxError, Result};
use crate::loss::{
    categorical_regularizer, diversity_loss, plausibility_loss, proximity_loss, sparsity_loss,
    total_loss, validity_loss, LossBreakdown, LossComponents, LossWeights, PenaltyConfig,
    ValidityMode,
};
use crate::matrix::Matrix;
use crate::nn::Mlp;

pub use constraints::{apply_constraints, Constraints, Projection};
pub use trace::{read_trace, write_trace, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub penalties: PenaltyConfig,
    /// Scale of the restart noise.
    pub gamma_pert: f64,
    /// Restarts continue while the best total loss exceeds this.
    pub tau_loss: f64,
    /// Convergence threshold on the loss change between iterations.
    pub tau_ld: f64,
    /// Consecutive sub-threshold changes needed to declare convergence.
    pub patience: usize,
    pub max_iterations: usize,
    pub max_perturbations: usize,
    pub n: usize,
    pub epsilon_change: f64,
    pub sparsity_temperature: f64,
    pub k: usize,
    /// Defaults to BCE for binary models and CE otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validity: Option<ValidityMode>,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weights: LossWeights::default(),
            penalties: PenaltyConfig::default(),
            gamma_pert: 0.5,
            tau_loss: 0.5,
            tau_ld: 1e-5,
            patience: 3,
            max_iterations: 1000,
            max_perturbations: 5,
            n: 5,
            epsilon_change: 1e-2,
            sparsity_temperature: 0.05,
            k: 5,
            validity: None,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CfxError::Config(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.gamma_pert >= 0.0) {
            return bad("gamma_pert must be non-negative");
        }
        if !(self.epsilon_change > 0.0) {
            return bad("epsilon_change must be positive");
        }
        if !(self.sparsity_temperature > 0.0) {
            return bad("sparsity_temperature must be positive");
        }
        if !(self.tau_ld >= 0.0) {
            return bad("tau_ld must be non-negative");
        }
        self.weights.validate()?;
        self.penalties.validate()
    }
}

/// A counterfactual set in relaxed, re-encoded and raw forms.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualSet {
    /// Optimised matrix in encoded space (one-hot blocks relaxed).
    pub relaxed: Matrix,
    /// Discretised rows re-encoded; metrics are computed on this.
    pub encoded: Matrix,
    /// Discretised rows in raw units.
    pub rows: Vec<RawRow>,
}

impl CounterfactualSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Turns a relaxed set into presentable rows: one-hot blocks go to their
/// argmax category (lower index on ties) and continuous columns are
/// inverse-transformed. With a projection, columns equal to the query's
/// encoded value reproduce the query's raw value exactly and raw values are
/// clamped to the permitted ranges.
pub fn discretize(
    relaxed: &Matrix,
    preprocessor: &Preprocessor,
    projection: Option<&Projection>,
) -> Result<CounterfactualSet> {
    let layout = preprocessor.layout();
    if relaxed.cols() != layout.width {
        return Err(CfxError::shape(
            "relaxed set width",
            layout.width,
            relaxed.cols(),
        ));
    }
    let mut rows = Vec::with_capacity(relaxed.rows());
    for r in relaxed.iter_rows() {
        let mut row = Vec::with_capacity(layout.n_features());
        for (j, span) in layout.spans.iter().enumerate() {
            let cell = match span.kind {
                FeatureKind::Categorical => Cell::Cat(argmax(&r[span.range()])),
                FeatureKind::Continuous => {
                    let v = r[span.start];
                    match projection {
                        Some(p) if p.fixed[j] || v == p.query_encoded[span.start] => p.query[j],
                        Some(p) => {
                            let mut raw = preprocessor.decode_value(j, v);
                            if let Some((lo, hi)) = p.raw_bounds[j] {
                                raw = raw.clamp(lo, hi);
                            }
                            Cell::Num(raw)
                        }
                        None => Cell::Num(preprocessor.decode_value(j, v)),
                    }
                }
            };
            row.push(cell);
        }
        rows.push(row);
    }
    let encoded = preprocessor.transform(&rows)?;
    Ok(CounterfactualSet {
        relaxed: relaxed.clone(),
        encoded,
        rows,
    })
}

/// Restart noise: adds `gamma * N(0, 1)` to every column that differs from
/// the query by more than `eps`, leaving unchanged columns untouched.
pub fn perturb(x: &mut Matrix, query: &[f64], gamma: f64, eps: f64, rng: &mut impl rand::Rng) {
    if gamma == 0.0 {
        return;
    }
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        for (v, q) in row.iter_mut().zip(query) {
            if (*v - q).abs() > eps {
                let noise: f64 = StandardNormal.sample(rng);
                *v += gamma * noise;
            }
        }
    }
}

/// Stream of the per-restart generator; stream 0 drives initialisation.
fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Everything one generation call reads; all of it is shared immutably.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a Mlp,
    pub preprocessor: &'a Preprocessor,
    /// Observed (training) rows, encoded.
    pub observed: &'a Matrix,
}

/// Loss value, its gradient and the attribution gradient at one `X'`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    pub gradient: Matrix,
    /// Gradient of the target-class probability, per row.
    pub target_gradient: Matrix,
    pub probabilities: Vec<Vec<f64>>,
}

/// Total loss of a relaxed set for a given query and target.
#[derive(Debug, Clone)]
pub struct SetObjective<'a> {
    problem: Problem<'a>,
    query: Vec<f64>,
    target: usize,
    mode: ValidityMode,
    mad: Vec<f64>,
    hp: &'a Hyperparameters,
}

impl<'a> SetObjective<'a> {
    pub fn new(
        problem: Problem<'a>,
        query_encoded: Vec<f64>,
        target: usize,
        hp: &'a Hyperparameters,
    ) -> Result<Self> {
        let model = problem.model;
        model.check_class(target)?;
        if query_encoded.len() != model.input_dim() {
            return Err(CfxError::shape(
                "query width",
                model.input_dim(),
                query_encoded.len(),
            ));
        }
        let mode = hp
            .validity
            .unwrap_or(ValidityMode::default_for(model.is_binary()));
        Ok(Self {
            mad: problem.preprocessor.encoded_mad(),
            problem,
            query: query_encoded,
            target,
            mode,
            hp,
        })
    }

    pub fn evaluate(&self, x: &Matrix) -> Result<Evaluation> {
        let model = self.problem.model;
        let (n, d) = x.shape();
        let traces = x
            .iter_rows()
            .map(|r| model.trace(r))
            .collect::<Result<Vec<_>>>()?;
        let probabilities: Vec<Vec<f64>> = traces.iter().map(|t| t.probabilities.clone()).collect();
        let (validity, prob_grads) = validity_loss(&probabilities, self.target, self.mode)?;
        let class_cot = model.class_cotangent(self.target)?;

        let mut gradient = Matrix::zeros(n, d);
        let mut target_gradient = Matrix::zeros(n, d);
        for (i, trace) in traces.iter().enumerate() {
            let dz = model.logit_cotangent(trace, &prob_grads[i])?;
            gradient
                .row_mut(i)
                .copy_from_slice(&model.backprop(trace, &dz, None));
            let dz = model.logit_cotangent(trace, &class_cot)?;
            target_gradient
                .row_mut(i)
                .copy_from_slice(&model.backprop(trace, &dz, None));
        }

        let layout = self.problem.preprocessor.layout();
        let prox = proximity_loss(x, &self.query, &self.mad)?;
        let spars = sparsity_loss(
            x,
            &self.query,
            layout,
            self.hp.epsilon_change,
            self.hp.sparsity_temperature,
        )?;
        let plaus = plausibility_loss(x, self.problem.observed, self.hp.k)?;
        let div = diversity_loss(x);
        let cat = categorical_regularizer(x, layout)?;
        let components = LossComponents {
            validity,
            proximity: prox.value,
            sparsity: spars.exact,
            sparsity_smooth: spars.smooth,
            plausibility: plaus.value,
            diversity: div.value,
            categorical: cat.value,
        };
        let (breakdown, coef) = total_loss(&components, &self.hp.weights, &self.hp.penalties);
        gradient.add_scaled(&prox.grad, coef.proximity);
        gradient.add_scaled(&spars.grad, coef.sparsity);
        gradient.add_scaled(&plaus.grad, coef.plausibility);
        gradient.add_scaled(&div.grad, coef.diversity);
        gradient.add_scaled(&cat.grad, 1.0);
        Ok(Evaluation {
            breakdown,
            gradient,
            target_gradient,
            probabilities,
        })
    }

    pub fn value(&self, x: &Matrix) -> Result<f64> {
        Ok(self.evaluate(x)?.breakdown.total)
    }
}

#[derive(Debug, Clone)]
pub struct CounterfactualResult {
    pub set: CounterfactualSet,
    /// Loss at the returned (lowest-loss) relaxed set.
    pub loss: LossBreakdown,
    pub trace: Vec<TraceRecord>,
    /// Perturbation restarts performed.
    pub restarts: usize,
    /// The best total loss is within `tau_loss`.
    pub threshold_met: bool,
    pub history: GradientHistory,
    pub projection: Projection,
    pub target: usize,
    pub seed: u64,
}

impl CounterfactualResult {
    pub fn attributions(
        &self,
        preprocessor: &Preprocessor,
        query_id: Option<String>,
    ) -> Result<AttributionReport> {
        compute_attributions(
            &self.history,
            preprocessor.schema(),
            self.target,
            query_id,
            &self.projection.fixed_features(),
        )
    }

    /// Constraint violations of the discretised set; empty when compliant.
    pub fn violations(&self, layout: &Layout) -> Vec<String> {
        constraint_violations(&self.set, &self.projection, layout)
    }
}

/// Lists every broken constraint in a discretised set: fixed features must
/// equal the query bit for bit, continuous values must sit inside their
/// permitted raw interval and one-hot blocks must be exactly one-hot.
pub fn constraint_violations(
    set: &CounterfactualSet,
    projection: &Projection,
    layout: &Layout,
) -> Vec<String> {
    let mut out = Vec::new();
    for (i, row) in set.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if projection.fixed[j] && !same_cell(cell, &projection.query[j]) {
                out.push(format!("row {i}: fixed feature {j} changed"));
            }
            if let (Some((lo, hi)), Cell::Num(v)) = (projection.raw_bounds[j], cell) {
                if *v < lo || *v > hi {
                    out.push(format!(
                        "row {i}: feature {j} value {v} outside [{lo}, {hi}]"
                    ));
                }
            }
        }
    }
    for span in layout.categorical_spans() {
        for (i, row) in set.encoded.iter_rows().enumerate() {
            let block = &row[span.range()];
            let ones = block.iter().filter(|&&v| v == 1.0).count();
            let zeros = block.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != block.len() {
                out.push(format!(
                    "row {i}: one-hot block at column {} is not one-hot",
                    span.start
                ));
            }
        }
    }
    out
}

fn same_cell(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Num(x), Cell::Num(y)) => x.to_bits() == y.to_bits(),
        (Cell::Cat(x), Cell::Cat(y)) => x == y,
        _ => false,
    }
}

/// Runs the full optimisation for one query.
pub fn generate(
    problem: Problem<'_>,
    query: &[Cell],
    target: usize,
    hp: &Hyperparameters,
    constraints: &Constraints,
) -> Result<CounterfactualResult> {
    hp.validate()?;
    let model = problem.model;
    let pre = problem.preprocessor;
    model.check_class(target)?;
    let projection = constraints.resolve(pre, query)?;
    let query_encoded = projection.query_encoded.clone();
    let current = model.forward(&query_encoded)?.predicted_class;
    if current == target {
        return Err(CfxError::Config(format!(
            "the query is already classified as the target class {target}"
        )));
    }
    let objective = SetObjective::new(problem, query_encoded.clone(), target, hp)?;
    let (n, d) = (hp.n, pre.width());

    let mut init_rng = restart_rng(hp.seed, 0);
    let init: Vec<f64> = (0..n * d)
        .map(|_| StandardNormal.sample(&mut init_rng))
        .collect();
    let mut x = Matrix::from_vec(n, d, init)?;
    projection.project(&mut x);

    let mut history = GradientHistory::new(n, d);
    let mut trace = Vec::new();
    let mut best: Option<(Matrix, LossBreakdown)> = None;
    let mut restarts = 0;

    for restart in 0..=hp.max_perturbations {
        if restart > 0 {
            let best_total = best.as_ref().map_or(f64::INFINITY, |b| b.1.total);
            if best_total <= hp.tau_loss {
                break;
            }
            let mut rng = restart_rng(hp.seed, restart);
            perturb(
                &mut x,
                &query_encoded,
                hp.gamma_pert,
                hp.epsilon_change,
                &mut rng,
            );
            projection.project(&mut x);
            restarts += 1;
        }
        let mut adam = Adam::new(n * d, hp.learning_rate);
        let mut previous: Option<f64> = None;
        let mut calm = 0;
        for t in 0..hp.max_iterations {
            let eval = objective.evaluate(&x)?;
            let b = eval.breakdown;
            history.record_step_gradient(eval.target_gradient)?;
            trace.push(TraceRecord::new(t, restart, &b, restart > 0 && t == 0));
            if best.as_ref().is_none_or(|(_, bb)| b.total < bb.total) {
                best = Some((x.clone(), b));
            }
            if let Some(prev) = previous {
                if (b.total - prev).abs() < hp.tau_ld {
                    calm += 1;
                    if calm >= hp.patience {
                        break;
                    }
                } else {
                    calm = 0;
                }
            }
            previous = Some(b.total);
            adam.step(x.as_mut_slice(), eval.gradient.as_slice());
            projection.project(&mut x);
        }
    }

    let (best_x, loss) = best.expect("at least one iteration ran");
    let set = discretize(&best_x, pre, Some(&projection))?;
    Ok(CounterfactualResult {
        set,
        loss,
        trace,
        restarts,
        threshold_met: loss.total <= hp.tau_loss,
        history,
        projection,
        target,
        seed: hp.seed,
    })
}
