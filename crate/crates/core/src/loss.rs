//! Counterfactual loss terms. Every term returns its value together with its
//! gradient with respect to the relaxed counterfactual matrix `X'`
//! (`n` rows, encoded width `d`), except validity, whose gradient is taken
//! with respect to the model's output probabilities and chained through the
//! network by the caller.

use serde::{Deserialize, Serialize};

use crate::data::{argmax, Layout};
use crate::error::{CfxError, Result};
use crate::matrix::Matrix;
use crate::nn::sigmoid;

/// Denominator guard of the plausibility normalisation.
pub const PLAUSIBILITY_GUARD: f64 = 1e-8;
/// Diagonal jitter used when inverting the diversity kernel.
pub const DIVERSITY_JITTER: f64 = 1e-8;
/// Probabilities are clamped this far from 0 and 1 inside logarithms.
const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidityMode {
    Hinge,
    Bce,
    Ce,
}

impl ValidityMode {
    /// Binary cross-entropy for sigmoid heads, cross-entropy otherwise.
    pub fn default_for(binary: bool) -> Self {
        if binary {
            ValidityMode::Bce
        } else {
            ValidityMode::Ce
        }
    }
}

impl std::str::FromStr for ValidityMode {
    type Err = CfxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hinge" => Ok(ValidityMode::Hinge),
            "bce" => Ok(ValidityMode::Bce),
            "ce" => Ok(ValidityMode::Ce),
            other => Err(CfxError::Config(format!("unknown validity mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub proximity: f64,
    pub sparsity: f64,
    pub plausibility: f64,
    pub diversity: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            proximity: 0.5,
            sparsity: 0.5,
            plausibility: 0.5,
            diversity: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_prox", self.proximity),
            ("lambda_spars", self.sparsity),
            ("lambda_plaus", self.plausibility),
            ("lambda_div", self.diversity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CfxError::Config(format!(
                    "{name} must be a non-negative number"
                )));
            }
        }
        Ok(())
    }
}

/// Threshold penalties: a minimised term above its threshold is scaled by
/// `1 + gamma`; diversity below its threshold is scaled by `1 - gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    pub tau_proximity: f64,
    pub tau_sparsity: f64,
    pub tau_plausibility: f64,
    pub tau_diversity: f64,
    pub gamma: f64,
    pub enabled: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            tau_proximity: 0.2,
            tau_sparsity: 0.2,
            tau_plausibility: 0.4,
            tau_diversity: 0.9,
            gamma: 0.1,
            enabled: true,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_prox", self.tau_proximity),
            ("tau_spars", self.tau_sparsity),
            ("tau_plaus", self.tau_plausibility),
            ("tau_div", self.tau_diversity),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CfxError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(CfxError::Config("gamma_pen must be non-negative".into()));
        }
        Ok(())
    }

    /// Whether measured metric values satisfy every threshold.
    pub fn thresholds_met(
        &self,
        proximity: f64,
        sparsity: f64,
        plausibility: f64,
        diversity: f64,
    ) -> bool {
        proximity <= self.tau_proximity
            && sparsity <= self.tau_sparsity
            && plausibility <= self.tau_plausibility
            && diversity >= self.tau_diversity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyDirection {
    Minimize,
    Maximize,
}

/// Multiplier applied to a term (and its gradient) by the threshold penalty.
pub fn penalty_factor(value: f64, tau: f64, gamma: f64, direction: PenaltyDirection) -> f64 {
    match direction {
        PenaltyDirection::Minimize if value > tau => 1.0 + gamma,
        PenaltyDirection::Maximize if value < tau => 1.0 - gamma,
        _ => 1.0,
    }
}

pub fn apply_penalty(value: f64, tau: f64, gamma: f64, direction: PenaltyDirection) -> f64 {
    value * penalty_factor(value, tau, gamma, direction)
}

/// A loss term's value and its gradient with respect to `X'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub value: f64,
    pub grad: Matrix,
}

/// Validity value and per-row gradients with respect to the output
/// probabilities. `probabilities[i]` has one entry for sigmoid heads and
/// `cl` entries for softmax heads.
pub fn validity_loss(
    probabilities: &[Vec<f64>],
    target: usize,
    mode: ValidityMode,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = probabilities.len();
    if n == 0 {
        return Err(CfxError::Config(
            "validity needs at least one instance".into(),
        ));
    }
    let width = probabilities[0].len();
    let binary = width == 1;
    match (mode, binary) {
        (ValidityMode::Hinge | ValidityMode::Bce, false) => {
            return Err(CfxError::Config(format!(
                "{mode:?} validity needs a binary (sigmoid) model"
            )))
        }
        (ValidityMode::Ce, true) => {
            return Err(CfxError::Config(
                "cross-entropy validity needs a softmax model".into(),
            ))
        }
        _ => {}
    }
    let classes = if binary { 2 } else { width };
    if target >= classes {
        return Err(CfxError::InvalidClass {
            index: target,
            classes,
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(n);
    for p in probabilities {
        if p.len() != width {
            return Err(CfxError::shape("probability vector", width, p.len()));
        }
        let mut g = vec![0.0; width];
        match mode {
            ValidityMode::Hinge => {
                let y = if target == 1 { 1.0 } else { -1.0 };
                let score = 2.0 * p[0] - 1.0;
                let margin = 1.0 - y * score;
                if margin > 0.0 {
                    total += margin;
                    g[0] = -2.0 * y * inv_n;
                }
            }
            ValidityMode::Bce => {
                let q = p[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if target == 1 {
                    total -= q.ln();
                    g[0] = -inv_n / q;
                } else {
                    total -= (1.0 - q).ln();
                    g[0] = inv_n / (1.0 - q);
                }
            }
            ValidityMode::Ce => {
                let q = p[target].max(PROB_CLAMP);
                total -= q.ln();
                g[target] = -inv_n / q;
            }
        }
        grads.push(g);
    }
    Ok((total * inv_n, grads))
}

fn check_query(x_cf: &Matrix, query: &[f64]) -> Result<()> {
    if x_cf.cols() != query.len() {
        return Err(CfxError::shape(
            "counterfactual width",
            query.len(),
            x_cf.cols(),
        ));
    }
    if x_cf.rows() == 0 {
        return Err(CfxError::Config("the counterfactual set is empty".into()));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean MAD-scaled absolute difference over all rows and encoded columns.
pub fn proximity_loss(x_cf: &Matrix, query: &[f64], mad: &[f64]) -> Result<Term> {
    check_query(x_cf, query)?;
    if mad.len() != query.len() {
        return Err(CfxError::shape("MAD vector", query.len(), mad.len()));
    }
    let (n, m) = x_cf.shape();
    let scale = 1.0 / (n * m) as f64;
    let mut grad = Matrix::zeros(n, m);
    let mut value = 0.0;
    for i in 0..n {
        for j in 0..m {
            let diff = x_cf[(i, j)] - query[j];
            value += diff.abs() / mad[j];
            grad[(i, j)] = scale * sign(diff) / mad[j];
        }
    }
    Ok(Term {
        value: value * scale,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsityTerm {
    /// Mean fraction of changed original features (indicator form).
    pub exact: f64,
    /// Sigmoid surrogate of the indicator.
    pub smooth: f64,
    /// Gradient of `smooth`.
    pub grad: Matrix,
}

/// Fraction of original features changed. A continuous feature changes when
/// `|x' - x| >= eps`; a one-hot group changes when its decoded category
/// differs. The surrogate replaces the indicator by
/// `sigmoid((delta - eps) / temperature)`, with `delta` half the group's L1
/// difference for one-hot groups.
pub fn sparsity_loss(
    x_cf: &Matrix,
    query: &[f64],
    layout: &Layout,
    eps: f64,
    temperature: f64,
) -> Result<SparsityTerm> {
    check_query(x_cf, query)?;
    if layout.width != query.len() {
        return Err(CfxError::shape("layout width", query.len(), layout.width));
    }
    if !(eps > 0.0 && temperature > 0.0) {
        return Err(CfxError::Config(
            "epsilon and temperature must be positive".into(),
        ));
    }
    let n = x_cf.rows();
    let scale = 1.0 / (n * layout.n_features()) as f64;
    let mut grad = Matrix::zeros(n, query.len());
    let (mut exact, mut smooth) = (0.0, 0.0);
    for i in 0..n {
        let row = x_cf.row(i);
        for span in &layout.spans {
            let r = span.range();
            let (delta, changed) = if span.is_categorical() {
                let d: f64 = r.clone().map(|j| (row[j] - query[j]).abs()).sum::<f64>() * 0.5;
                (d, argmax(&row[r.clone()]) != argmax(&query[r.clone()]))
            } else {
                let d = (row[span.start] - query[span.start]).abs();
                (d, d >= eps)
            };
            if changed {
                exact += 1.0;
            }
            let s = sigmoid((delta - eps) / temperature);
            smooth += s;
            let ds = scale * s * (1.0 - s) / temperature;
            let half = if span.is_categorical() { 0.5 } else { 1.0 };
            for j in r {
                grad[(i, j)] = ds * half * sign(row[j] - query[j]);
            }
        }
    }
    Ok(SparsityTerm {
        exact: exact * scale,
        smooth: smooth * scale,
        grad,
    })
}

/// Mean absolute difference over encoded columns.
pub fn mean_abs_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// k-nearest-neighbour plausibility. For each row, the distances to its `k`
/// nearest observed rows are min-max normalised and averaged; the result is
/// averaged over the set.
pub fn plausibility_loss(x_cf: &Matrix, observed: &Matrix, k: usize) -> Result<Term> {
    if observed.rows() == 0 {
        return Err(CfxError::Data("plausibility needs observed data".into()));
    }
    if observed.cols() != x_cf.cols() {
        return Err(CfxError::shape(
            "observed width",
            x_cf.cols(),
            observed.cols(),
        ));
    }
    if k == 0 || k > observed.rows() {
        return Err(CfxError::Config(format!(
            "k must lie in 1..={} (observed rows), got {k}",
            observed.rows()
        )));
    }
    let (n, m) = x_cf.shape();
    let kf = k as f64;
    let mut grad = Matrix::zeros(n, m);
    let mut value = 0.0;
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(observed.rows());
    for i in 0..n {
        let row = x_cf.row(i);
        dists.clear();
        dists.extend(
            observed
                .iter_rows()
                .enumerate()
                .map(|(o, obs)| (mean_abs_distance(row, obs), o)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, cmp);
            dists.truncate(k);
        }
        dists.sort_by(cmp);
        let (d_min, o_min) = dists[0];
        let (d_max, o_max) = dists[k - 1];
        let sum: f64 = dists.iter().map(|d| d.0).sum();
        let numer = sum - kf * d_min;
        let denom = kf * (d_max - d_min + PLAUSIBILITY_GUARD);
        value += numer / denom;
        if k == 1 {
            continue;
        }
        // d(numer/denom) = dnumer/denom - numer*ddenom/denom^2
        let a = 1.0 / denom;
        let b = numer / (denom * denom);
        let g = grad.row_mut(i);
        let inv_m = 1.0 / m as f64;
        let mut add = |o: usize, coef: f64| {
            let obs = observed.row(o);
            for l in 0..m {
                g[l] += coef * inv_m * sign(row[l] - obs[l]);
            }
        };
        for &(_, o) in &dists {
            add(o, a);
        }
        add(o_min, -kf * a + b * kf);
        add(o_max, -b * kf);
    }
    let inv_n = 1.0 / n as f64;
    grad.scale(inv_n);
    Ok(Term {
        value: value * inv_n,
        grad,
    })
}

/// Similarity kernel `K_ij = 1 / (1 + sum_l |x'_il - x'_jl|)`, unit diagonal.
pub fn diversity_kernel(x_cf: &Matrix) -> Matrix {
    let n = x_cf.rows();
    let mut k = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = x_cf
                .row(i)
                .iter()
                .zip(x_cf.row(j))
                .map(|(a, b)| (a - b).abs())
                .sum();
            let v = 1.0 / (1.0 + d);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Determinant of the similarity kernel. The gradient uses
/// `d det / dK = det(K + jI) (K + jI)^-T` with a small diagonal jitter so
/// that rank-deficient sets still get a usable direction.
pub fn diversity_loss(x_cf: &Matrix) -> Term {
    let (n, m) = x_cf.shape();
    let kernel = diversity_kernel(x_cf);
    let value = kernel.determinant();
    let mut grad = Matrix::zeros(n, m);
    if n < 2 {
        return Term { value, grad };
    }
    let mut jittered = kernel.clone();
    for i in 0..n {
        jittered[(i, i)] += DIVERSITY_JITTER;
    }
    let Some(lu) = jittered.lu() else {
        return Term { value, grad };
    };
    let det = lu.determinant();
    let inv = lu.inverse();
    for i in 0..n {
        for j in (i + 1)..n {
            // K is symmetric, so (i, j) and (j, i) contribute equally.
            let dk = det * (inv[(j, i)] + inv[(i, j)]);
            let kij = kernel[(i, j)];
            let coef = -dk * kij * kij;
            for l in 0..m {
                let s = sign(x_cf[(i, l)] - x_cf[(j, l)]);
                grad[(i, l)] += coef * s;
                grad[(j, l)] -= coef * s;
            }
        }
    }
    Term { value, grad }
}

/// Squared deviation of every one-hot block sum from 1.
pub fn categorical_regularizer(x_cf: &Matrix, layout: &Layout) -> Result<Term> {
    if layout.width != x_cf.cols() {
        return Err(CfxError::shape("layout width", x_cf.cols(), layout.width));
    }
    let n = x_cf.rows();
    let mut grad = Matrix::zeros(n, x_cf.cols());
    let mut value = 0.0;
    for span in layout.categorical_spans() {
        for i in 0..n {
            let s: f64 = x_cf.row(i)[span.range()].iter().sum::<f64>() - 1.0;
            value += s * s;
            for j in span.range() {
                grad[(i, j)] = 2.0 * s;
            }
        }
    }
    Ok(Term { value, grad })
}

/// Raw component values of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub validity: f64,
    pub proximity: f64,
    pub sparsity: f64,
    pub sparsity_smooth: f64,
    pub plausibility: f64,
    pub diversity: f64,
    pub categorical: f64,
}

/// Component values plus the penalised weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub validity: f64,
    pub proximity: f64,
    pub sparsity: f64,
    pub sparsity_smooth: f64,
    pub plausibility: f64,
    pub diversity: f64,
    pub categorical: f64,
    pub total: f64,
}

/// `d total / d term` for the four weighted terms, penalties included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermCoefficients {
    pub proximity: f64,
    pub sparsity: f64,
    pub plausibility: f64,
    pub diversity: f64,
}

/// `L = val + l_prox P(prox) + l_spars P(spars) + l_plaus P(plaus)
///      + l_div (1 - P(div)) + cat`, with `P` the threshold penalty and the
/// sparsity surrogate standing in for the indicator.
pub fn total_loss(
    c: &LossComponents,
    weights: &LossWeights,
    penalties: &PenaltyConfig,
) -> (LossBreakdown, TermCoefficients) {
    let factor = |value: f64, tau: f64, dir: PenaltyDirection| {
        if penalties.enabled {
            penalty_factor(value, tau, penalties.gamma, dir)
        } else {
            1.0
        }
    };
    let f_prox = factor(
        c.proximity,
        penalties.tau_proximity,
        PenaltyDirection::Minimize,
    );
    let f_spars = factor(
        c.sparsity_smooth,
        penalties.tau_sparsity,
        PenaltyDirection::Minimize,
    );
    let f_plaus = factor(
        c.plausibility,
        penalties.tau_plausibility,
        PenaltyDirection::Minimize,
    );
    let f_div = factor(
        c.diversity,
        penalties.tau_diversity,
        PenaltyDirection::Maximize,
    );
    let coef = TermCoefficients {
        proximity: weights.proximity * f_prox,
        sparsity: weights.sparsity * f_spars,
        plausibility: weights.plausibility * f_plaus,
        diversity: -weights.diversity * f_div,
    };
    let total = c.validity
        + coef.proximity * c.proximity
        + coef.sparsity * c.sparsity_smooth
        + coef.plausibility * c.plausibility
        + weights.diversity * (1.0 - f_div * c.diversity)
        + c.categorical;
    let breakdown = LossBreakdown {
        validity: c.validity,
        proximity: c.proximity,
        sparsity: c.sparsity,
        sparsity_smooth: c.sparsity_smooth,
        plausibility: c.plausibility,
        diversity: c.diversity,
        categorical: c.categorical,
        total,
    };
    (breakdown, coef)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, FeatureSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn fd_grad(f: impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
        let h = 1e-5;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut p = x.clone();
                p[(i, j)] += h;
                let mut q = x.clone();
                q[(i, j)] -= h;
                g[(i, j)] = (f(&p) - f(&q)) / (2.0 * h);
            }
        }
        g
    }

    fn assert_close(a: &Matrix, b: &Matrix) {
        let diff: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            diff <= 1e-4 * na.max(nb) + 1e-9,
            "diff {diff} vs norms {na} {nb}"
        );
    }

    #[test]
    fn validity_examples() {
        let (v, _) = validity_loss(&[vec![1.0]], 1, ValidityMode::Hinge).unwrap();
        assert_eq!(v, 0.0);
        let (v, g) = validity_loss(&[vec![0.5]], 1, ValidityMode::Bce).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g[0][0] + 2.0).abs() < 1e-12);
        let (v, _) = validity_loss(&[vec![0.2, 0.3, 0.5]], 2, ValidityMode::Ce).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        // averaging over the set
        let (v, _) = validity_loss(&[vec![0.5], vec![1.0 - 1e-12]], 1, ValidityMode::Bce).unwrap();
        assert!((v - std::f64::consts::LN_2 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn validity_mode_must_match_model() {
        assert!(validity_loss(&[vec![0.2, 0.8]], 1, ValidityMode::Bce).is_err());
        assert!(validity_loss(&[vec![0.2]], 1, ValidityMode::Ce).is_err());
        assert!(validity_loss(&[vec![0.2, 0.8]], 2, ValidityMode::Ce).is_err());
    }

    #[test]
    fn proximity_examples() {
        let q = [1.0, 2.0];
        let t = proximity_loss(&Matrix::repeat_row(&q, 3), &q, &[1.0, 1.0]).unwrap();
        assert_eq!(t.value, 0.0);
        assert_eq!(t.grad.max_abs(), 0.0);
        let t = proximity_loss(&m(&[&[2.0, 2.0]]), &q, &[1.0, 1.0]).unwrap();
        assert!((t.value - 0.5).abs() < 1e-15);
        let t2 = proximity_loss(&m(&[&[2.0, 2.0]]), &q, &[2.0, 1.0]).unwrap();
        assert!((t2.value - 0.25).abs() < 1e-15);
    }

    fn mixed_layout() -> Layout {
        FeatureSchema::new(vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::continuous("b"),
            FeatureSpec::categorical("c", ["x", "y", "z"]),
            FeatureSpec::continuous("d"),
        ])
        .unwrap()
        .layout()
    }

    #[test]
    fn sparsity_examples() {
        let layout = mixed_layout();
        let q = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let t = sparsity_loss(&Matrix::repeat_row(&q, 2), &q, &layout, 1e-2, 0.05).unwrap();
        assert_eq!(t.exact, 0.0);
        let one_changed = m(&[&[0.5, 0.0, 1.0, 0.0, 0.0, 0.0]]);
        let t = sparsity_loss(&one_changed, &q, &layout, 1e-2, 0.05).unwrap();
        assert_eq!(t.exact, 0.25);
        // category flip counts as one feature
        let flipped = m(&[&[0.0, 0.0, 0.4, 0.6, 0.0, 0.0]]);
        let t = sparsity_loss(&flipped, &q, &layout, 1e-2, 0.05).unwrap();
        assert_eq!(t.exact, 0.25);
        // below epsilon counts as unchanged
        let tiny = m(&[&[0.005, 0.0, 1.0, 0.0, 0.0, 0.0]]);
        assert_eq!(
            sparsity_loss(&tiny, &q, &layout, 1e-2, 0.05).unwrap().exact,
            0.0
        );
    }

    #[test]
    fn sparsity_surrogate_saturates() {
        let layout = FeatureSchema::new(vec![FeatureSpec::continuous("a")])
            .unwrap()
            .layout();
        let eps = 0.2;
        let above = sparsity_loss(&m(&[&[eps + 0.1]]), &[0.0], &layout, eps, 1e-3).unwrap();
        assert!((above.smooth - 1.0).abs() < 1e-9);
        let below = sparsity_loss(&m(&[&[eps - 0.1]]), &[0.0], &layout, eps, 1e-3).unwrap();
        assert!(below.smooth.abs() < 1e-9);
    }

    #[test]
    fn plausibility_examples() {
        let obs = m(&[&[0.0], &[2.0], &[10.0]]);
        // k = 1 is always zero
        assert_eq!(
            plausibility_loss(&m(&[&[1.3]]), &obs, 1).unwrap().value,
            0.0
        );
        // neighbour distances {1, 3}
        let t = plausibility_loss(&m(&[&[-1.0]]), &obs, 2).unwrap();
        assert!((t.value - 0.5 * 2.0 / (2.0 + PLAUSIBILITY_GUARD)).abs() < 1e-15);
        // duplicate of an observed row
        let t = plausibility_loss(&m(&[&[2.0]]), &obs, 2).unwrap();
        assert!((t.value - 0.5).abs() < 1e-8);
        assert!(plausibility_loss(&m(&[&[2.0]]), &obs, 4).is_err());
        assert!(plausibility_loss(&m(&[&[2.0]]), &Matrix::zeros(0, 1), 1).is_err());
    }

    #[test]
    fn diversity_examples() {
        let one = diversity_loss(&m(&[&[0.3, 0.1]]));
        assert_eq!(one.value, 1.0);
        let dup = diversity_loss(&m(&[&[0.3, 0.1], &[0.3, 0.1]]));
        assert!(dup.value.abs() <= 1e-6);
        let t = diversity_loss(&m(&[&[0.0, 0.0], &[1.5, -0.5]]));
        assert!((t.value - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_examples() {
        let layout = FeatureSchema::new(vec![FeatureSpec::categorical("c", ["a", "b"])])
            .unwrap()
            .layout();
        assert_eq!(
            categorical_regularizer(&m(&[&[0.6, 0.4]]), &layout)
                .unwrap()
                .value,
            0.0
        );
        let v = categorical_regularizer(&m(&[&[0.6, 0.6]]), &layout)
            .unwrap()
            .value;
        assert!((v - 0.04).abs() < 1e-12);
        let cont = FeatureSchema::new(vec![FeatureSpec::continuous("a")])
            .unwrap()
            .layout();
        assert_eq!(
            categorical_regularizer(&m(&[&[5.0]]), &cont).unwrap().value,
            0.0
        );
    }

    #[test]
    fn penalty_examples() {
        let v = apply_penalty(0.3, 0.2, 0.1, PenaltyDirection::Minimize);
        assert!((v - 0.33).abs() < 1e-12);
        assert_eq!(
            apply_penalty(0.2, 0.2, 0.1, PenaltyDirection::Minimize),
            0.2
        );
        assert!((apply_penalty(0.5, 0.9, 0.1, PenaltyDirection::Maximize) - 0.45).abs() < 1e-12);
        assert_eq!(
            apply_penalty(0.95, 0.9, 0.1, PenaltyDirection::Maximize),
            0.95
        );
    }

    #[test]
    fn total_loss_examples() {
        let c = LossComponents {
            validity: 0.1,
            proximity: 0.2,
            sparsity: 0.0,
            sparsity_smooth: 0.1,
            plausibility: 0.3,
            diversity: 0.9,
            categorical: 0.0,
        };
        let off = PenaltyConfig {
            enabled: false,
            ..Default::default()
        };
        let (b, _) = total_loss(&c, &LossWeights::default(), &off);
        assert!((b.total - 0.45).abs() < 1e-12);
        let zero = LossWeights {
            proximity: 0.0,
            sparsity: 0.0,
            plausibility: 0.0,
            diversity: 0.0,
        };
        let (b, _) = total_loss(&c, &zero, &PenaltyConfig::default());
        assert_eq!(b.total, 0.1);
        // penalties: prox 0.2 <= 0.2 compliant, plaus 0.3 <= 0.4, div 0.9 >= 0.9
        let (b, _) = total_loss(&c, &LossWeights::default(), &PenaltyConfig::default());
        assert!((b.total - 0.45).abs() < 1e-12);
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = mixed_layout();
        let d = layout.width;
        let query: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obs = Matrix::from_rows(
            &(0..12)
                .map(|_| {
                    (0..d)
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let mad: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        for _ in 0..10 {
            let x = Matrix::from_rows(
                &(0..3)
                    .map(|_| {
                        (0..d)
                            .map(|_| rng.random_range(-2.0..2.0))
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let t = proximity_loss(&x, &query, &mad).unwrap();
            assert_close(
                &t.grad,
                &fd_grad(|y| proximity_loss(y, &query, &mad).unwrap().value, &x),
            );
            let t = sparsity_loss(&x, &query, &layout, 0.01, 0.5).unwrap();
            assert_close(
                &t.grad,
                &fd_grad(
                    |y| sparsity_loss(y, &query, &layout, 0.01, 0.5).unwrap().smooth,
                    &x,
                ),
            );
            let t = plausibility_loss(&x, &obs, 3).unwrap();
            assert_close(
                &t.grad,
                &fd_grad(|y| plausibility_loss(y, &obs, 3).unwrap().value, &x),
            );
            let t = diversity_loss(&x);
            assert_close(&t.grad, &fd_grad(|y| diversity_loss(y).value, &x));
            let t = categorical_regularizer(&x, &layout).unwrap();
            assert_close(
                &t.grad,
                &fd_grad(|y| categorical_regularizer(y, &layout).unwrap().value, &x),
            );
        }
    }
}
