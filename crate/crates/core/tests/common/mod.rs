//! Oracles shared by the integration tests: finite differences, kink-free
//! point samplers and an independent constraint checker.

#![allow(dead_code)]

use cfx_core::data::{Cell, Direction, FeatureKind, FeatureSchema, Preprocessor};
use cfx_core::engine::Constraints;
use cfx_core::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
/// Distance kept from every kink so a step of `FD_STEP` cannot cross one.
pub const KINK_MARGIN: f64 = 1e-3;
/// Smallest nearest-to-farthest spread accepted by [`knn_is_stable`].
pub const KNN_SPREAD: f64 = 0.05;

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise gap, relative to the larger gradient's sup norm.
/// Central differences at `FD_STEP` carry roughly 1e-11 of rounding noise,
/// so near-zero gradients are compared against a floor of 1e-5 instead.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1e-5);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Every coordinate differs from the query by more than the margin.
pub fn clear_of_query(x: &Matrix, query: &[f64], margin: f64) -> bool {
    x.iter_rows()
        .all(|r| r.iter().zip(query).all(|(a, b)| (a - b).abs() > margin))
}

/// Every pair of rows differs by more than the margin in every column.
pub fn rows_pairwise_clear(x: &Matrix, margin: f64) -> bool {
    let n = x.rows();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            x.row(i)
                .iter()
                .zip(x.row(j))
                .all(|(a, b)| (a - b).abs() > margin)
        })
    })
}

fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// The k-nearest set, its nearest and its farthest member are all unique
/// with a margin, and no coordinate sits on an observed value. The
/// nearest-to-farthest spread is also kept away from zero: the score divides
/// by it, so its third derivative blows up there and central differences at
/// a fixed step stop being informative.
pub fn knn_is_stable(x: &Matrix, observed: &Matrix, k: usize, margin: f64) -> bool {
    x.iter_rows().all(|r| {
        if !observed
            .iter_rows()
            .all(|o| r.iter().zip(o).all(|(a, b)| (a - b).abs() > margin))
        {
            return false;
        }
        let mut d: Vec<f64> = observed.iter_rows().map(|o| mean_abs(r, o)).collect();
        d.sort_by(f64::total_cmp);
        let gap = |i: usize| d[i + 1] - d[i] > margin;
        let mut ok = k < 2 || (gap(0) && gap(k - 2) && d[k - 1] - d[0] > KNN_SPREAD);
        if k < d.len() {
            ok &= gap(k - 1);
        }
        ok
    })
}

pub fn away_from_threshold(value: f64, tau: f64, margin: f64) -> bool {
    (value - tau).abs() > margin
}

/// Random `n x d` sets until `accept` holds; panics after many misses so
/// that a broken sampler cannot hang the suite.
pub fn sample_until(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    mut accept: impl FnMut(&Matrix) -> bool,
) -> Matrix {
    for _ in 0..10_000 {
        let x = normal_matrix(rng, n, d);
        if accept(&x) {
            return x;
        }
    }
    panic!("no smooth sample found");
}

pub fn random_size(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Checks a discretised set against the constraints independently of the
/// engine: fixed cells bit-identical, ranges (explicit or observed and
/// widened to the query), directions relative to the query and a valid
/// category index for every categorical cell. Returns the broken rules.
pub fn independent_violations(
    schema: &FeatureSchema,
    pre: &Preprocessor,
    constraints: &Constraints,
    query: &[Cell],
    rows: &[Vec<Cell>],
    encoded: &Matrix,
) -> Vec<String> {
    let mut out = Vec::new();
    let fixed = |name: &str| {
        let spec = &schema.features[schema.index_of(name).unwrap()];
        !spec.mutable
            || constraints
                .fix
                .as_ref()
                .is_some_and(|f| f.iter().any(|x| x == name))
            || constraints
                .vary
                .as_ref()
                .is_some_and(|v| !v.iter().any(|x| x == name))
    };
    for (i, row) in rows.iter().enumerate() {
        for (j, (spec, cell)) in schema.features.iter().zip(row).enumerate() {
            let q = query[j];
            if fixed(&spec.name) {
                let same = match (cell, &q) {
                    (Cell::Num(a), Cell::Num(b)) => a.to_bits() == b.to_bits(),
                    (Cell::Cat(a), Cell::Cat(b)) => a == b,
                    _ => false,
                };
                if !same {
                    out.push(format!("row {i}: fixed `{}` changed", spec.name));
                }
                continue;
            }
            match (spec.kind, cell) {
                (FeatureKind::Continuous, Cell::Num(v)) => {
                    let qv = q.as_num().unwrap();
                    let (lo, hi) = match constraints.ranges.get(&spec.name) {
                        Some(&[lo, hi]) => (lo, hi),
                        None => {
                            let st = pre.stats(j).unwrap();
                            (st.min.min(qv), st.max.max(qv))
                        }
                    };
                    if *v < lo || *v > hi {
                        out.push(format!(
                            "row {i}: `{}` = {v} outside [{lo}, {hi}]",
                            spec.name
                        ));
                    }
                    match constraints
                        .directions
                        .get(&spec.name)
                        .copied()
                        .or(spec.direction)
                    {
                        Some(Direction::Increase) if *v < qv => {
                            out.push(format!("row {i}: `{}` decreased", spec.name))
                        }
                        Some(Direction::Decrease) if *v > qv => {
                            out.push(format!("row {i}: `{}` increased", spec.name))
                        }
                        _ => {}
                    }
                }
                (FeatureKind::Categorical, Cell::Cat(c)) if *c < spec.categories.len() => {}
                _ => out.push(format!("row {i}: `{}` has the wrong cell type", spec.name)),
            }
        }
    }
    for span in pre.layout().categorical_spans() {
        for (i, r) in encoded.iter_rows().enumerate() {
            let block = &r[span.range()];
            let ones = block.iter().filter(|&&v| v == 1.0).count();
            let zeros = block.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != block.len() - 1 {
                out.push(format!(
                    "row {i}: block at column {} is not one-hot",
                    span.start
                ));
            }
        }
    }
    out
}
