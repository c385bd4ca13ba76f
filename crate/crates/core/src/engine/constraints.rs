use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Cell, Direction, FeatureKind, Preprocessor};
use crate::error::{CfxError, Result};
use crate::matrix::Matrix;

/// User restrictions on how counterfactuals may differ from the query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constraints {
    /// Only these features may change. Exclusive with `fix`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vary: Option<Vec<String>>,
    /// These features keep the query's value. Exclusive with `vary`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fix: Option<Vec<String>>,
    /// Permitted `[lo, hi]` in raw units; defaults to the observed range.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<String, [f64; 2]>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub directions: BTreeMap<String, Direction>,
}

impl Constraints {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn fixing<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self {
            fix: Some(names.into_iter().map(Into::into).collect()),
            ..Self::default()
        }
    }

    /// Checks names and shapes against the preprocessor's schema.
    pub fn validate(&self, preprocessor: &Preprocessor) -> Result<()> {
        let schema = preprocessor.schema();
        if self.vary.is_some() && self.fix.is_some() {
            return Err(CfxError::Config(
                "features to vary and features to fix are mutually exclusive".into(),
            ));
        }
        let known = |name: &str| {
            schema
                .index_of(name)
                .ok_or_else(|| CfxError::Config(format!("unknown feature `{name}` in constraints")))
        };
        for name in self.vary.iter().chain(&self.fix).flatten() {
            known(name)?;
        }
        for (name, [lo, hi]) in &self.ranges {
            let j = known(name)?;
            if schema.features[j].kind != FeatureKind::Continuous {
                return Err(CfxError::Config(format!(
                    "range on categorical feature `{name}`"
                )));
            }
            if !(lo <= hi) {
                return Err(CfxError::Config(format!("range for `{name}` has lo > hi")));
            }
        }
        for name in self.directions.keys() {
            let j = known(name)?;
            if schema.features[j].kind != FeatureKind::Continuous {
                return Err(CfxError::Config(format!(
                    "direction constraints apply to continuous features only (`{name}`)"
                )));
            }
        }
        Ok(())
    }

    /// Resolves names into per-column bounds around a specific query.
    pub fn resolve(&self, preprocessor: &Preprocessor, query: &[Cell]) -> Result<Projection> {
        self.validate(preprocessor)?;
        let schema = preprocessor.schema();
        let layout = preprocessor.layout();
        let query_encoded = preprocessor.transform_row(query)?;

        let mut fixed = vec![false; schema.len()];
        for (j, f) in schema.features.iter().enumerate() {
            fixed[j] = !f.mutable;
        }
        if let Some(vary) = &self.vary {
            for (j, f) in schema.features.iter().enumerate() {
                if !vary.contains(&f.name) {
                    fixed[j] = true;
                }
            }
        }
        if let Some(fix) = &self.fix {
            for name in fix {
                fixed[schema.index_of(name).unwrap()] = true;
            }
        }
        if fixed.iter().all(|&f| f) {
            return Err(CfxError::InfeasibleConstraints(
                "every feature is fixed, so no counterfactual can differ from the query".into(),
            ));
        }

        let width = layout.width;
        let mut lower = vec![f64::NEG_INFINITY; width];
        let mut upper = vec![f64::INFINITY; width];
        let mut raw_bounds = vec![None; schema.len()];
        for (j, (f, span)) in schema.features.iter().zip(&layout.spans).enumerate() {
            let r = span.range();
            if fixed[j] {
                for c in r {
                    lower[c] = query_encoded[c];
                    upper[c] = query_encoded[c];
                }
                continue;
            }
            match f.kind {
                FeatureKind::Categorical => {
                    for c in r {
                        lower[c] = 0.0;
                        upper[c] = 1.0;
                    }
                }
                FeatureKind::Continuous => {
                    let q = query[j].as_num().expect("continuous query value");
                    let (mut lo, mut hi) = match self.ranges.get(&f.name) {
                        Some(&[lo, hi]) => (lo, hi),
                        None => {
                            let st = preprocessor.stats(j).expect("continuous stats");
                            // the query's own value is always admissible
                            (st.min.min(q), st.max.max(q))
                        }
                    };
                    match self.directions.get(&f.name).copied().or(f.direction) {
                        Some(Direction::Increase) => lo = lo.max(q),
                        Some(Direction::Decrease) => hi = hi.min(q),
                        None => {}
                    }
                    if lo > hi {
                        return Err(CfxError::InfeasibleConstraints(format!(
                            "range and direction for `{}` leave no admissible value",
                            f.name
                        )));
                    }
                    raw_bounds[j] = Some((lo, hi));
                    lower[span.start] = preprocessor.encode_value(j, lo);
                    upper[span.start] = preprocessor.encode_value(j, hi);
                }
            }
        }
        Ok(Projection {
            fixed,
            lower,
            upper,
            raw_bounds,
            query: query.to_vec(),
            query_encoded,
        })
    }
}

/// Per-column feasible box for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Fixed flag per original feature.
    pub fixed: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Permitted raw interval per continuous, non-fixed feature.
    pub raw_bounds: Vec<Option<(f64, f64)>>,
    pub query: Vec<Cell>,
    pub query_encoded: Vec<f64>,
}

impl Projection {
    pub fn fixed_features(&self) -> Vec<usize> {
        self.fixed
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect()
    }

    /// Clamps every column into its box; fixed columns get the query's
    /// encoded value exactly.
    pub fn project(&self, x: &mut Matrix) {
        let d = self.lower.len();
        debug_assert_eq!(x.cols(), d);
        for i in 0..x.rows() {
            let row = x.row_mut(i);
            for c in 0..d {
                if self.lower[c] == self.upper[c] {
                    row[c] = self.lower[c];
                } else {
                    row[c] = row[c].clamp(self.lower[c], self.upper[c]);
                }
            }
        }
    }
}

/// Projects `x` onto the constraint set of `query`.
pub fn apply_constraints(
    x: &Matrix,
    query: &[Cell],
    constraints: &Constraints,
    preprocessor: &Preprocessor,
) -> Result<Matrix> {
    let projection = constraints.resolve(preprocessor, query)?;
    let mut out = x.clone();
    projection.project(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, FeatureSpec};

    fn setup() -> (Preprocessor, Vec<Cell>) {
        let schema = FeatureSchema::new(vec![
            FeatureSpec::continuous("age"),
            FeatureSpec::categorical("job", ["a", "b", "c"]),
            FeatureSpec::continuous("income"),
        ])
        .unwrap();
        let rows: Vec<Vec<Cell>> = (0..10)
            .map(|i| {
                vec![
                    Cell::Num(i as f64),
                    Cell::Cat(i % 3),
                    Cell::Num(100.0 + 10.0 * i as f64),
                ]
            })
            .collect();
        let p = Preprocessor::fit(&rows, &schema).unwrap();
        (p, vec![Cell::Num(2.0), Cell::Cat(1), Cell::Num(150.0)])
    }

    fn inside(p: &Preprocessor, x: &Matrix, q: &[Cell]) -> Matrix {
        let mut inside = x.clone();
        // keep a copy strictly within the default observed box
        let proj = Constraints::none().resolve(p, q).unwrap();
        proj.project(&mut inside);
        inside
    }

    #[test]
    fn no_constraints_is_identity_inside_the_box() {
        let (p, q) = setup();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.7, 0.1, -0.3]]).unwrap();
        let x = inside(&p, &x, &q);
        assert_eq!(
            apply_constraints(&x, &q, &Constraints::none(), &p).unwrap(),
            x
        );
    }

    #[test]
    fn fixed_features_take_query_values() {
        let (p, q) = setup();
        let x =
            Matrix::from_rows(&[[1.0, 0.3, 0.3, 0.4, 1.0], [-1.0, 0.0, 0.0, 1.0, 0.5]]).unwrap();
        let out = apply_constraints(&x, &q, &Constraints::fixing(["age", "job"]), &p).unwrap();
        let qe = p.transform_row(&q).unwrap();
        for row in out.iter_rows() {
            assert_eq!(&row[..4], &qe[..4]);
        }
        assert_eq!(out[(0, 4)], 1.0);
    }

    #[test]
    fn vary_fixes_the_complement() {
        let (p, q) = setup();
        let c = Constraints {
            vary: Some(vec!["income".into()]),
            ..Constraints::default()
        };
        let proj = c.resolve(&p, &q).unwrap();
        assert_eq!(proj.fixed, vec![true, true, false]);
    }

    #[test]
    fn direction_increase_clamps_to_query() {
        let (p, q) = setup();
        let mut c = Constraints::none();
        c.directions.insert("age".into(), Direction::Increase);
        let x = Matrix::from_rows(&[[p.encode_value(0, 1.5), 0.0, 1.0, 0.0, 0.0]]).unwrap();
        let out = apply_constraints(&x, &q, &c, &p).unwrap();
        assert_eq!(out[(0, 0)], p.encode_value(0, 2.0));
    }

    #[test]
    fn explicit_range_clamps() {
        let (p, q) = setup();
        let mut c = Constraints::none();
        c.ranges.insert("income".into(), [120.0, 160.0]);
        let x = Matrix::from_rows(&[[0.0, 0.0, 1.0, 0.0, 99.0]]).unwrap();
        let out = apply_constraints(&x, &q, &c, &p).unwrap();
        assert_eq!(out[(0, 4)], p.encode_value(2, 160.0));
    }

    #[test]
    fn invalid_and_infeasible_constraint_sets() {
        let (p, q) = setup();
        let both = Constraints {
            vary: Some(vec!["age".into()]),
            fix: Some(vec!["job".into()]),
            ..Constraints::default()
        };
        assert!(matches!(both.resolve(&p, &q), Err(CfxError::Config(_))));
        let unknown = Constraints::fixing(["height"]);
        assert!(unknown.resolve(&p, &q).is_err());
        let all = Constraints::fixing(["age", "job", "income"]);
        assert!(matches!(
            all.resolve(&p, &q),
            Err(CfxError::InfeasibleConstraints(_))
        ));
        let mut cat_dir = Constraints::none();
        cat_dir.directions.insert("job".into(), Direction::Decrease);
        assert!(cat_dir.resolve(&p, &q).is_err());
        let mut empty = Constraints::none();
        empty.ranges.insert("income".into(), [0.0, 10.0]);
        empty
            .directions
            .insert("income".into(), Direction::Increase);
        assert!(matches!(
            empty.resolve(&p, &q),
            Err(CfxError::InfeasibleConstraints(_))
        ));
    }
}
