//! A loaded dataset and model, ready to generate.

use anyhow::{bail, Context, Result};
use cfx_core::data::{Cell, FeatureKind, FeatureSchema, PreprocessedDataset, RawRow};
use cfx_core::eval::Workbench;
use cfx_core::nn::{accuracy, AccuracyReport, Mlp};
use serde_json::{Map, Value};

use crate::config::RunConfig;

pub struct Session {
    pub bench: Workbench,
    pub accuracy: AccuracyReport,
    /// The model was trained in this process rather than loaded.
    pub trained: bool,
}

impl Session {
    pub fn open(config: &RunConfig) -> Result<Self> {
        let raw = config.dataset.load()?;
        log::info!("{} rows, {} classes", raw.len(), raw.n_classes());
        if config.target >= raw.n_classes() {
            bail!(
                "target: class {} does not exist ({} classes)",
                config.target,
                raw.n_classes()
            );
        }
        match &config.model {
            Some(path) => {
                let model =
                    Mlp::load(path).with_context(|| format!("loading model {}", path.display()))?;
                let data = PreprocessedDataset::prepare(raw, config.split_seed)?;
                let score = |idx: &[usize]| accuracy(&model, &data.rows(idx), &data.labels(idx));
                let accuracy = AccuracyReport {
                    training: score(&data.split.train)?,
                    validation: score(&data.split.val)?,
                    testing: score(&data.split.test)?,
                };
                let bench = Workbench::new("loaded", model, data)?;
                Ok(Self {
                    bench,
                    accuracy,
                    trained: false,
                })
            }
            None => {
                let (bench, accuracy) =
                    Workbench::train("trained", raw, config.split_seed, &config.train)?;
                log::info!("test accuracy {:.3}", accuracy.testing);
                Ok(Self {
                    bench,
                    accuracy,
                    trained: true,
                })
            }
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        self.bench.preprocessor().schema()
    }

    /// First test row the model does not already assign to `target`.
    pub fn default_query(&self, target: usize) -> Result<usize> {
        match self.bench.test_queries(target, 1).first() {
            Some(&q) => Ok(q),
            None => bail!("no test row is predicted outside class {target}"),
        }
    }
}

/// Reads a query given as `{feature: value}`; categorical values are labels
/// (or category indices), continuous values are numbers.
pub fn parse_query(schema: &FeatureSchema, value: &Value) -> Result<RawRow> {
    let Some(obj) = value.as_object() else {
        bail!("query: expected a JSON object keyed by feature name");
    };
    if let Some(extra) = obj.keys().find(|k| schema.index_of(k).is_none()) {
        bail!("query: unknown feature `{extra}`");
    }
    schema
        .features
        .iter()
        .map(|f| {
            let v = obj
                .get(&f.name)
                .with_context(|| format!("query: missing feature `{}`", f.name))?;
            match f.kind {
                FeatureKind::Continuous => v
                    .as_f64()
                    .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
                    .filter(|x| x.is_finite())
                    .map(Cell::Num)
                    .with_context(|| format!("query.{}: expected a number, got {v}", f.name)),
                FeatureKind::Categorical => {
                    let index = match v {
                        Value::String(s) => f.category_index(s),
                        Value::Number(n) => n
                            .as_u64()
                            .map(|i| i as usize)
                            .filter(|&i| i < f.categories.len()),
                        _ => None,
                    };
                    index.map(Cell::Cat).with_context(|| {
                        format!(
                            "query.{}: expected one of {:?}, got {v}",
                            f.name, f.categories
                        )
                    })
                }
            }
        })
        .collect()
}

/// The inverse of [`parse_query`].
pub fn row_to_json(schema: &FeatureSchema, row: &[Cell]) -> Map<String, Value> {
    schema
        .features
        .iter()
        .zip(row)
        .map(|(f, cell)| {
            let v = match *cell {
                Cell::Num(x) => Value::from(x),
                Cell::Cat(c) => Value::from(f.categories[c].clone()),
            };
            (f.name.clone(), v)
        })
        .collect()
}
