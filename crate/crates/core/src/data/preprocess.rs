use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema, Layout};
use super::table::{Cell, RawRow, RawTable};
use crate::error::{CfxError, Result};
use crate::matrix::Matrix;

/// Lower bound applied to standard deviations and MADs.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Training-split statistics of one continuous feature, in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub feature: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub mad: f64,
    pub min: f64,
    pub max: f64,
}

/// z-score / one-hot encoder fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    schema: FeatureSchema,
    layout: Layout,
    stats: Vec<Option<ContinuousStats>>,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Median of absolute deviations from the median.
pub fn median_absolute_deviation(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

impl Preprocessor {
    pub fn fit(rows: &[RawRow], schema: &FeatureSchema) -> Result<Self> {
        if rows.len() < 2 {
            return Err(CfxError::Data(format!(
                "at least 2 training rows are needed to fit, got {}",
                rows.len()
            )));
        }
        let mut stats = Vec::with_capacity(schema.len());
        for (j, f) in schema.features.iter().enumerate() {
            if f.kind == FeatureKind::Categorical {
                stats.push(None);
                continue;
            }
            let values = rows
                .iter()
                .map(|r| {
                    r.get(j).and_then(Cell::as_num).ok_or_else(|| {
                        CfxError::Data(format!("feature `{}` expects a number", f.name))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let mut std = var.sqrt();
            let median = median(&values);
            let mut mad = median_absolute_deviation(&values);
            if std < SCALE_FLOOR {
                log::warn!(
                    "feature `{}` is constant on the training split; std floored",
                    f.name
                );
                std = SCALE_FLOOR;
            }
            if mad < SCALE_FLOOR {
                log::warn!(
                    "feature `{}` has zero MAD on the training split; MAD floored",
                    f.name
                );
                mad = SCALE_FLOOR;
            }
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            stats.push(Some(ContinuousStats {
                feature: j,
                mean,
                std,
                median,
                mad,
                min,
                max,
            }));
        }
        Ok(Self {
            schema: schema.clone(),
            layout: schema.layout(),
            stats,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn stats(&self, feature: usize) -> Option<&ContinuousStats> {
        self.stats.get(feature).and_then(Option::as_ref)
    }

    /// Per-encoded-column MAD in encoded units: the raw MAD divided by the
    /// feature's standard deviation for continuous columns, 1 for one-hot
    /// columns.
    pub fn encoded_mad(&self) -> Vec<f64> {
        let mut mad = vec![1.0; self.layout.width];
        for (span, st) in self.layout.spans.iter().zip(&self.stats) {
            if let Some(st) = st {
                mad[span.start] = (st.mad / st.std).max(SCALE_FLOOR);
            }
        }
        mad
    }

    pub fn encode_value(&self, feature: usize, raw: f64) -> f64 {
        let st = self.stats[feature].as_ref().expect("continuous feature");
        (raw - st.mean) / st.std
    }

    pub fn decode_value(&self, feature: usize, encoded: f64) -> f64 {
        let st = self.stats[feature].as_ref().expect("continuous feature");
        encoded * st.std + st.mean
    }

    pub fn transform_row(&self, row: &[Cell]) -> Result<Vec<f64>> {
        if row.len() != self.schema.len() {
            return Err(CfxError::shape("raw row", self.schema.len(), row.len()));
        }
        let mut out = vec![0.0; self.layout.width];
        for (j, (span, cell)) in self.layout.spans.iter().zip(row).enumerate() {
            match (span.kind, *cell) {
                (FeatureKind::Continuous, Cell::Num(v)) => {
                    out[span.start] = self.encode_value(j, v)
                }
                (FeatureKind::Categorical, Cell::Cat(c)) if c < span.width => {
                    out[span.start + c] = 1.0;
                }
                _ => {
                    return Err(CfxError::Data(format!(
                        "value for feature `{}` does not match its kind",
                        self.schema.features[j].name
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn transform(&self, rows: &[RawRow]) -> Result<Matrix> {
        let encoded = rows
            .iter()
            .map(|r| self.transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        if encoded.is_empty() {
            return Ok(Matrix::zeros(0, self.layout.width));
        }
        Matrix::from_rows(&encoded)
    }

    /// Decodes one encoded (possibly relaxed) row. One-hot blocks decode by
    /// argmax with ties going to the lower index.
    pub fn inverse_row(&self, encoded: &[f64]) -> Result<RawRow> {
        if encoded.len() != self.layout.width {
            return Err(CfxError::shape(
                "encoded row",
                self.layout.width,
                encoded.len(),
            ));
        }
        Ok(self
            .layout
            .spans
            .iter()
            .enumerate()
            .map(|(j, span)| match span.kind {
                FeatureKind::Continuous => Cell::Num(self.decode_value(j, encoded[span.start])),
                FeatureKind::Categorical => Cell::Cat(argmax(&encoded[span.range()])),
            })
            .collect())
    }

    pub fn inverse_transform(&self, encoded: &Matrix) -> Result<Vec<RawRow>> {
        encoded.iter_rows().map(|r| self.inverse_row(r)).collect()
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle followed by a 60/20/20 partition: the training share is
    /// floored and the remainder is halved, the extra row going to test.
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < 5 {
            return Err(CfxError::Data(format!(
                "at least 5 rows are needed to split, got {n}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 3 / 5;
        let rest = n - n_train;
        let n_val = rest / 2;
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok(Self {
            train: idx,
            val,
            test,
        })
    }
}

/// Encoded dataset with its split and the fitted preprocessor.
#[derive(Debug, Clone)]
pub struct PreprocessedDataset {
    pub raw: RawTable,
    pub preprocessor: Preprocessor,
    pub x: Matrix,
    pub y: Vec<usize>,
    pub split: Split,
}

impl PreprocessedDataset {
    /// Splits the table, fits on the training rows only and encodes every row.
    pub fn prepare(raw: RawTable, seed: u64) -> Result<Self> {
        if raw.n_classes() < 2 {
            return Err(CfxError::Data("a dataset needs at least 2 classes".into()));
        }
        let split = Split::new(raw.len(), seed)?;
        let train_rows: Vec<RawRow> = split.train.iter().map(|&i| raw.rows[i].clone()).collect();
        let preprocessor = Preprocessor::fit(&train_rows, &raw.schema)?;
        let x = preprocessor.transform(&raw.rows)?;
        let y = raw.labels.clone();
        Ok(Self {
            raw,
            preprocessor,
            x,
            y,
            split,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.raw.n_classes()
    }

    pub fn schema(&self) -> &FeatureSchema {
        self.preprocessor.schema()
    }

    pub fn rows(&self, idx: &[usize]) -> Matrix {
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.x.row(i)).collect();
        if rows.is_empty() {
            return Matrix::zeros(0, self.x.cols());
        }
        Matrix::from_rows(&rows).expect("uniform width")
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    /// Encoded training split; the observed data for plausibility.
    pub fn train_x(&self) -> Matrix {
        self.rows(&self.split.train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::FeatureSpec;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::categorical("b", ["x", "y"]),
        ])
        .unwrap()
    }

    fn rows(values: &[f64]) -> Vec<RawRow> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![Cell::Num(v), Cell::Cat(i % 2)])
            .collect()
    }

    #[test]
    fn mad_of_one_to_five() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(median_absolute_deviation(&v), 1.0);
        let p = Preprocessor::fit(&rows(&v), &schema()).unwrap();
        let st = p.stats(0).unwrap();
        assert_eq!(st.median, 3.0);
        assert_eq!(st.mad, 1.0);
        assert_eq!(st.mean, 3.0);
        // one-hot columns carry MAD 1
        let mad = p.encoded_mad();
        assert_eq!(mad.len(), 3);
        assert_eq!(&mad[1..], &[1.0, 1.0]);
        assert!((mad[0] - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_is_floored() {
        let p = Preprocessor::fit(&rows(&[7.0, 7.0, 7.0]), &schema()).unwrap();
        let st = p.stats(0).unwrap();
        assert_eq!(st.mad, SCALE_FLOOR);
        assert_eq!(st.std, SCALE_FLOOR);
        assert!(p.encoded_mad()[0] >= SCALE_FLOOR);
    }

    #[test]
    fn needs_two_rows() {
        assert!(Preprocessor::fit(&rows(&[1.0]), &schema()).is_err());
    }

    #[test]
    fn round_trip_and_mean_encodes_to_zero() {
        let r = rows(&[1.5, -2.0, 10.25, 3.0]);
        let p = Preprocessor::fit(&r, &schema()).unwrap();
        let enc = p.transform(&r).unwrap();
        let back = p.inverse_transform(&enc).unwrap();
        for (a, b) in r.iter().zip(&back) {
            assert!((a[0].as_num().unwrap() - b[0].as_num().unwrap()).abs() < 1e-9);
            assert_eq!(a[1], b[1]);
        }
        let mean = p.stats(0).unwrap().mean;
        assert_eq!(p.encode_value(0, mean), 0.0);
    }

    #[test]
    fn relaxed_one_hot_decodes_by_argmax() {
        let p = Preprocessor::fit(&rows(&[1.0, 2.0]), &schema()).unwrap();
        assert_eq!(p.inverse_row(&[0.0, 0.7, 0.3]).unwrap()[1], Cell::Cat(0));
        assert_eq!(p.inverse_row(&[0.0, 0.5, 0.5]).unwrap()[1], Cell::Cat(0));
        assert_eq!(p.inverse_row(&[0.0, 0.0, 1.0]).unwrap()[1], Cell::Cat(1));
        assert!(p.inverse_row(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = Split::new(690, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (414, 138, 138));
        let s = Split::new(10, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert!(Split::new(4, 1).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let a = Split::new(101, 9).unwrap();
        assert_eq!(a, Split::new(101, 9).unwrap());
        assert_ne!(a, Split::new(101, 10).unwrap());
        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }
}
