//! Seeded synthetic tabular datasets.
//!
//! Continuous columns are emitted in "raw" units (each feature gets its own
//! offset and scale) so the preprocessing path is exercised for real.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FeatureSpec};
use super::table::{Cell, RawTable};
use crate::error::{CfxError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// Gaussian class blobs with class-dependent categorical columns.
    Blobs {
        rows: usize,
        classes: usize,
        continuous: usize,
        #[serde(default)]
        categorical: usize,
        #[serde(default = "default_categories")]
        categories: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Classes are consecutive bands along one latent axis, so class
    /// distance is meaningful.
    Ordinal {
        rows: usize,
        classes: usize,
        continuous: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Binary labels from a known linear rule over unit-variance features.
    LinearTeacher {
        rows: usize,
        weights: Vec<f64>,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_categories() -> usize {
    3
}

fn default_separation() -> f64 {
    3.0
}

fn default_noise() -> f64 {
    0.1
}

impl SyntheticSpec {
    /// The 2-class blob benchmark used by the examples and acceptance runs.
    pub fn binary_benchmark() -> Self {
        SyntheticSpec::Blobs {
            rows: 600,
            classes: 2,
            continuous: 4,
            categorical: 2,
            categories: 3,
            separation: 3.0,
            seed: 7,
        }
    }

    pub fn generate(&self) -> Result<RawTable> {
        match *self {
            SyntheticSpec::Blobs {
                rows,
                classes,
                continuous,
                categorical,
                categories,
                separation,
                seed,
            } => blobs(
                rows,
                classes,
                continuous,
                categorical,
                categories,
                separation,
                seed,
            ),
            SyntheticSpec::Ordinal {
                rows,
                classes,
                continuous,
                seed,
            } => ordinal(rows, classes, continuous, seed),
            SyntheticSpec::LinearTeacher {
                ref weights,
                rows,
                noise,
                seed,
            } => linear_teacher(rows, weights, noise, seed),
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Offsets and scales that turn unit-scale values into "raw" units.
fn raw_units(rng: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            (
                rng.random_range(-50.0..50.0_f64).round(),
                rng.random_range(0.5..20.0_f64),
            )
        })
        .collect()
}

fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|c| c.to_string()).collect()
}

fn check(rows: usize, classes: usize, continuous: usize) -> Result<()> {
    if rows < 10 {
        return Err(CfxError::Config(
            "synthetic datasets need at least 10 rows".into(),
        ));
    }
    if classes < 2 {
        return Err(CfxError::Config(
            "synthetic datasets need at least 2 classes".into(),
        ));
    }
    if continuous == 0 {
        return Err(CfxError::Config(
            "at least one continuous feature is required".into(),
        ));
    }
    Ok(())
}

pub fn blobs(
    rows: usize,
    classes: usize,
    continuous: usize,
    categorical: usize,
    categories: usize,
    separation: f64,
    seed: u64,
) -> Result<RawTable> {
    check(rows, classes, continuous)?;
    if categorical > 0 && categories < 2 {
        return Err(CfxError::Config(
            "categorical features need at least 2 categories".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Centres at least `separation` apart (unit within-class spread).
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let radius = separation * 0.75;
    while centres.len() < classes {
        let c: Vec<f64> = (0..continuous)
            .map(|_| rng.random_range(-radius..radius))
            .collect();
        let far = centres.iter().all(|o| {
            c.iter()
                .zip(o)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= separation
        });
        if far {
            centres.push(c);
        }
    }
    let units = raw_units(&mut rng, continuous);

    let mut features: Vec<FeatureSpec> = (0..continuous)
        .map(|j| FeatureSpec::continuous(format!("x{j}")))
        .collect();
    for j in 0..categorical {
        features.push(FeatureSpec::categorical(
            format!("c{j}"),
            (0..categories).map(|k| format!("k{k}")),
        ));
    }
    let schema = FeatureSchema::new(features)?
        .with_label("label")
        .with_classes(class_names(classes));

    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let y = i % classes;
        let mut row: Vec<Cell> = (0..continuous)
            .map(|j| {
                let z = centres[y][j] + normal(&mut rng);
                Cell::Num(units[j].0 + units[j].1 * z)
            })
            .collect();
        for j in 0..categorical {
            let preferred = (y + j) % categories;
            let cat = if rng.random_bool(0.6) {
                preferred
            } else {
                rng.random_range(0..categories)
            };
            row.push(Cell::Cat(cat));
        }
        data.push(row);
        labels.push(y);
    }
    Ok(RawTable {
        schema,
        rows: data,
        labels,
        classes: class_names(classes),
        dropped: 0,
    })
}

pub fn ordinal(rows: usize, classes: usize, continuous: usize, seed: u64) -> Result<RawTable> {
    check(rows, classes, continuous)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Loadings of the latent axis on each feature, unit norm.
    let mut loadings: Vec<f64> = (0..continuous)
        .map(|_| rng.random_range(0.5..1.5))
        .collect();
    let norm = loadings.iter().map(|v| v * v).sum::<f64>().sqrt();
    loadings.iter_mut().for_each(|v| *v /= norm);
    let units = raw_units(&mut rng, continuous);
    let band = 1.5;

    let features = (0..continuous)
        .map(|j| FeatureSpec::continuous(format!("x{j}")))
        .collect();
    let schema = FeatureSchema::new(features)?
        .with_label("label")
        .with_classes(class_names(classes));
    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let y = i % classes;
        let t = (y as f64 + rng.random_range(0.0..1.0)) * band;
        let row = (0..continuous)
            .map(|j| {
                let z = t * loadings[j] + 0.25 * normal(&mut rng);
                Cell::Num(units[j].0 + units[j].1 * z)
            })
            .collect();
        data.push(row);
        labels.push(y);
    }
    Ok(RawTable {
        schema,
        rows: data,
        labels,
        classes: class_names(classes),
        dropped: 0,
    })
}

pub fn linear_teacher(rows: usize, weights: &[f64], noise: f64, seed: u64) -> Result<RawTable> {
    check(rows, 2, weights.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = raw_units(&mut rng, weights.len());
    let features = (0..weights.len())
        .map(|j| FeatureSpec::continuous(format!("x{j}")))
        .collect();
    let schema = FeatureSchema::new(features)?
        .with_label("label")
        .with_classes(class_names(2));
    let mut data = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let z: Vec<f64> = weights.iter().map(|_| normal(&mut rng)).collect();
        let score: f64 =
            z.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + noise * normal(&mut rng);
        data.push(
            z.iter()
                .zip(&units)
                .map(|(v, (off, sc))| Cell::Num(off + sc * v))
                .collect(),
        );
        labels.push(usize::from(score > 0.0));
    }
    Ok(RawTable {
        schema,
        rows: data,
        labels,
        classes: class_names(2),
        dropped: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_balanced() {
        let spec = SyntheticSpec::binary_benchmark();
        let a = spec.generate().unwrap();
        assert_eq!(a, spec.generate().unwrap());
        assert_eq!(a.len(), 600);
        assert_eq!(a.labels.iter().filter(|&&y| y == 1).count(), 300);
        assert_eq!(a.schema.layout().width, 4 + 2 * 3);

        let o = ordinal(100, 5, 3, 1).unwrap();
        assert_eq!(o.n_classes(), 5);
        let t = linear_teacher(50, &[1.0, 0.0], 0.1, 3).unwrap();
        assert_eq!(t.schema.len(), 2);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = SyntheticSpec::Ordinal {
            rows: 500,
            classes: 5,
            continuous: 3,
            seed: 2,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"ordinal\""));
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&text).unwrap(), spec);
    }
}
