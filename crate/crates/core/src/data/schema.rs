use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CfxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

/// Allowed direction of change for a continuous feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increase,
    Decrease,
}

impl std::str::FromStr for Direction {
    type Err = CfxError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "increase" => Ok(Direction::Increase),
            "decrease" => Ok(Direction::Decrease),
            other => Err(CfxError::Config(format!(
                "unknown direction `{other}` (expected increase or decrease)"
            ))),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default = "default_true")]
    pub mutable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl FeatureSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous,
            categories: Vec::new(),
            mutable: true,
            direction: None,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
            mutable: true,
            direction: None,
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }

    /// Number of encoded columns this feature occupies.
    pub fn width(&self) -> usize {
        match self.kind {
            FeatureKind::Continuous => 1,
            FeatureKind::Categorical => self.categories.len(),
        }
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Ordered feature declarations plus the label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    /// Label column name; the last CSV column when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Class labels in index order; derived from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let schema = Self {
            features,
            label: None,
            classes: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_classes<S: Into<String>>(mut self, classes: impl IntoIterator<Item = S>) -> Self {
        self.classes = Some(classes.into_iter().map(Into::into).collect());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(CfxError::Schema("schema declares no features".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(CfxError::Schema(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            match f.kind {
                FeatureKind::Categorical => {
                    if f.categories.len() < 2 {
                        return Err(CfxError::Schema(format!(
                            "categorical feature `{}` needs at least 2 categories",
                            f.name
                        )));
                    }
                    let unique: HashSet<_> = f.categories.iter().collect();
                    if unique.len() != f.categories.len() {
                        return Err(CfxError::Schema(format!(
                            "categorical feature `{}` repeats a category",
                            f.name
                        )));
                    }
                    if f.direction.is_some() {
                        return Err(CfxError::Schema(format!(
                            "direction defaults apply to continuous features only (`{}`)",
                            f.name
                        )));
                    }
                }
                FeatureKind::Continuous => {
                    if !f.categories.is_empty() {
                        return Err(CfxError::Schema(format!(
                            "continuous feature `{}` lists categories",
                            f.name
                        )));
                    }
                }
            }
        }
        if let Some(label) = &self.label {
            if seen.contains(label.as_str()) {
                return Err(CfxError::Schema(format!(
                    "label `{label}` is also declared as a feature"
                )));
            }
        }
        if let Some(classes) = &self.classes {
            if classes.len() < 2 {
                return Err(CfxError::Schema("at least 2 classes are required".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let schema: FeatureSchema = serde_json::from_str(&text).map_err(|e| CfxError::Parse {
            what: format!("schema {}", path.as_ref().display()),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn layout(&self) -> Layout {
        let mut spans = Vec::with_capacity(self.features.len());
        let mut start = 0;
        for f in &self.features {
            let width = f.width();
            spans.push(Span {
                start,
                width,
                kind: f.kind,
            });
            start += width;
        }
        Layout {
            spans,
            width: start,
        }
    }
}

/// Encoded column range of one original feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub width: usize,
    pub kind: FeatureKind,
}

impl Span {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.width
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == FeatureKind::Categorical
    }
}

/// Mapping from original features to encoded columns. Categorical feature
/// `v` owns the contiguous block `start..start + width`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub spans: Vec<Span>,
    pub width: usize,
}

impl Layout {
    pub fn n_features(&self) -> usize {
        self.spans.len()
    }

    pub fn categorical_spans(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(|s| s.is_categorical())
    }

    /// Encoded columns left after dropping the listed original features.
    pub fn columns_excluding(&self, excluded: &[usize]) -> Vec<usize> {
        self.spans
            .iter()
            .enumerate()
            .filter(|(i, _)| !excluded.contains(i))
            .flat_map(|(_, s)| s.range())
            .collect()
    }

    /// Layout of the schema restricted to the kept features, re-based at 0.
    pub fn without(&self, excluded: &[usize]) -> Layout {
        let mut spans = Vec::new();
        let mut start = 0;
        for (i, s) in self.spans.iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            spans.push(Span {
                start,
                width: s.width,
                kind: s.kind,
            });
            start += s.width;
        }
        Layout {
            spans,
            width: start,
        }
    }
}
