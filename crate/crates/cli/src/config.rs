//! Run configuration: where the data and model come from, generation
//! settings, and where artifacts go.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cfx_core::data::{load_dataset, FeatureSchema, RawTable, SyntheticSpec};
use cfx_core::engine::{Constraints, Hyperparameters};
use cfx_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv { path: PathBuf, schema: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<RawTable> {
        match self {
            DatasetSource::Csv { path, schema } => {
                let schema = FeatureSchema::load(schema)
                    .with_context(|| format!("loading schema {}", schema.display()))?;
                load_dataset(path, &schema)
                    .with_context(|| format!("loading dataset {}", path.display()))
            }
            DatasetSource::Synthetic(spec) => Ok(spec.generate()?),
        }
    }
}

/// Settings of the batch experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Test queries per run.
    pub queries: usize,
    pub seeds: Vec<u64>,
    /// Queries per origin class in the multi-class sweep.
    pub per_class: usize,
    /// Hyperparameter name to candidate values for the grid sweep.
    pub grid: BTreeMap<String, Vec<f64>>,
    /// Set sizes timed by the diversity benchmark.
    pub bench_sizes: Vec<usize>,
    pub bench_width: usize,
    pub bench_repetitions: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            queries: 20,
            seeds: vec![0, 1, 2],
            per_class: 4,
            grid: BTreeMap::new(),
            bench_sizes: vec![2, 4, 8, 16],
            bench_width: 10,
            bench_repetitions: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Trained model file; trained on the fly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default = "default_target")]
    pub target: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Generation seed; replaces `hyperparameters.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

fn default_split_seed() -> u64 {
    7
}

fn default_target() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec::binary_benchmark()),
            model: None,
            train: TrainConfig::default(),
            split_seed: default_split_seed(),
            hyperparameters: Hyperparameters::default(),
            constraints: Constraints::none(),
            target: default_target(),
            output_dir: default_output_dir(),
            seed: 0,
            experiment: ExperimentSettings::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the config recorded in a run manifest.
    /// Relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if value.get("command").is_some() && value.get("config").is_some() {
            value = value["config"].take();
        }
        let mut config: RunConfig = serde_json::from_value(value)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSource::Csv { path, schema } = &mut self.dataset {
            fix(path);
            fix(schema);
        }
        if let Some(m) = &mut self.model {
            fix(m);
        }
        fix(&mut self.output_dir);
    }

    /// Hyperparameters with the run seed applied.
    pub fn effective_hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            seed: self.seed,
            ..self.hyperparameters.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetSource::Csv { path, schema } = &self.dataset {
            for (field, p) in [("dataset.csv.path", path), ("dataset.csv.schema", schema)] {
                if !p.is_file() {
                    bail!("{field}: no such file {}", p.display());
                }
            }
        }
        if let Some(m) = &self.model {
            if !m.is_file() {
                bail!("model: no such file {}", m.display());
            }
        }
        self.effective_hyperparameters()
            .validate()
            .map_err(|e| anyhow::anyhow!("hyperparameters.{}", strip_kind(&e.to_string())))?;
        if self.experiment.seeds.is_empty() {
            bail!("experiment.seeds: at least one seed is needed");
        }
        if self.experiment.queries == 0 {
            bail!("experiment.queries: must be at least 1");
        }
        Ok(())
    }
}

/// Drops the error-kind prefix so the field name leads the message.
fn strip_kind(message: &str) -> &str {
    message.split_once(": ").map_or(message, |(_, rest)| rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_losslessly() {
        let mut c = RunConfig::default();
        c.hyperparameters.learning_rate = 0.1 + 0.2;
        c.constraints = Constraints::fixing(["x0"]);
        c.experiment.grid.insert("lambda".into(), vec![0.1, 0.5]);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"dataset": {"synthetic": {"kind": "ordinal", "rows": 100, "classes": 3, "continuous": 2}}}"#,
        )
        .unwrap();
        assert_eq!(c.target, 1);
        assert_eq!(c.hyperparameters, Hyperparameters::default());
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = RunConfig::default();
        c.hyperparameters.learning_rate = -1.0;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.starts_with("hyperparameters.learning_rate"), "{e}");

        c = RunConfig {
            model: Some("/definitely/missing.json".into()),
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().starts_with("model:"));

        assert!(serde_json::from_str::<RunConfig>(
            r#"{"dataset": {"synthetic": {"kind": "blobs"}}, "typo": 1}"#
        )
        .is_err());
    }
}
