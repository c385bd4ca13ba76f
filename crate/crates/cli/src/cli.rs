//! Argument parsing and dispatch.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cfx_core::data::{Direction, SyntheticSpec};
use cfx_core::eval::{set_hyperparameter, Toggle};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::commands::{self, Experiment, QuerySelector};
use crate::config::RunConfig;
use crate::server::{self, AppState};
use crate::session::Session;

#[derive(Debug, Parser)]
#[command(
    name = "cfx",
    version,
    about = "Counterfactual explanation sets for tabular classifiers"
)]
pub struct Cli {
    /// Run configuration (JSON). A run manifest is accepted too.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the classifier and save it with its accuracy report.
    Train,
    /// Generate a counterfactual set for one query.
    Explain(QueryArgs),
    /// Score a counterfactual set (read from CSV, or generated here).
    Evaluate {
        #[command(flatten)]
        query: QueryArgs,
        /// Set CSV with one column per feature.
        #[arg(long)]
        set: Option<PathBuf>,
    },
    /// Run a batch experiment and write its table.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        /// Switch studied by `toggle`.
        #[arg(long, value_enum, default_value = "perturbation")]
        toggle: ToggleArg,
        /// Test queries per run.
        #[arg(long)]
        queries: Option<usize>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Grid axis `name=v1,v2,...`; repeatable.
        #[arg(long = "grid", value_name = "NAME=VALUES")]
        grid: Vec<String>,
    },
    /// Serve POST /generate, GET /schema and GET /health.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Render SVG loss curves and attribution bars into the output directory.
    Plot {
        /// Trace file (JSON lines); repeat to overlay runs.
        #[arg(long)]
        trace: Vec<PathBuf>,
        #[arg(long)]
        attribution: Option<PathBuf>,
    },
    /// Write a synthetic dataset and its schema into the output directory.
    Synth {
        /// Generator spec as JSON, or a path to one.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentKind {
    Ablation,
    Toggle,
    Multiclass,
    Grid,
    Bench,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ToggleArg {
    Perturbation,
    Penalty,
}

#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct QueryArgs {
    /// Row index into the dataset.
    #[arg(long)]
    pub query_index: Option<usize>,
    /// Feature values as a JSON object, or a path to one.
    #[arg(long)]
    pub query_json: Option<String>,
}

impl QueryArgs {
    fn selector(&self) -> Result<QuerySelector> {
        if let Some(i) = self.query_index {
            return Ok(QuerySelector::Index(i));
        }
        match &self.query_json {
            Some(text) => Ok(QuerySelector::Json(json_arg("query-json", text)?)),
            None => Ok(QuerySelector::FirstTest),
        }
    }
}

/// Inline JSON, or the contents of the named file.
fn json_arg(flag: &str, text: &str) -> Result<Value> {
    let t = text.trim_start();
    let body = if t.starts_with('{') || t.starts_with('[') {
        text.to_string()
    } else {
        std::fs::read_to_string(text).with_context(|| format!("{flag}: reading {text}"))?
    };
    serde_json::from_str(&body).with_context(|| format!("{flag}: invalid JSON"))
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub target: Option<usize>,
    /// Trained model file to use instead of training.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_prox: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_spars: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_plaus: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub lambda_div: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    /// Counterfactuals per set.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    #[arg(long, global = true)]
    pub max_perturbations: Option<usize>,
    /// Any numeric hyperparameter as `name=value`; repeatable.
    #[arg(long = "param", global = true, value_name = "NAME=VALUE")]
    pub param: Vec<String>,
    /// Keep a feature at the query's value; repeatable.
    #[arg(long, global = true, value_name = "FEATURE")]
    pub fix: Vec<String>,
    /// Allow only these features to change; repeatable.
    #[arg(long, global = true, value_name = "FEATURE")]
    pub vary: Vec<String>,
    /// Permitted raw range `feature=lo:hi`; repeatable.
    #[arg(long, global = true, value_name = "FEATURE=LO:HI")]
    pub range: Vec<String>,
    /// Permitted direction `feature=increase|decrease`; repeatable.
    #[arg(long, global = true, value_name = "FEATURE=DIR")]
    pub direction: Vec<String>,
}

fn split_pair<'a>(flag: &str, text: &'a str) -> Result<(&'a str, &'a str)> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => bail!("--{flag}: expected NAME=VALUE, got `{text}`"),
    }
}

fn number(flag: &str, text: &str) -> Result<f64> {
    text.parse()
        .with_context(|| format!("--{flag}: `{text}` is not a number"))
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(o) = &self.out {
            config.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.target {
            config.target = t;
        }
        if let Some(m) = &self.model {
            config.model = Some(m.clone());
        }
        let hp = &mut config.hyperparameters;
        let w = &mut hp.weights;
        for (slot, v) in [
            (&mut w.proximity, self.lambda_prox),
            (&mut w.sparsity, self.lambda_spars),
            (&mut w.plausibility, self.lambda_plaus),
            (&mut w.diversity, self.lambda_div),
            (&mut hp.learning_rate, self.learning_rate),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        for (slot, v) in [
            (&mut hp.n, self.n),
            (&mut hp.max_iterations, self.max_iterations),
            (&mut hp.max_perturbations, self.max_perturbations),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        for s in &self.param {
            let (name, value) = split_pair("param", s)?;
            set_hyperparameter(hp, name, number("param", value)?)
                .map_err(|e| anyhow::anyhow!("--param {name}: {e}"))?;
        }

        let c = &mut config.constraints;
        if !self.fix.is_empty() {
            c.fix
                .get_or_insert_with(Vec::new)
                .extend(self.fix.iter().cloned());
        }
        if !self.vary.is_empty() {
            c.vary
                .get_or_insert_with(Vec::new)
                .extend(self.vary.iter().cloned());
        }
        for r in &self.range {
            let (name, bounds) = split_pair("range", r)?;
            let Some((lo, hi)) = bounds.split_once(':') else {
                bail!("--range: expected FEATURE=LO:HI, got `{r}`");
            };
            c.ranges.insert(
                name.to_string(),
                [number("range", lo)?, number("range", hi)?],
            );
        }
        for d in &self.direction {
            let (name, dir) = split_pair("direction", d)?;
            let dir: Direction = dir
                .parse()
                .map_err(|e| anyhow::anyhow!("--direction: {e}"))?;
            c.directions.insert(name.to_string(), dir);
        }
        config.validate()
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut config)?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::Train => {
            commands::train(&config)?;
        }
        Command::Explain(q) => {
            commands::explain(&config, &q.selector()?)?;
        }
        Command::Evaluate { query, set } => {
            commands::evaluate(&config, &query.selector()?, set.as_deref())?;
        }
        Command::Experiment {
            kind,
            toggle,
            queries,
            seeds,
            grid,
        } => {
            let e = &mut config.experiment;
            if let Some(q) = queries {
                e.queries = *q;
            }
            if let Some(s) = seeds {
                e.seeds = s.clone();
            }
            for g in grid {
                let (name, values) = split_pair("grid", g)?;
                let values = values
                    .split(',')
                    .map(|v| number("grid", v.trim()))
                    .collect::<Result<Vec<_>>>()?;
                e.grid.insert(name.to_string(), values);
            }
            config.validate()?;
            let which = match kind {
                ExperimentKind::Ablation => Experiment::Ablation,
                ExperimentKind::Toggle => Experiment::Toggle(match toggle {
                    ToggleArg::Perturbation => Toggle::Perturbation,
                    ToggleArg::Penalty => Toggle::Penalty,
                }),
                ExperimentKind::Multiclass => Experiment::Multiclass,
                ExperimentKind::Grid => Experiment::Grid,
                ExperimentKind::Bench => Experiment::Bench,
            };
            commands::experiment(&config, which)?;
        }
        Command::Serve { bind } => {
            let session = Session::open(&config)?;
            let state = Arc::new(AppState {
                bench: session.bench,
                defaults: config.effective_hyperparameters(),
                target: config.target,
            });
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(server::serve(state, bind))?;
        }
        Command::Plot { trace, attribution } => {
            for p in commands::plot(trace, attribution.as_deref(), &config.output_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Synth { spec } => {
            let spec: SyntheticSpec = match spec {
                Some(text) => serde_json::from_value(json_arg("spec", text)?)
                    .context("--spec: not a synthetic generator spec")?,
                None => SyntheticSpec::binary_benchmark(),
            };
            let (data, schema) = commands::synth(&spec, &config.output_dir)?;
            println!("{}\n{}", data.display(), schema.display());
        }
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&config)?);
        }
    }
    Ok(())
}
