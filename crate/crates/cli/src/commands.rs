//! The workflows behind each subcommand. Every command writes its artifacts
//! and a `manifest.json` under the configured output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cfx_core::attribution::AttributionReport;
use cfx_core::data::{read_rows, write_rows, RawRow, SyntheticSpec};
use cfx_core::engine::{write_trace, TraceRecord};
use cfx_core::eval::{
    ablation_combos, ablation_run, bench, evaluate_set, grid_sweep, multiclass_sweep, toggle_study,
    ExperimentTable, Toggle,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{DatasetSource, RunConfig};
use crate::plot;
use crate::session::{parse_query, row_to_json, Session};

/// Record of one invocation: enough to re-run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: RunConfig,
    pub runtime_s: f64,
}

/// Collects the files a command writes.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    start: Instant,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            start: Instant::now(),
        })
    }

    /// Path for a new artifact, recorded in the manifest.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn table(&mut self, stem: &str, table: &ExperimentTable) -> Result<()> {
        table.write_csv(self.path(&format!("{stem}.csv")))?;
        table.write_json(self.path(&format!("{stem}.json")))?;
        Ok(())
    }

    pub fn finish(self, command: &str, config: &RunConfig) -> Result<Manifest> {
        let mut inputs = Vec::new();
        match &config.dataset {
            DatasetSource::Csv { path, schema } => {
                inputs.push(path.display().to_string());
                inputs.push(schema.display().to_string());
            }
            DatasetSource::Synthetic(_) => inputs.push("synthetic".into()),
        }
        if let Some(m) = &config.model {
            inputs.push(m.display().to_string());
        }
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            inputs,
            outputs: self.files.clone(),
            config: config.clone(),
            runtime_s: self.start.elapsed().as_secs_f64(),
        };
        std::fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuerySelector {
    /// First test row not predicted as the target.
    FirstTest,
    /// Row index into the dataset.
    Index(usize),
    /// Raw feature values keyed by name.
    Json(Value),
}

impl QuerySelector {
    fn resolve(&self, session: &Session, target: usize) -> Result<(RawRow, Option<String>)> {
        let rows = &session.bench.data.raw.rows;
        let index = |i: usize| -> Result<(RawRow, Option<String>)> {
            match rows.get(i) {
                Some(r) => Ok((r.clone(), Some(i.to_string()))),
                None => bail!("query-index: {i} is out of range ({} rows)", rows.len()),
            }
        };
        match self {
            QuerySelector::FirstTest => index(session.default_query(target)?),
            QuerySelector::Index(i) => index(*i),
            QuerySelector::Json(v) => Ok((parse_query(session.schema(), v)?, None)),
        }
    }
}

pub fn train(config: &RunConfig) -> Result<Manifest> {
    let mut out = Artifacts::create(&config.output_dir)?;
    let session = Session::open(config)?;
    session.bench.model.save(out.path("model.json"))?;
    out.json("accuracy.json", &session.accuracy)?;
    println!(
        "accuracy: train {:.3}, validation {:.3}, test {:.3}",
        session.accuracy.training, session.accuracy.validation, session.accuracy.testing
    );
    out.finish("train", config)
}

fn write_trace_file(out: &mut Artifacts, name: &str, trace: &[TraceRecord]) -> Result<()> {
    write_trace(out.path(name), trace)?;
    Ok(())
}

fn write_attribution(out: &mut Artifacts, report: &AttributionReport) -> Result<()> {
    report.save_json(out.path("attribution.json"))?;
    report.save_csv(out.path("attribution.csv"))?;
    Ok(())
}

pub fn explain(config: &RunConfig, query: &QuerySelector) -> Result<Manifest> {
    let mut out = Artifacts::create(&config.output_dir)?;
    let session = Session::open(config)?;
    let hp = config.effective_hyperparameters();
    let (row, query_id) = query.resolve(&session, config.target)?;
    let e = session.bench.explain(
        &row,
        query_id.clone(),
        config.target,
        &hp,
        &config.constraints,
    )?;
    let schema = session.schema();

    let mut csv = Vec::new();
    write_rows(&mut csv, schema, &e.result.set.rows)?;
    out.text("set.csv", std::str::from_utf8(&csv)?)?;
    write_attribution(&mut out, &e.attribution)?;
    write_trace_file(&mut out, "trace.jsonl", &e.result.trace)?;
    out.json(
        "metrics.json",
        &json!({
            "query_id": query_id,
            "query": row_to_json(schema, &row),
            "target": config.target,
            "seed": hp.seed,
            "metrics": e.metrics,
            "loss": e.result.loss,
            "threshold_met": e.result.threshold_met,
            "taus_met": e.taus_met,
            "restarts": e.result.restarts,
            "violations": e.violations,
        }),
    )?;
    println!(
        "{} counterfactuals, confidence {:.3}, average {:.3}, best loss {:.4}{}",
        e.result.set.len(),
        e.metrics.confidence,
        e.metrics.average,
        e.result.loss.total,
        if e.result.threshold_met {
            ""
        } else {
            " (above tau_loss)"
        }
    );
    out.finish("explain", config)
}

/// Scores an externally supplied set CSV, or a set generated in-process when
/// no path is given.
pub fn evaluate(config: &RunConfig, query: &QuerySelector, set: Option<&Path>) -> Result<Manifest> {
    let mut out = Artifacts::create(&config.output_dir)?;
    let session = Session::open(config)?;
    let hp = config.effective_hyperparameters();
    let (row, query_id) = query.resolve(&session, config.target)?;
    let pre = session.bench.preprocessor();
    let rows = match set {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening set {}", path.display()))?;
            read_rows(file, pre.schema())
                .with_context(|| format!("reading set {}", path.display()))?
        }
        None => {
            session
                .bench
                .explain(
                    &row,
                    query_id.clone(),
                    config.target,
                    &hp,
                    &config.constraints,
                )?
                .result
                .set
                .rows
        }
    };
    let encoded = pre.transform(&rows)?;
    let query_encoded = pre.transform_row(&row)?;
    let metrics = evaluate_set(
        &session.bench.metric_context(&hp),
        &encoded,
        &query_encoded,
        config.target,
    )?;
    out.json(
        "metrics.json",
        &json!({
            "query_id": query_id,
            "query": row_to_json(pre.schema(), &row),
            "target": config.target,
            "set": set.map(|p| p.display().to_string()),
            "rows": rows.len(),
            "metrics": metrics,
        }),
    )?;
    println!(
        "proximity {:.4} sparsity {:.4} plausibility {:.4} diversity {:.4} confidence {:.4} average {:.4}",
        metrics.proximity,
        metrics.sparsity,
        metrics.plausibility,
        metrics.diversity,
        metrics.confidence,
        metrics.average
    );
    out.finish("evaluate", config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Ablation,
    Toggle(Toggle),
    Multiclass,
    Grid,
    Bench,
}

pub fn experiment(config: &RunConfig, which: Experiment) -> Result<Manifest> {
    let mut out = Artifacts::create(&config.output_dir)?;
    let settings = &config.experiment;
    let hp = config.effective_hyperparameters();
    let target = config.target;
    let (command, table) = match which {
        Experiment::Bench => {
            let rows = bench(
                &settings.bench_sizes,
                settings.bench_width,
                settings.bench_repetitions,
                config.seed,
            )?;
            let mut csv = String::from("n,seconds_per_iteration,ratio\n");
            for r in &rows {
                let ratio = r.ratio.map_or(String::new(), |v| v.to_string());
                csv.push_str(&format!("{},{},{ratio}\n", r.n, r.seconds_per_iteration));
            }
            out.text("bench.csv", &csv)?;
            out.json("bench.json", &rows)?;
            for r in &rows {
                println!(
                    "n = {:>3}: {:.3e} s per evaluation{}",
                    r.n,
                    r.seconds_per_iteration,
                    r.ratio.map_or(String::new(), |v| format!(" (x{v:.2})"))
                );
            }
            return out.finish("experiment bench", config);
        }
        Experiment::Ablation => {
            let session = Session::open(config)?;
            let queries = session.bench.test_queries(target, settings.queries);
            let combos = ablation_combos();
            let table = ablation_run(
                &session.bench,
                &combos,
                &hp,
                &settings.seeds,
                &queries,
                target,
            )?;
            out.table("ablation", &table)?;
            ("experiment ablation", table)
        }
        Experiment::Toggle(toggle) => {
            let session = Session::open(config)?;
            let queries = session.bench.test_queries(target, settings.queries);
            let study = toggle_study(
                &session.bench,
                toggle,
                &hp,
                &settings.seeds,
                &queries,
                target,
            )?;
            let stem = match toggle {
                Toggle::Perturbation => "toggle_perturbation",
                Toggle::Penalty => "toggle_penalty",
            };
            out.table(stem, &study.table)?;
            if let (Some(on), Some(off)) = (study.on.first(), study.off.first()) {
                write_trace_file(&mut out, &format!("{stem}_on.jsonl"), &on.trace)?;
                write_trace_file(&mut out, &format!("{stem}_off.jsonl"), &off.trace)?;
                let svg = plot::loss_curves(
                    &format!("query {}, seed {}", on.query, on.seed),
                    &[
                        (study.table.rows[0].label.as_str(), &on.trace),
                        (study.table.rows[1].label.as_str(), &off.trace),
                    ],
                );
                out.text(&format!("{stem}.svg"), &svg)?;
            }
            ("experiment toggle", study.table)
        }
        Experiment::Multiclass => {
            let session = Session::open(config)?;
            let sweep = multiclass_sweep(
                &session.bench,
                target,
                &hp,
                &settings.seeds,
                settings.per_class,
            )?;
            out.table("multiclass", &sweep.table)?;
            out.json(
                "multiclass_correlation.json",
                &json!({
                    "spearman": sweep.correlation,
                    "per_seed": sweep.per_seed.iter().map(|(s, r)| json!({"seed": s, "spearman": r})).collect::<Vec<_>>(),
                }),
            )?;
            println!(
                "Spearman(class distance, proximity) = {:.3}",
                sweep.correlation
            );
            ("experiment multiclass", sweep.table)
        }
        Experiment::Grid => {
            if settings.grid.is_empty() {
                bail!("experiment.grid: no hyperparameter values to sweep (use --grid name=v1,v2)");
            }
            let session = Session::open(config)?;
            let queries = session.bench.test_queries(target, settings.queries);
            let table = grid_sweep(
                &session.bench,
                &settings.grid,
                &hp,
                &settings.seeds,
                &queries,
                target,
            )?;
            out.table("grid", &table)?;
            ("experiment grid", table)
        }
    };
    for r in &table.rows {
        println!(
            "{:34} prox {:.3} spars {:.3} plaus {:.3} div {:.3} conf {:.3} avg {:.4}",
            r.label, r.proximity, r.sparsity, r.plausibility, r.diversity, r.confidence, r.average
        );
    }
    out.finish(command, config)
}

/// Renders SVG charts from trace and attribution files.
pub fn plot(traces: &[PathBuf], attribution: Option<&Path>, dir: &Path) -> Result<Vec<PathBuf>> {
    if traces.is_empty() && attribution.is_none() {
        bail!("plot: give at least one --trace or --attribution file");
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if !traces.is_empty() {
        let loaded: Vec<(String, Vec<TraceRecord>)> = traces
            .iter()
            .map(|p| {
                let name = p
                    .file_stem()
                    .map_or("trace".into(), |s| s.to_string_lossy().into_owned());
                cfx_core::engine::read_trace(p)
                    .with_context(|| format!("reading trace {}", p.display()))
                    .map(|t| (name, t))
            })
            .collect::<Result<_>>()?;
        let series: Vec<(&str, &[TraceRecord])> = loaded
            .iter()
            .map(|(n, t)| (n.as_str(), t.as_slice()))
            .collect();
        let path = dir.join("loss.svg");
        std::fs::write(&path, plot::loss_curves("total loss", &series))?;
        written.push(path);
    }
    if let Some(p) = attribution {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let report: AttributionReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing attribution report {}", p.display()))?;
        let path = dir.join("attribution.svg");
        std::fs::write(
            &path,
            plot::attribution_bars("feature attribution", &report),
        )?;
        written.push(path);
    }
    Ok(written)
}

/// Writes a synthetic dataset as CSV with its schema file.
pub fn synth(spec: &SyntheticSpec, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let table = spec.generate()?;
    let data = dir.join("data.csv");
    let schema = dir.join("schema.json");
    table.write_csv(&data)?;
    let mut s = table.schema.clone();
    if s.classes.is_none() {
        s.classes = Some(table.classes.clone());
    }
    s.save(&schema)?;
    Ok((data, schema))
}
