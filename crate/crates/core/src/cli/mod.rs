//! Command implementations behind the `kasgcn` binary: dataset statistics,
//! configured runs with reproducible manifests, synthetic graphs and timing
//! sweeps.

mod config;

pub use config::{RunConfig, Task};

use crate::eval::{
    render_comparison, run_experiment, ComparisonRow, EvalError, Experiment, ExperimentReport, Protocol, TimingReport,
};
use crate::graphstore::{
    graph_stats, load_edge_list, preprocess, write_edge_list, Delimiter, EdgeListFormat, GraphError, GraphStats,
    SignedGraph, SyntheticSpec,
};
use crate::kan::{save_named, KanError};
use crate::sgcn::{write_embeddings_csv, ModelError, Variant};
use crate::train::{time_sweep, train, RunArtifacts, TimingRecord, TrainError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: graph has no edges after preprocessing")]
    EmptyDataset { path: PathBuf },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kan(#[from] KanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("serializing {what}: {msg}")]
    Serialize { what: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Report of a clustering, link-sign or similarity task. Holds only values
/// that are identical across reruns of the same manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub dataset: String,
    pub nodes: usize,
    pub edges: usize,
    pub task: Task,
    pub experiment: ExperimentReport,
    pub baseline: Option<ExperimentReport>,
    /// Percentage gain of `experiment` over `baseline` per shared metric;
    /// null when the baseline mean is zero.
    pub gains: BTreeMap<String, Option<f64>>,
}

/// Report of a single training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub nodes: usize,
    pub edges: usize,
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub embedding_dim: usize,
}

/// Reads and preprocesses an edge list; an empty result is an error.
pub fn load_dataset(path: &Path, format: EdgeListFormat) -> Result<SignedGraph> {
    let g = preprocess(&load_edge_list(path, format)?);
    if g.edge_count() == 0 {
        return Err(CliError::EmptyDataset { path: path.to_path_buf() });
    }
    Ok(g)
}

/// Statistics of each dataset as an aligned table; with `out`, also writes
/// `<name>_stats.json` and `<name>_stats.txt` per dataset.
pub fn cmd_stats(paths: &[PathBuf], format: EdgeListFormat, out: Option<&Path>) -> Result<(String, Vec<PathBuf>)> {
    let mut rows = Vec::new();
    let mut written = Vec::new();
    for path in paths {
        let g = load_dataset(path, format)?;
        let stats = graph_stats(&g)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(dir) = out {
            create_dir(dir)?;
            written.push(write_json(&dir.join(format!("{name}_stats.json")), &stats, "stats")?);
            let table = GraphStats::render_table(&[(name.clone(), stats.clone())]);
            written.push(write_text(&dir.join(format!("{name}_stats.txt")), &table)?);
        }
        rows.push((name, stats));
    }
    Ok((GraphStats::render_table(&rows), written))
}

/// Writes a planted-partition graph to `out` and its labels to
/// `<stem>.labels.csv` beside it.
pub fn cmd_synth(spec: &SyntheticSpec, out: &Path, delimiter: Delimiter) -> Result<(PathBuf, PathBuf)> {
    let s = spec.generate()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_edge_list(out, &s.graph, delimiter)?;
    let labels = labels_path(out);
    s.write_labels(&labels)?;
    Ok((out.to_path_buf(), labels))
}

pub fn labels_path(edges: &Path) -> PathBuf {
    let stem = edges.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    edges.with_file_name(format!("{stem}.labels.csv"))
}

/// Runs `config.task` and writes every artifact under `config.output_dir`.
/// Returns the written paths. `jobs` only changes how repeats are scheduled.
pub fn cmd_run(config: &RunConfig, jobs: usize) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let g = load_dataset(&config.dataset, config.format())?;
    let uses_kan = config.variant.kan_basis().is_some() || config.baseline.kan_basis().is_some();
    if uses_kan && config.grid_eps != RunConfig::default().grid_eps {
        log::warn!("grid_eps = {} is accepted but has no effect: the spline grid is static", config.grid_eps);
    }
    let runner = Runner {
        config,
        g: &g,
        dataset: config.dataset_name(),
        dir: config.output_dir.clone(),
        jobs: jobs.max(1),
        written: Vec::new(),
    };
    runner.run()
}

struct Runner<'a> {
    config: &'a RunConfig,
    g: &'a SignedGraph,
    dataset: String,
    dir: PathBuf,
    jobs: usize,
    written: Vec<PathBuf>,
}

impl Runner<'_> {
    fn prefix(&self, variant: Variant, task: Task, seed: u64) -> String {
        format!("{}_{variant}_{task}_{seed}", self.dataset)
    }

    fn path(&self, prefix: &str, suffix: &str) -> PathBuf {
        self.dir.join(format!("{prefix}_{suffix}"))
    }

    fn run(mut self) -> Result<Vec<PathBuf>> {
        create_dir(&self.dir)?;
        let c = self.config;
        let top = self.prefix(c.variant, c.task, c.seed);
        let manifest = c.to_manifest()?;
        let p = self.path(&top, "manifest.toml");
        self.written.push(write_text(&p, &manifest)?);
        let tasks: Vec<Task> = if c.task == Task::All { Task::EXPANDED.to_vec() } else { vec![c.task] };
        for task in tasks {
            log::info!("{}: {task} with {}", self.dataset, c.variant);
            match task {
                Task::Stats => self.stats()?,
                Task::Train => self.train()?,
                Task::Cluster | Task::Linksign | Task::Similarity => self.experiment(task)?,
                Task::Timesweep => self.timesweep()?,
                Task::All => unreachable!("expanded above"),
            }
        }
        Ok(self.written)
    }

    fn stats(&mut self) -> Result<()> {
        let stats = graph_stats(self.g)?;
        let prefix = self.prefix(self.config.variant, Task::Stats, self.config.seed);
        let json = write_json(&self.path(&prefix, "stats.json"), &stats, "stats")?;
        let table = GraphStats::render_table(&[(self.dataset.clone(), stats)]);
        let txt = write_text(&self.path(&prefix, "stats.txt"), &table)?;
        self.written.extend([json, txt]);
        Ok(())
    }

    fn artifacts(&mut self, prefix: &str, run: &RunArtifacts) -> Result<()> {
        let emb = self.path(prefix, "embeddings.csv");
        write_embeddings_csv(&emb, self.g, &run.embeddings)?;
        let ckpt = self.path(prefix, "model.ckpt");
        save_named(&ckpt, &run.network.named_tensors())?;
        let loss = self.path(prefix, "loss.csv");
        run.write_loss_curve(&loss)?;
        self.written.extend([emb, ckpt, loss]);
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        let c = self.config;
        let run = train(self.g, &c.model_config(), &c.train_config())?;
        let prefix = self.prefix(c.variant, Task::Train, c.seed);
        self.artifacts(&prefix, &run)?;
        let report = TrainReport {
            dataset: self.dataset.clone(),
            nodes: self.g.node_count(),
            edges: self.g.edge_count(),
            variant: c.variant,
            seed: c.seed,
            epochs: c.epochs,
            initial_loss: run.loss_curve.first().copied().unwrap_or(f64::NAN),
            final_loss: run.loss_curve.last().copied().unwrap_or(f64::NAN),
            embedding_dim: run.embeddings.cols(),
        };
        let json = write_json(&self.path(&prefix, "report.json"), &report, "train report")?;
        let timings = BTreeMap::from([(c.variant.to_string(), run.wall_clock_seconds)]);
        let t = write_json(&self.path(&prefix, "timings.json"), &timings, "timings")?;
        self.written.extend([json, t]);
        Ok(())
    }

    fn experiment(&mut self, task: Task) -> Result<()> {
        let c = self.config;
        let protocol = c.protocol(task).expect("experiment task");
        let main = run_experiment(self.g, &protocol, &c.experiment_config(c.variant, self.jobs))?;
        let with_baseline = c.compare && c.baseline != c.variant && !matches!(protocol, Protocol::Similarity { .. });
        let base = if with_baseline {
            log::info!("{}: {task} with baseline {}", self.dataset, c.baseline);
            Some(run_experiment(self.g, &protocol, &c.experiment_config(c.baseline, self.jobs))?)
        } else {
            None
        };
        for exp in std::iter::once(&main).chain(&base) {
            self.experiment_artifacts(task, exp)?;
        }
        let mut gains = BTreeMap::new();
        if let Some(b) = &base {
            for (k, m) in &main.report.metrics {
                if let Some(bm) = b.report.metrics.get(k) {
                    gains.insert(k.clone(), crate::eval::gain(m.mean, bm.mean));
                }
            }
        }
        let table = match &base {
            Some(b) => {
                let (metrics, gain_on) = comparison_columns(&protocol);
                let metrics: Vec<&str> = metrics.iter().map(String::as_str).collect();
                let gain_on: Vec<&str> = gain_on.iter().map(String::as_str).collect();
                render_comparison(
                    &[ComparisonRow {
                        name: self.dataset.clone(),
                        baseline: &b.report,
                        candidate: &main.report,
                    }],
                    &metrics,
                    &gain_on,
                )?
            }
            None => main.report.render_table(),
        };
        let report = TaskReport {
            dataset: self.dataset.clone(),
            nodes: self.g.node_count(),
            edges: self.g.edge_count(),
            task,
            experiment: main.report,
            baseline: base.as_ref().map(|b| b.report.clone()),
            gains,
        };
        let mut timings = main.timings;
        if let Some(b) = &base {
            merge_timings(&mut timings, &b.timings);
        }
        let prefix = self.prefix(c.variant, task, c.seed);
        let json = write_json(&self.path(&prefix, "report.json"), &report, "report")?;
        let txt = write_text(&self.path(&prefix, "report.txt"), &table)?;
        let t = write_json(&self.path(&prefix, "timings.json"), &timings, "timings")?;
        self.written.extend([json, txt, t]);
        for flag in &report.experiment.flags {
            log::warn!("{flag}");
        }
        Ok(())
    }

    fn experiment_artifacts(&mut self, task: Task, exp: &Experiment) -> Result<()> {
        for run in &exp.runs {
            let prefix = self.prefix(exp.report.variant, task, run.seed);
            self.artifacts(&prefix, &run.artifacts)?;
            if let (Some(b), Protocol::Similarity { baseline }) = (&run.baseline, &exp.report.protocol) {
                let prefix = self.prefix(*baseline, task, run.seed);
                self.artifacts(&prefix, b)?;
            }
        }
        Ok(())
    }

    fn timesweep(&mut self) -> Result<()> {
        let c = self.config;
        let mut variants = vec![c.baseline];
        if c.variant != c.baseline {
            variants.push(c.variant);
        }
        let mut records: Vec<TimingRecord> = Vec::new();
        for v in variants {
            records.extend(time_sweep(self.g, &c.model_config_for(v), &c.train_config(), &c.sweep_layers)?);
        }
        let mut rows = vec![vec!["variant".to_string(), "layers".to_string(), "seconds".to_string()]];
        rows.extend(records.iter().map(|r| vec![r.variant.clone(), r.layers.to_string(), format!("{:.3}", r.seconds)]));
        let prefix = self.prefix(c.variant, Task::Timesweep, c.seed);
        let json = write_json(&self.path(&prefix, "timings.json"), &records, "timings")?;
        let txt = write_text(&self.path(&prefix, "timings.txt"), &crate::eval::render_aligned(&rows))?;
        self.written.extend([json, txt]);
        Ok(())
    }
}

/// Table columns for a comparison: the metrics shown and those with gains.
fn comparison_columns(p: &Protocol) -> (Vec<String>, Vec<String>) {
    match p {
        Protocol::Clustering { ks } => {
            let shown = ks
                .iter()
                .flat_map(|&k| ["pos_in", "neg_out", "q"].map(|m| crate::eval::cluster_metric(k, m)))
                .collect();
            let gains = ks.iter().map(|&k| crate::eval::cluster_metric(k, "q")).collect();
            (shown, gains)
        }
        Protocol::LinkSign { .. } => (vec!["auc".into(), "f1".into()], vec!["auc".into(), "f1".into()]),
        Protocol::Similarity { .. } => (vec!["cosine".into()], Vec::new()),
    }
}

fn merge_timings(into: &mut TimingReport, from: &TimingReport) {
    for (k, v) in &from.seconds {
        into.seconds.entry(k.clone()).or_insert_with(|| v.clone());
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<PathBuf> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn write_json<T: Serialize>(path: &Path, value: &T, what: &'static str) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize {
        what,
        msg: e.to_string(),
    })?;
    text.push('\n');
    write_text(path, &text)
}
