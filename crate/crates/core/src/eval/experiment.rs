//! Repeated train-and-evaluate runs with mean ± std aggregation.

use super::linksign::evaluate_link_sign;
use super::{avg_cosine_similarity, cluster_quality, kmeanspp, render_aligned, EvalError, Result};
use crate::graphstore::{split_edges, SignedGraph};
use crate::sgcn::{ModelConfig, Variant};
use crate::train::{train, RunArtifacts, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// k-means++ on the embeddings for every `k`, scored by signed quality.
    Clustering { ks: Vec<usize> },
    /// Stratified edge split, logistic regression on pair features. With
    /// `strict` the embeddings are trained on the training edges only.
    LinkSign { test_frac: f64, strict: bool },
    /// Cosine agreement with a second variant trained from the same seed.
    Similarity { baseline: Variant },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Clustering { .. } => "cluster",
            Protocol::LinkSign { .. } => "linksign",
            Protocol::Similarity { .. } => "similarity",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Protocol::Clustering { ks } if ks.is_empty() || ks.contains(&0) => {
                Err(EvalError::Config("clustering needs at least one k ≥ 1".into()))
            }
            Protocol::LinkSign { test_frac, .. } if !(*test_frac > 0.0 && *test_frac < 1.0) => {
                Err(EvalError::Config(format!("test fraction {test_frac} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// `train.seed` is the base seed; run `r` uses `seed + r`.
    pub train: TrainConfig,
    pub repeats: usize,
    /// Runs executed concurrently; 1 runs them in order on this thread.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub runs: Vec<f64>,
}

impl MetricSummary {
    pub fn from_runs(runs: Vec<f64>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let var = runs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            runs,
        }
    }

    /// `mean ± std` with four decimals.
    pub fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Deterministic outputs of an experiment; timings live in [`TimingReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: Protocol,
    pub variant: Variant,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Notes on degenerate cases, e.g. vacuous quality components.
    pub flags: Vec<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Result<&MetricSummary> {
        self.metrics.get(name).ok_or_else(|| EvalError::MissingMetric(name.to_string()))
    }

    /// One row per metric.
    pub fn render_table(&self) -> String {
        let mut rows = vec![vec![
            "metric".to_string(),
            format!("{} (mean ± std, {} runs)", self.variant, self.repeats),
        ]];
        rows.extend(self.metrics.iter().map(|(k, m)| vec![k.clone(), m.cell()]));
        render_aligned(&rows)
    }
}

/// Wall-clock seconds per run, keyed by variant name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub seconds: BTreeMap<String, MetricSummary>,
}

pub struct RunOutcome {
    pub seed: u64,
    pub artifacts: RunArtifacts,
    /// The comparison variant's run for [`Protocol::Similarity`].
    pub baseline: Option<RunArtifacts>,
    pub metrics: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub timings: TimingReport,
    pub runs: Vec<RunOutcome>,
}

pub fn cluster_metric(k: usize, name: &str) -> String {
    format!("k{k}.{name}")
}

fn run_once(g: &SignedGraph, protocol: &Protocol, config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let tc = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let mut metrics = BTreeMap::new();
    let mut flags = Vec::new();
    let mut baseline = None;
    let artifacts = match protocol {
        Protocol::Clustering { ks } => {
            let run = train(g, &config.model, &tc)?;
            for &k in ks {
                let a = kmeanspp(&run.embeddings, k, seed)?;
                let q = cluster_quality(g, &a.labels)?;
                metrics.insert(cluster_metric(k, "pos_in"), q.pos_in);
                metrics.insert(cluster_metric(k, "neg_out"), q.neg_out);
                metrics.insert(cluster_metric(k, "q"), q.q);
                if q.pos_in_vacuous {
                    flags.push(format!("seed {seed}, k {k}: no positive edges, pos_in set to 1"));
                }
                if q.neg_out_vacuous {
                    flags.push(format!("seed {seed}, k {k}: no negative edges, neg_out set to 1"));
                }
            }
            run
        }
        Protocol::LinkSign { test_frac, strict } => {
            let split = split_edges(g, *test_frac, seed)?;
            let run = if *strict {
                train(&g.with_edge_subset(&split.train_edges)?, &config.model, &tc)?
            } else {
                train(g, &config.model, &tc)?
            };
            let r = evaluate_link_sign(&run.embeddings, &split)?;
            metrics.insert("auc".into(), r.auc);
            metrics.insert("f1".into(), r.f1);
            metrics.insert("precision_pos".into(), r.positive.precision);
            metrics.insert("recall_pos".into(), r.positive.recall);
            metrics.insert("precision_neg".into(), r.negative.precision);
            metrics.insert("recall_neg".into(), r.negative.recall);
            run
        }
        Protocol::Similarity { baseline: other } => {
            let run = train(g, &config.model, &tc)?;
            let mc = ModelConfig {
                variant: *other,
                ..config.model.clone()
            };
            let base = train(g, &mc, &tc)?;
            let c = avg_cosine_similarity(&run.embeddings, &base.embeddings)?;
            metrics.insert("cosine".into(), c.mean);
            if c.skipped > 0 {
                flags.push(format!("seed {seed}: {} zero-norm rows skipped", c.skipped));
            }
            baseline = Some(base);
            run
        }
    };
    Ok(RunOutcome {
        seed,
        artifacts,
        baseline,
        metrics,
        flags,
    })
}

/// Runs `repeats` seeds (`seed + r`), in parallel when `jobs > 1`. Results are
/// identical whatever the job count.
pub fn run_experiment(g: &SignedGraph, protocol: &Protocol, config: &ExperimentConfig) -> Result<Experiment> {
    if config.repeats == 0 {
        return Err(EvalError::Config("repeats must be at least 1".into()));
    }
    protocol.validate()?;
    let seeds: Vec<u64> = (0..config.repeats as u64).map(|r| config.train.seed.wrapping_add(r)).collect();
    let jobs = config.jobs.clamp(1, seeds.len());
    let outcomes: Vec<Result<RunOutcome>> = if jobs == 1 {
        seeds.iter().map(|&s| run_once(g, protocol, config, s)).collect()
    } else {
        let slots: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= seeds.len() {
                        break;
                    }
                    let out = run_once(g, protocol, config, seeds[i]);
                    slots.lock().expect("no panics while holding the lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|o| o.expect("every slot filled"))
            .collect()
    };
    let runs = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut metrics = BTreeMap::new();
    for name in runs[0].metrics.keys() {
        let values = runs.iter().map(|r| r.metrics[name]).collect();
        metrics.insert(name.clone(), MetricSummary::from_runs(values));
    }
    let mut timings = TimingReport::default();
    timings.seconds.insert(
        config.model.variant.to_string(),
        MetricSummary::from_runs(runs.iter().map(|r| r.artifacts.wall_clock_seconds).collect()),
    );
    if let Protocol::Similarity { baseline } = protocol {
        let secs = runs.iter().filter_map(|r| r.baseline.as_ref()).map(|b| b.wall_clock_seconds).collect();
        timings.seconds.insert(baseline.to_string(), MetricSummary::from_runs(secs));
    }
    let report = ExperimentReport {
        protocol: protocol.clone(),
        variant: config.model.variant,
        repeats: config.repeats,
        seeds,
        metrics,
        flags: runs.iter().flat_map(|r| r.flags.iter().cloned()).collect(),
        model: config.model.clone(),
        train: config.train.clone(),
    };
    Ok(Experiment { report, timings, runs })
}

/// Percentage change of `candidate` over `baseline`; `None` when the baseline
/// is zero.
pub fn gain(candidate: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| 100.0 * (candidate - baseline) / baseline)
}

/// One dataset's pair of reports in a comparison table.
pub struct ComparisonRow<'a> {
    pub name: String,
    pub baseline: &'a ExperimentReport,
    pub candidate: &'a ExperimentReport,
}

/// Paper-style table: `mean ± std` for each metric under the baseline, then
/// under the candidate, then the gain of the candidate's mean for every
/// metric in `gains`.
pub fn render_comparison(rows: &[ComparisonRow<'_>], metrics: &[&str], gains: &[&str]) -> Result<String> {
    let mut header = vec!["dataset".to_string()];
    if let Some(first) = rows.first() {
        for report in [first.baseline, first.candidate] {
            header.extend(metrics.iter().map(|m| format!("{} {m}", report.variant)));
        }
    }
    header.extend(gains.iter().map(|g| format!("gain {g}")));
    let mut table = vec![header];
    for row in rows {
        let mut cells = vec![row.name.clone()];
        for report in [row.baseline, row.candidate] {
            for m in metrics {
                cells.push(report.metric(m)?.cell());
            }
        }
        for g in gains {
            let v = gain(row.candidate.metric(g)?.mean, row.baseline.metric(g)?.mean);
            cells.push(v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%")));
        }
        table.push(cells);
    }
    Ok(render_aligned(&table))
}
