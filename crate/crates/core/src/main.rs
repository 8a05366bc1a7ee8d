//! `kasgcn` command-line interface.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use kasgcn::cli::{cmd_run, cmd_stats, cmd_synth, RunConfig, Task};
use kasgcn::graphstore::{Delimiter, EdgeListFormat, SyntheticSpec};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "kasgcn", version, about = "Signed graph embeddings with Kolmogorov-Arnold layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-dataset statistics as a table.
    Stats {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long, default_value = "auto")]
        delimiter: Delimiter,
        #[arg(long)]
        skip_header: bool,
        /// Also write `<name>_stats.json` and `.txt` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate as configured; writes reports and a manifest.
    Run(RunArgs),
    /// Write a planted-partition signed graph and its labels.
    Synth(SynthArgs),
    /// Time training across layer counts for the variant and the baseline.
    Timesweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config or a manifest from an earlier run.
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config key, e.g. `--set layers=[16,16]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Repeats run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Edge list to write; labels go to `<stem>.labels.csv`.
    #[arg(long)]
    out: PathBuf,
    /// TOML spec; flags below override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    nodes_per_block: Option<usize>,
    #[arg(long)]
    p_pos_within: Option<f64>,
    #[arg(long)]
    p_neg_between: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "comma")]
    delimiter: Delimiter,
}

fn quoted(path: &std::path::Path) -> String {
    toml::Value::String(path.display().to_string()).to_string()
}

impl RunArgs {
    fn resolve(self, forced: Option<Task>) -> Result<(RunConfig, usize)> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let mut sets = Vec::new();
        if let Some(d) = &self.dataset {
            sets.push(format!("dataset={}", quoted(d)));
        }
        if let Some(v) = &self.variant {
            sets.push(format!("variant={v}"));
        }
        if let Some(t) = &self.task {
            sets.push(format!("task={t}"));
        }
        if let Some(o) = &self.out {
            sets.push(format!("output_dir={}", quoted(o)));
        }
        if let Some(r) = self.repeats {
            sets.push(format!("repeats={r}"));
        }
        if let Some(e) = self.epochs {
            sets.push(format!("epochs={e}"));
        }
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        sets.extend(self.set);
        if let Some(t) = forced {
            sets.push(format!("task={t}"));
        }
        Ok((RunConfig::parse(&text, &sets)?, self.jobs))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats {
            datasets,
            delimiter,
            skip_header,
            out,
        } => {
            let format = EdgeListFormat { delimiter, skip_header };
            let (table, written) = cmd_stats(&datasets, format, out.as_deref())?;
            print!("{table}");
            for p in written {
                eprintln!("wrote {}", p.display());
            }
        }
        Command::Run(args) => report(args.resolve(None)?)?,
        Command::Timesweep(args) => report(args.resolve(Some(Task::Timesweep))?)?,
        Command::Synth(a) => {
            let mut spec = match &a.spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SyntheticSpec::default(),
            };
            spec.blocks = a.blocks.unwrap_or(spec.blocks);
            spec.nodes_per_block = a.nodes_per_block.unwrap_or(spec.nodes_per_block);
            spec.p_pos_within = a.p_pos_within.unwrap_or(spec.p_pos_within);
            spec.p_neg_between = a.p_neg_between.unwrap_or(spec.p_neg_between);
            spec.noise = a.noise.unwrap_or(spec.noise);
            spec.seed = a.seed.unwrap_or(spec.seed);
            let (edges, labels) = cmd_synth(&spec, &a.out, a.delimiter)?;
            eprintln!("wrote {}\nwrote {}", edges.display(), labels.display());
        }
    }
    Ok(())
}

fn report((config, jobs): (RunConfig, usize)) -> Result<()> {
    let written = cmd_run(&config, jobs)?;
    for p in written.iter().filter(|p| p.extension().is_some_and(|e| e == "txt")) {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        println!("{}\n{text}", p.display());
    }
    eprintln!("wrote {} files to {}", written.len(), config.output_dir.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        let mut msg = e.to_string();
        for cause in e.chain().skip(1).map(ToString::to_string) {
            if !msg.contains(&cause) {
                msg = format!("{msg}: {cause}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}
