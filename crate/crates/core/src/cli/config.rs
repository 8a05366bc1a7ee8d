//! Flat key-value run configuration with per-key validation and overrides.

use super::{CliError, Result};
use crate::eval::{ExperimentConfig, Protocol};
use crate::graphstore::{Delimiter, EdgeListFormat};
use crate::kan::{BaseActivation, KanConfig};
use crate::sgcn::{CompatFlags, ModelConfig, Variant};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Stats,
    Train,
    Cluster,
    Linksign,
    Similarity,
    Timesweep,
    All,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Stats => "stats",
            Task::Train => "train",
            Task::Cluster => "cluster",
            Task::Linksign => "linksign",
            Task::Similarity => "similarity",
            Task::Timesweep => "timesweep",
            Task::All => "all",
        }
    }

    /// The tasks `all` expands to, in execution order.
    pub const EXPANDED: [Task; 6] = [
        Task::Stats,
        Task::Train,
        Task::Cluster,
        Task::Linksign,
        Task::Similarity,
        Task::Timesweep,
    ];
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Every knob of a run. Defaults are the published experimental settings, so
/// a config naming only `dataset` reproduces them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Edge list path.
    pub dataset: PathBuf,
    /// Output name of the dataset; empty means the file stem.
    pub name: String,
    pub delimiter: Delimiter,
    pub skip_header: bool,
    pub variant: Variant,
    pub task: Task,
    pub output_dir: PathBuf,
    pub repeats: usize,

    pub layers: Vec<usize>,
    pub norm_embed: bool,
    pub spectral_features: bool,
    pub reduction_dimensions: usize,
    pub reduction_iterations: usize,
    pub norm: bool,

    pub grid_size: usize,
    pub spline_order: usize,
    pub scale_noise: f64,
    pub scale_base: f64,
    pub scale_spline: f64,
    pub base_activation: BaseActivation,
    pub grid_eps: f64,
    pub grid_range: [f64; 2],

    pub layer1_unbalanced_uses_positive: bool,
    pub shared_deep_transform: bool,

    pub epochs: usize,
    pub lamb: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,

    /// Cluster counts for the clustering task.
    pub ks: Vec<usize>,
    /// Held-out fraction of each sign class for link sign prediction.
    pub test_frac: f64,
    /// Retrain link-sign embeddings on the training edges only; by default
    /// embeddings see the full graph and only the classifier is split.
    pub strict_split: bool,
    /// Comparison variant for gains, similarity and timing.
    pub baseline: Variant,
    /// Also run `baseline` for the clustering and link-sign tasks.
    pub compare: bool,
    /// Layer counts for the timing sweep.
    pub sweep_layers: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let kan = KanConfig::default();
        let train = TrainConfig::default();
        Self {
            dataset: PathBuf::new(),
            name: String::new(),
            delimiter: Delimiter::Auto,
            skip_header: false,
            variant: Variant::KasgcnBspline,
            task: Task::All,
            output_dir: PathBuf::from("out"),
            repeats: 10,
            layers: model.layer_dims,
            norm_embed: model.norm_embed,
            spectral_features: true,
            reduction_dimensions: model.feature_dim,
            reduction_iterations: model.reduction_iterations,
            norm: model.norm_features,
            grid_size: kan.grid_size,
            spline_order: kan.spline_order,
            scale_noise: kan.scale_noise,
            scale_base: kan.scale_base,
            scale_spline: kan.scale_spline,
            base_activation: kan.base_activation,
            grid_eps: kan.grid_eps,
            grid_range: kan.grid_range,
            layer1_unbalanced_uses_positive: false,
            shared_deep_transform: false,
            epochs: train.epochs,
            lamb: train.lamb,
            learning_rate: train.learning_rate,
            weight_decay: train.weight_decay,
            seed: train.seed,
            ks: vec![5, 10, 15],
            test_frac: 0.2,
            strict_split: false,
            baseline: Variant::Sgcn,
            compare: true,
            sweep_layers: vec![2, 3, 4],
        }
    }
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (`key=value`, TOML value syntax,
    /// bare words taken as strings) and validates. Every bad key is reported.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        for o in overrides {
            match parse_override(o) {
                Ok((k, v)) => {
                    table.insert(k, v);
                }
                Err(msg) => problems.push(msg),
            }
        }
        let known = Self::keys();
        for (key, value) in &table {
            if !known.iter().any(|k| k == key) {
                problems.push(format!("unknown key `{key}`"));
                continue;
            }
            let mut single = toml::Table::new();
            single.insert(key.clone(), value.clone());
            if let Err(e) = toml::Value::Table(single).try_into::<RunConfig>() {
                problems.push(format!("key `{key}`: {}", e.message().trim()));
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.message().trim().to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, overrides)
    }

    /// Names of all accepted keys.
    pub fn keys() -> Vec<String> {
        match toml::Table::try_from(Self::default()) {
            Ok(t) => t.keys().cloned().collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Semantic checks, each failing key listed.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dataset.as_os_str().is_empty() {
            problems.push("key `dataset`: required".to_string());
        }
        if self.repeats == 0 {
            problems.push("key `repeats`: must be at least 1".to_string());
        }
        if !self.spectral_features {
            problems.push("key `spectral_features`: only spectral input features are supported".to_string());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            problems.push("key `ks`: needs at least one cluster count, each ≥ 1".to_string());
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            problems.push("key `test_frac`: must lie in (0, 1)".to_string());
        }
        if self.sweep_layers.is_empty() || self.sweep_layers.contains(&0) {
            problems.push("key `sweep_layers`: needs at least one layer count, each ≥ 1".to_string());
        }
        if let Err(e) = self.model_config().validate() {
            problems.push(e.to_string());
        }
        if self.variant.kan_basis().is_none() && self.baseline.kan_basis().is_some() {
            if let Err(e) = self.model_config_for(self.baseline).validate() {
                problems.push(e.to_string());
            }
        }
        if let Err(e) = self.train_config().validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    pub fn format(&self) -> EdgeListFormat {
        EdgeListFormat {
            delimiter: self.delimiter,
            skip_header: self.skip_header,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model_config_for(self.variant)
    }

    pub fn model_config_for(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            layer_dims: self.layers.clone(),
            variant,
            norm_embed: self.norm_embed,
            feature_dim: self.reduction_dimensions,
            reduction_iterations: self.reduction_iterations,
            norm_features: self.norm,
            kan: KanConfig {
                grid_size: self.grid_size,
                spline_order: self.spline_order,
                scale_noise: self.scale_noise,
                scale_base: self.scale_base,
                scale_spline: self.scale_spline,
                grid_range: self.grid_range,
                grid_eps: self.grid_eps,
                base_activation: self.base_activation,
            },
            compat: CompatFlags {
                layer1_unbalanced_uses_positive: self.layer1_unbalanced_uses_positive,
                shared_deep_transform: self.shared_deep_transform,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lamb: self.lamb,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }

    pub fn experiment_config(&self, variant: Variant, jobs: usize) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model_config_for(variant),
            train: self.train_config(),
            repeats: self.repeats,
            jobs,
        }
    }

    pub fn protocol(&self, task: Task) -> Option<Protocol> {
        match task {
            Task::Cluster => Some(Protocol::Clustering { ks: self.ks.clone() }),
            Task::Linksign => Some(Protocol::LinkSign {
                test_frac: self.test_frac,
                strict: self.strict_split,
            }),
            Task::Similarity => Some(Protocol::Similarity { baseline: self.baseline }),
            _ => None,
        }
    }

    /// `name`, or the dataset's file stem, reduced to filename-safe characters.
    pub fn dataset_name(&self) -> String {
        let raw = if self.name.is_empty() {
            self.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            self.name.clone()
        };
        let clean: String = raw
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '-' })
            .collect();
        if clean.is_empty() {
            "dataset".to_string()
        } else {
            clean
        }
    }

    /// The fully resolved config as TOML; loading it back gives `self`.
    pub fn to_manifest(&self) -> Result<String> {
        let resolved = RunConfig {
            name: self.dataset_name(),
            ..self.clone()
        };
        toml::to_string(&resolved).map_err(|e| CliError::Config(vec![e.to_string()]))
    }
}

fn parse_override(s: &str) -> std::result::Result<(String, toml::Value), String> {
    let (key, value) = s.split_once('=').ok_or_else(|| format!("override {s:?} is not key=value"))?;
    let key = key.trim().to_string();
    if key.is_empty() {
        return Err(format!("override {s:?} has an empty key"));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_settings() {
        let c = RunConfig::parse("dataset = \"x.csv\"", &[]).unwrap();
        assert_eq!(c.layers, vec![32, 32]);
        assert_eq!((c.epochs, c.seed, c.repeats), (1000, 42, 10));
        assert_eq!((c.lamb, c.learning_rate, c.weight_decay), (1.0, 0.001, 1e-5));
        assert_eq!((c.reduction_dimensions, c.reduction_iterations), (15, 10));
        assert!(c.norm && c.norm_embed && c.spectral_features);
        assert_eq!((c.grid_size, c.spline_order), (5, 3));
        assert_eq!((c.scale_noise, c.scale_base, c.scale_spline, c.grid_eps), (0.1, 1.0, 1.0, 0.02));
        assert_eq!(c.grid_range, [-1.0, 1.0]);
        assert_eq!(c.test_frac, 0.2);
        assert_eq!(c.model_config().kan, KanConfig::default());
        assert_eq!(c.train_config(), TrainConfig::default());
    }

    #[test]
    fn every_bad_key_is_listed() {
        let text = "dataset = \"x.csv\"\nepochs = \"many\"\nbogus = 1\nvariant = \"mlp\"\nalso_bogus = true\n";
        let Err(CliError::Config(problems)) = RunConfig::parse(text, &[]) else {
            panic!("expected a config error");
        };
        let joined = problems.join("\n");
        for key in ["epochs", "bogus", "variant", "also_bogus"] {
            assert!(joined.contains(&format!("`{key}`")), "{key} missing from {joined}");
        }
        assert_eq!(problems.len(), 4);
    }

    #[test]
    fn semantic_errors_listed_together() {
        let Err(CliError::Config(problems)) = RunConfig::parse("repeats = 0\ntest_frac = 2.0", &[]) else {
            panic!("expected a config error");
        };
        assert_eq!(problems.len(), 3, "{problems:?}");
    }

    #[test]
    fn overrides_win_over_file_values() {
        let c = RunConfig::parse(
            "dataset = \"a.csv\"\nepochs = 5",
            &["epochs=7".into(), "variant=sgcn".into(), "layers=[8, 8, 8]".into()],
        )
        .unwrap();
        assert_eq!((c.epochs, c.variant, c.layers.len()), (7, Variant::Sgcn, 3));
        assert!(RunConfig::parse("dataset = \"a.csv\"", &["noequals".into()]).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let c = RunConfig::parse("dataset = \"data/Congress Votes.tsv\"\nseed = 9", &[]).unwrap();
        let text = c.to_manifest().unwrap();
        let back = RunConfig::parse(&text, &[]).unwrap();
        assert_eq!(back.name, "Congress-Votes");
        assert_eq!(RunConfig { name: String::new(), ..back.clone() }, c);
        assert_eq!(back.to_manifest().unwrap(), text);
    }

    #[test]
    fn every_key_documented_in_defaults() {
        let keys = RunConfig::keys();
        assert!(keys.len() >= 30);
        assert!(keys.iter().any(|k| k == "grid_range"));
    }
}
