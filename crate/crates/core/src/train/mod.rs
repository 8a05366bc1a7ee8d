//! Training objective, sampling, the Adam loop and timing.

use crate::graphstore::{Sign, SignedGraph};
use crate::kan::KanError;
use crate::sgcn::{init_features, ModelConfig, ModelError, ModelState, Neighborhoods};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kan(#[from] KanError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("graph has no edges to train on")]
    NoSamples,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lamb: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lamb: 1.0,
            learning_rate: 0.001,
            weight_decay: 1e-5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if !(self.lamb >= 0.0 && self.lamb.is_finite()) {
            return Err(TrainError::Config(format!("lamb = {} must be finite and ≥ 0", self.lamb)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be finite and ≥ 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config("weight_decay must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Pair classes of the classification term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Positive = 0,
    Negative = 1,
    None = 2,
}

/// One epoch's training samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSample {
    /// `(i, j, label)`: every training edge plus uniformly drawn non-edges.
    pub pairs: Vec<(usize, usize, PairLabel)>,
    /// `(i, j, k)`: positive edge `(i, j)`, `k` not adjacent to `i`.
    pub pos_triples: Vec<(usize, usize, usize)>,
    /// `(i, j, k)`: negative edge `(i, j)`, `k` not adjacent to `i`.
    pub neg_triples: Vec<(usize, usize, usize)>,
}

/// Uniform non-adjacent partner of `i`, or `None` when `i` touches every node.
fn non_neighbor<R: Rng + ?Sized>(g: &SignedGraph, i: usize, rng: &mut R) -> Option<usize> {
    let n = g.node_count();
    if g.degree(i) + 1 >= n {
        return None;
    }
    loop {
        let k = rng.gen_range(0..n);
        if k != i && !g.is_adjacent(i, k) {
            return Some(k);
        }
    }
}

/// Draws the classification pairs and margin triples for one epoch.
///
/// The `none` class holds as many uniform non-adjacent pairs as there are
/// positive edges; a complete graph yields none.
pub fn draw_samples<R: Rng + ?Sized>(g: &SignedGraph, rng: &mut R) -> TrainSample {
    let n = g.node_count();
    let mut s = TrainSample::default();
    for e in g.edges() {
        let label = match e.sign {
            Sign::Positive => PairLabel::Positive,
            Sign::Negative => PairLabel::Negative,
        };
        s.pairs.push((e.u, e.v, label));
    }
    let max_pairs = n * n.saturating_sub(1) / 2;
    if g.edge_count() < max_pairs {
        for _ in 0..g.count_sign(Sign::Positive) {
            let (u, v) = loop {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u != v && !g.is_adjacent(u, v) {
                    break (u.min(v), u.max(v));
                }
            };
            s.pairs.push((u, v, PairLabel::None));
        }
    }
    for e in g.edges() {
        if let Some(k) = non_neighbor(g, e.u, rng) {
            let t = (e.u, e.v, k);
            match e.sign {
                Sign::Positive => s.pos_triples.push(t),
                Sign::Negative => s.neg_triples.push(t),
            }
        }
    }
    s
}

/// Linear 3-way classifier on `[z_i ‖ z_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `3 × 2d`.
    pub weight: Tensor,
    /// `1 × 3`.
    pub bias: Tensor,
}

impl Classifier {
    pub fn init<R: Rng + ?Sized>(embedding_dim: usize, rng: &mut R) -> Self {
        let inp = 2 * embedding_dim;
        let bound = (6.0 / (inp + 3) as f64).sqrt();
        Self {
            weight: Tensor::random_uniform(3, inp, -bound, bound, rng),
            bias: Tensor::zeros(1, 3),
        }
    }
}

/// Model plus classifier: everything the optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub model: ModelState,
    pub classifier: Classifier,
}

impl Network {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let model = ModelState::init(config, rng)?;
        let classifier = Classifier::init(config.embedding_dim(), rng);
        Ok(Self { model, classifier })
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.model.parameters();
        p.push(("classifier.weight".into(), &self.classifier.weight));
        p.push(("classifier.bias".into(), &self.classifier.bias));
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.model.parameters_mut();
        p.push(&mut self.classifier.weight);
        p.push(&mut self.classifier.bias);
        p
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Loss and gradients for every parameter, in [`Network::parameters`] order.
    pub fn loss_and_gradients(
        &self,
        nb: &Neighborhoods,
        h0: &Tensor,
        samples: &TrainSample,
        lamb: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.parameters().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
        let h = tape.constant(h0.clone());
        let (model_vars, cls) = vars.split_at(vars.len() - 2);
        let z = self.model.embed_var(&mut tape, nb, h, model_vars)?;
        let loss = loss(&mut tape, z, cls[0], cls[1], samples, lamb)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let out = vars
            .iter()
            .map(|&v| grads.take(v).expect("every parameter requires grad"))
            .collect();
        Ok((value, out))
    }

    pub fn loss_value(&self, nb: &Neighborhoods, h0: &Tensor, samples: &TrainSample, lamb: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.parameters().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let h = tape.constant(h0.clone());
        let (model_vars, cls) = vars.split_at(vars.len() - 2);
        let z = self.model.embed_var(&mut tape, nb, h, model_vars)?;
        let loss = loss(&mut tape, z, cls[0], cls[1], samples, lamb)?;
        Ok(tape.value(loss).item())
    }
}

fn sq_dist(tape: &mut Tape, z: Var, a: Arc<Vec<usize>>, b: Arc<Vec<usize>>) -> Result<Var> {
    let za = tape.gather_rows(z, a)?;
    let zb = tape.gather_rows(z, b)?;
    let d = tape.sub(za, zb)?;
    let sq = tape.square(d)?;
    Ok(tape.row_sum(sq)?)
}

/// Records the objective: mean 3-class cross-entropy over `samples.pairs`
/// plus `lamb` times the margin terms
/// `mean relu(d²(i,j) − d²(i,k))` over positive triples and
/// `mean relu(d²(i,k) − d²(i,j))` over negative triples.
///
/// An empty triple list contributes nothing.
pub fn loss(tape: &mut Tape, z: Var, cls_w: Var, cls_b: Var, samples: &TrainSample, lamb: f64) -> Result<Var> {
    if samples.pairs.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let left = Arc::new(samples.pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let right = Arc::new(samples.pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let targets = Arc::new(samples.pairs.iter().map(|p| p.2 as usize).collect::<Vec<_>>());
    let zi = tape.gather_rows(z, left)?;
    let zj = tape.gather_rows(z, right)?;
    let feats = tape.concat_cols(&[zi, zj])?;
    let logits = tape.matmul_t(feats, cls_w)?;
    let logits = tape.add_row(logits, cls_b)?;
    let mut total = tape.cross_entropy(logits, targets)?;
    if lamb == 0.0 {
        return Ok(total);
    }
    for (triples, positive) in [(&samples.pos_triples, true), (&samples.neg_triples, false)] {
        if triples.is_empty() {
            continue;
        }
        let col = |f: fn(&(usize, usize, usize)) -> usize| Arc::new(triples.iter().map(f).collect::<Vec<_>>());
        let (i, j, k) = (col(|t| t.0), col(|t| t.1), col(|t| t.2));
        let dij = sq_dist(tape, z, i.clone(), j)?;
        let dik = sq_dist(tape, z, i, k)?;
        let diff = if positive { tape.sub(dij, dik)? } else { tape.sub(dik, dij)? };
        let hinge = tape.relu(diff)?;
        let m = tape.mean(hinge)?;
        let m = tape.scale(m, lamb)?;
        total = tape.add(total, m)?;
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub network: Network,
    /// Input features `h⁰`.
    pub features: Tensor,
    pub embeddings: Tensor,
    /// Loss before each optimizer step.
    pub loss_curve: Vec<f64>,
    /// Feature init + training + final embedding.
    pub wall_clock_seconds: f64,
}

impl RunArtifacts {
    pub fn write_loss_curve(&self, path: &Path) -> Result<()> {
        let io = |source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "epoch,loss").map_err(io)?;
        for (e, l) in self.loss_curve.iter().enumerate() {
            writeln!(w, "{},{l:?}", e + 1).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Trains one model on `g` from the run's single seeded stream: SVD seed,
/// parameter init and per-epoch samples are all drawn from it in that order.
pub fn train(g: &SignedGraph, model_config: &ModelConfig, config: &TrainConfig) -> Result<RunArtifacts> {
    config.validate()?;
    model_config.validate()?;
    if g.edge_count() == 0 {
        return Err(TrainError::NoSamples);
    }
    for sign in [Sign::Positive, Sign::Negative] {
        if g.count_sign(sign) == 0 {
            log::warn!("graph has no {sign} edges; the matching margin term is dropped");
        }
    }
    if model_config.variant.kan_basis().is_some() && model_config.kan.grid_eps != 0.0 {
        log::debug!("grid_eps = {} has no effect on the static grid", model_config.kan.grid_eps);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let svd_seed: u64 = rng.gen();
    let h0 = init_features(
        g,
        model_config.feature_dim,
        model_config.reduction_iterations,
        model_config.norm_features,
        svd_seed,
    )?;
    let mut net = Network::init(model_config, &mut rng)?;
    let nb = Neighborhoods::new(g);
    let mut adam = AdamState::new(config.adam());
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let samples = draw_samples(g, &mut rng);
        let (loss, grads) = net.loss_and_gradients(&nb, &h0, &samples, config.lamb).map_err(|e| match e {
            TrainError::Tensor(TensorError::NonFinite { .. }) => TrainError::NonFiniteLoss { epoch },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        curve.push(loss);
        adam.step(&mut net.parameters_mut(), &grads)?;
    }
    let embeddings = net.model.embed_with(&nb, &h0)?;
    let wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(RunArtifacts {
        network: net,
        features: h0,
        embeddings,
        loss_curve: curve,
        wall_clock_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub variant: String,
    pub layers: usize,
    pub seconds: f64,
}

/// Trains once per layer count with `layer_dims = [width; layers]`, where
/// `width` is the first configured layer width.
pub fn time_sweep(
    g: &SignedGraph,
    model_config: &ModelConfig,
    config: &TrainConfig,
    layer_counts: &[usize],
) -> Result<Vec<TimingRecord>> {
    if layer_counts.is_empty() {
        return Err(TrainError::Config("layer_counts must not be empty".into()));
    }
    let width = model_config.layer_dims.first().copied().unwrap_or(32);
    layer_counts
        .iter()
        .map(|&layers| {
            let mc = ModelConfig {
                layer_dims: vec![width; layers],
                ..model_config.clone()
            };
            let run = train(g, &mc, config)?;
            Ok(TimingRecord {
                variant: model_config.variant.to_string(),
                layers,
                seconds: run.wall_clock_seconds,
            })
        })
        .collect()
}
