//! Signed graph convolution with balanced/unbalanced representations, where
//! each layer's transform is either a weight matrix or a KAN layer.

use crate::graphstore::SignedGraph;
use crate::kan::{KanBasis, KanConfig, KanError, KanLayer};
use crate::tensor::{truncated_svd, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kan(#[from] KanError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("graph has {nodes} nodes, fewer than feature_dim = {dims}")]
    TooFewNodes { nodes: usize, dims: usize },
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("writing {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sgcn")]
    Sgcn,
    #[serde(rename = "kasgcn-bspline")]
    KasgcnBspline,
    #[serde(rename = "kasgcn-fourier")]
    KasgcnFourier,
    #[serde(rename = "kasgcn-laplace")]
    KasgcnLaplace,
    #[serde(rename = "kasgcn-wavelet")]
    KasgcnWavelet,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Sgcn,
        Variant::KasgcnBspline,
        Variant::KasgcnFourier,
        Variant::KasgcnLaplace,
        Variant::KasgcnWavelet,
    ];

    pub fn kan_basis(self) -> Option<KanBasis> {
        match self {
            Variant::Sgcn => None,
            Variant::KasgcnBspline => Some(KanBasis::Bspline),
            Variant::KasgcnFourier => Some(KanBasis::Fourier),
            Variant::KasgcnLaplace => Some(KanBasis::Laplace),
            Variant::KasgcnWavelet => Some(KanBasis::Wavelet),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sgcn => "sgcn",
            Variant::KasgcnBspline => "kasgcn-bspline",
            Variant::KasgcnFourier => "kasgcn-fourier",
            Variant::KasgcnLaplace => "kasgcn-laplace",
            Variant::KasgcnWavelet => "kasgcn-wavelet",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// Alternative readings of the aggregation rules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatFlags {
    /// Aggregate positive neighbours into the layer-1 unbalanced stream.
    pub layer1_unbalanced_uses_positive: bool,
    /// Use the balanced transform for the unbalanced stream at layers > 1.
    pub shared_deep_transform: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_dims: Vec<usize>,
    pub variant: Variant,
    pub norm_embed: bool,
    /// Width of the spectral input features.
    pub feature_dim: usize,
    pub reduction_iterations: usize,
    /// Scale input feature rows to unit norm.
    pub norm_features: bool,
    pub kan: KanConfig,
    pub compat: CompatFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_dims: vec![32, 32],
            variant: Variant::KasgcnBspline,
            norm_embed: true,
            feature_dim: 15,
            reduction_iterations: 10,
            norm_features: true,
            kan: KanConfig::default(),
            compat: CompatFlags::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() {
            return Err(ModelError::Config("layer_dims must not be empty".into()));
        }
        if self.layer_dims.contains(&0) || self.feature_dim == 0 {
            return Err(ModelError::Config("all dims must be at least 1".into()));
        }
        if self.variant.kan_basis().is_some() {
            self.kan.validate()?;
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.layer_dims.last().copied().unwrap_or(0)
    }

    /// `(in, out)` of the transforms at each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = None;
        self.layer_dims
            .iter()
            .map(|&out| {
                let inp = match prev {
                    None => 2 * self.feature_dim,
                    Some(p) => 3 * p,
                };
                prev = Some(out);
                (inp, out)
            })
            .collect()
    }
}

/// Spectral input features: `U_k Σ_k` of the signed adjacency, optionally
/// row-normalized.
pub fn init_features(g: &SignedGraph, dims: usize, iters: usize, norm: bool, seed: u64) -> Result<Tensor> {
    if dims > g.node_count() {
        return Err(ModelError::TooFewNodes {
            nodes: g.node_count(),
            dims,
        });
    }
    let h = truncated_svd(&g.dense_adjacency(), dims, iters, seed)?;
    Ok(if norm { h.normalize_rows() } else { h })
}

/// A per-layer map `R^in → R^out` applied before the nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform {
    /// `x·Wᵀ`, no bias.
    Linear(Tensor),
    /// `SiLU(x)·Wᵀ`.
    SiluLinear(Tensor),
    Kan(KanLayer),
}

fn xavier<R: Rng + ?Sized>(inp: usize, out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    Tensor::random_uniform(out, inp, -bound, bound, rng)
}

impl Transform {
    pub fn in_dim(&self) -> usize {
        match self {
            Transform::Linear(w) | Transform::SiluLinear(w) => w.cols(),
            Transform::Kan(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Transform::Linear(w) | Transform::SiluLinear(w) => w.rows(),
            Transform::Kan(l) => l.out_dim(),
        }
    }

    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Transform::Linear(w) | Transform::SiluLinear(w) => vec![("weight", w)],
            Transform::Kan(l) => l.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Transform::Linear(w) | Transform::SiluLinear(w) => vec![w],
            Transform::Kan(l) => l.parameters_mut(),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        Ok(match self {
            Transform::Linear(_) => tape.matmul_t(x, params[0])?,
            Transform::SiluLinear(_) => {
                let s = tape.silu(x)?;
                tape.matmul_t(s, params[0])?
            }
            Transform::Kan(l) => l.forward(tape, x, params)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTransforms {
    pub balanced: Transform,
    pub unbalanced: Transform,
}

/// Sign-split neighbour lists shared by every forward pass over one graph.
#[derive(Clone, Debug)]
pub struct Neighborhoods {
    pub pos: Arc<Vec<Vec<usize>>>,
    pub neg: Arc<Vec<Vec<usize>>>,
}

impl Neighborhoods {
    pub fn new(g: &SignedGraph) -> Self {
        Self {
            pos: Arc::new(g.pos_adj().to_vec()),
            neg: Arc::new(g.neg_adj().to_vec()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.pos.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub layers: Vec<LayerTransforms>,
}

impl ModelState {
    /// Draws every transform from `rng`, layer by layer, balanced first.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        for (inp, out) in config.layer_shapes() {
            let make = |rng: &mut R| -> Result<Transform> {
                Ok(match config.variant.kan_basis() {
                    None => Transform::Linear(xavier(inp, out, rng)),
                    Some(basis) => Transform::Kan(KanLayer::init(basis, &config.kan, inp, out, rng)?),
                })
            };
            let balanced = make(rng)?;
            let unbalanced = make(rng)?;
            layers.push(LayerTransforms { balanced, unbalanced });
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// Assembles a model from explicit transforms, checking every width.
    pub fn from_layers(config: &ModelConfig, layers: Vec<LayerTransforms>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(ModelError::Config(format!("{} layers for {} dims", layers.len(), shapes.len())));
        }
        for (l, ((inp, out), t)) in shapes.iter().zip(&layers).enumerate() {
            for tr in [&t.balanced, &t.unbalanced] {
                if (tr.in_dim(), tr.out_dim()) != (*inp, *out) {
                    return Err(ModelError::Config(format!(
                        "layer {} transform is {}→{}, expected {inp}→{out}",
                        l + 1,
                        tr.in_dim(),
                        tr.out_dim()
                    )));
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    /// Named parameters in forward order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, t) in self.layers.iter().enumerate() {
            for (side, tr) in [("balanced", &t.balanced), ("unbalanced", &t.unbalanced)] {
                for (name, p) in tr.parameters() {
                    out.push((format!("layer{}.{side}.{name}", l + 1), p));
                }
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|t| {
                let mut v = t.balanced.parameters_mut();
                v.extend(t.unbalanced.parameters_mut());
                v
            })
            .collect()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.parameters().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Overwrites parameters from a checkpoint; names and shapes must match.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        let names: Vec<String> = self.parameters().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(self.parameters_mut()) {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != p.shape() {
                return Err(ModelError::Checkpoint(format!("{name}: shape {:?} vs {:?}", t.shape(), p.shape())));
            }
            *p = t.clone();
        }
        Ok(())
    }

    /// Registers parameters on `tape` (trainable or constant) in forward order.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    /// Per-layer `(H^B, H^U)` for all layers.
    pub fn forward_layers(
        &self,
        tape: &mut Tape,
        nb: &Neighborhoods,
        h0: Var,
        params: &[Var],
    ) -> Result<Vec<(Var, Var)>> {
        let (n, f) = tape.value(h0).shape();
        if n != nb.node_count() || f != self.config.feature_dim {
            return Err(TensorError::Shape {
                op: "sgcn_forward",
                lhs: (n, f),
                rhs: (nb.node_count(), self.config.feature_dim),
            }
            .into());
        }
        let mut cursor = 0;
        let mut take = |tr: &Transform| {
            let k = tr.parameters().len();
            let s = &params[cursor..cursor + k];
            cursor += k;
            s.to_vec()
        };
        let compat = self.config.compat;
        let mut out: Vec<(Var, Var)> = Vec::with_capacity(self.layers.len());
        for (l, t) in self.layers.iter().enumerate() {
            let pb = take(&t.balanced);
            let pu = take(&t.unbalanced);
            let (hb, hu) = if l == 0 {
                let mean_pos = tape.row_mean_subsets(h0, nb.pos.clone())?;
                let u_sets = if compat.layer1_unbalanced_uses_positive {
                    nb.pos.clone()
                } else {
                    nb.neg.clone()
                };
                let mean_u = tape.row_mean_subsets(h0, u_sets)?;
                let xb = tape.concat_cols(&[mean_pos, h0])?;
                let xu = tape.concat_cols(&[mean_u, h0])?;
                let yb = t.balanced.forward(tape, xb, &pb)?;
                let yu = t.unbalanced.forward(tape, xu, &pu)?;
                (tape.tanh(yb)?, tape.tanh(yu)?)
            } else {
                let (pb_prev, pu_prev) = out[l - 1];
                let b_pos = tape.row_mean_subsets(pb_prev, nb.pos.clone())?;
                let u_neg = tape.row_mean_subsets(pu_prev, nb.neg.clone())?;
                let u_pos = tape.row_mean_subsets(pu_prev, nb.pos.clone())?;
                let b_neg = tape.row_mean_subsets(pb_prev, nb.neg.clone())?;
                let xb = tape.concat_cols(&[b_pos, u_neg, pb_prev])?;
                let xu = tape.concat_cols(&[u_pos, b_neg, pu_prev])?;
                let yb = t.balanced.forward(tape, xb, &pb)?;
                let yu = if compat.shared_deep_transform {
                    t.balanced.forward(tape, xu, &pb)?
                } else {
                    t.unbalanced.forward(tape, xu, &pu)?
                };
                (tape.tanh(yb)?, tape.tanh(yu)?)
            };
            out.push((hb, hu));
        }
        Ok(out)
    }

    /// Final embedding `[H^B_L ‖ H^U_L]`, row-normalized when `norm_embed`.
    pub fn embed_var(&self, tape: &mut Tape, nb: &Neighborhoods, h0: Var, params: &[Var]) -> Result<Var> {
        let layers = self.forward_layers(tape, nb, h0, params)?;
        let (hb, hu) = *layers.last().expect("validated nonempty");
        let z = tape.concat_cols(&[hb, hu])?;
        Ok(if self.config.norm_embed {
            tape.normalize_rows(z)?
        } else {
            z
        })
    }

    pub fn embed(&self, g: &SignedGraph, h0: &Tensor) -> Result<Tensor> {
        self.embed_with(&Neighborhoods::new(g), h0)
    }

    pub fn embed_with(&self, nb: &Neighborhoods, h0: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let h = tape.constant(h0.clone());
        let z = self.embed_var(&mut tape, nb, h, &params)?;
        Ok(tape.value(z).clone())
    }

    /// `(H^B, H^U)` values of every layer, without the final concatenation.
    pub fn layer_outputs(&self, g: &SignedGraph, h0: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let h = tape.constant(h0.clone());
        let layers = self.forward_layers(&mut tape, &Neighborhoods::new(g), h, &params)?;
        Ok(layers
            .into_iter()
            .map(|(b, u)| (tape.value(b).clone(), tape.value(u).clone()))
            .collect())
    }
}

/// Writes `node_id,z_0,...` rows keyed by the graph's original node ids.
pub fn write_embeddings_csv(path: &Path, g: &SignedGraph, z: &Tensor) -> Result<()> {
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let header: Vec<String> = (0..z.cols()).map(|c| format!("z{c}")).collect();
    writeln!(w, "node_id,{}", header.join(",")).map_err(io)?;
    for (r, id) in g.node_ids().iter().enumerate() {
        write!(w, "{id}").map_err(io)?;
        for v in z.row(r) {
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
