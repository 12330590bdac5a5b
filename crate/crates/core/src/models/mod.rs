//! The three compared architectures: GCN, graph transformer and MLP.
//!
//! A model is `layers` stacked layers of one kind. Hidden layers are
//! followed by ReLU and inverted dropout; the last layer emits raw logits.
//!
//! Parameter shapes (`d_0 = in_dim`, `d_l = hidden` for `0 < l < L`,
//! `d_L = num_classes`), for layer `l` in `0..L`:
//!
//! | arch                | parameters (`layers.{l}.*`)                      | shape           |
//! |---------------------|--------------------------------------------------|-----------------|
//! | `gcn`, `mlp`        | `weight`                                         | `d_l × d_{l+1}` |
//! |                     | `bias`                                           | `1 × d_{l+1}`   |
//! | `graph_transformer` | `w_query`, `w_key`, `w_value`, `w_skip`          | `d_l × d_{l+1}` |
//! |                     | `bias`                                           | `1 × d_{l+1}`   |
//!
//! Graph-transformer hidden layers use `heads` heads of width
//! `hidden / heads`; the output layer uses a single head so that any class
//! count works.
//!
//! Initialisation is Glorot-uniform, `U(-a, a)` with
//! `a = sqrt(6 / (fan_in + fan_out))` and `fan_in, fan_out = d_l, d_{l+1}`,
//! drawn row-major per parameter in the table order from
//! `Rng::stream(seed, 0x1417)`. Biases start at zero.

pub mod checkpoint;
pub mod gcn;
pub mod mlp;
pub mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::ops::{dropout, relu, relu_backward, DropoutMask};
use crate::rng::Rng;
use crate::tensor::{Parameter, Tensor};

pub use gcn::{gcn_layer, GcnLayer};
pub use mlp::{mlp_layer, LinearLayer};
pub use transformer::{graph_transformer_layer, AttentionCache, GraphTransformerLayer};

const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcn,
    #[serde(alias = "gt")]
    GraphTransformer,
    Mlp,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Gcn, Arch::GraphTransformer, Arch::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::GraphTransformer => "graph_transformer",
            Arch::Mlp => "mlp",
        }
    }

    /// Column header used in result tables.
    pub fn title(self) -> &'static str {
        match self {
            Arch::Gcn => "GCN",
            Arch::GraphTransformer => "Graph Transformer",
            Arch::Mlp => "MLP",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "graph_transformer" | "gt" | "transformer" => Ok(Arch::GraphTransformer),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub in_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Four layers, 64 hidden units, 4 heads, dropout 0.5.
    pub fn new(arch: Arch, in_dim: usize, num_classes: usize) -> Self {
        Self {
            arch,
            layers: 4,
            hidden: 64,
            heads: 4,
            dropout: 0.5,
            in_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 layers, got {}", self.layers)));
        }
        if self.hidden == 0 || self.in_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "hidden, in_dim and num_classes must be positive".into(),
            ));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let din = if l == 0 { self.in_dim } else { self.hidden };
                let dout = if l + 1 == self.layers { self.num_classes } else { self.hidden };
                (din, dout)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Gcn(GcnLayer),
    Transformer(GraphTransformerLayer),
    Linear(LinearLayer),
}

#[derive(Clone, Debug)]
enum LayerCache {
    Gcn(gcn::GcnCache),
    Transformer(AttentionCache),
    Linear(mlp::LinearCache),
}

impl Layer {
    fn forward(&self, h: &Tensor, graph: &PreparedGraph) -> Result<(Tensor, LayerCache)> {
        Ok(match self {
            Layer::Gcn(l) => {
                let (o, c) = l.forward(h, &graph.adj)?;
                (o, LayerCache::Gcn(c))
            }
            Layer::Transformer(l) => {
                let (o, c) = l.forward(h, &graph.graph)?;
                (o, LayerCache::Transformer(c))
            }
            Layer::Linear(l) => {
                let (o, c) = l.forward(h)?;
                (o, LayerCache::Linear(c))
            }
        })
    }

    fn backward(
        &mut self,
        cache: &LayerCache,
        graph: &PreparedGraph,
        d_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        match (self, cache) {
            (Layer::Gcn(l), LayerCache::Gcn(c)) => l.backward(c, &graph.adj, d_out, need_input_grad),
            (Layer::Transformer(l), LayerCache::Transformer(c)) => {
                l.backward(c, &graph.graph, d_out, need_input_grad)
            }
            (Layer::Linear(l), LayerCache::Linear(c)) => l.backward(c, d_out, need_input_grad),
            _ => unreachable!("layer/cache kinds always match"),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        match self {
            Layer::Gcn(l) => vec![&l.weight, &l.bias],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Transformer(l) => vec![&l.w_query, &l.w_key, &l.w_value, &l.w_skip, &l.bias],
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Gcn(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Transformer(l) => vec![
                &mut l.w_query,
                &mut l.w_key,
                &mut l.w_value,
                &mut l.w_skip,
                &mut l.bias,
            ],
        }
    }
}

/// A graph together with its propagation operator, built once per dataset.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub graph: Graph,
    pub adj: NormalizedAdjacency,
}

impl PreparedGraph {
    pub fn new(graph: &Graph) -> Self {
        Self {
            graph: graph.clone(),
            adj: normalize_adjacency(graph, true),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

/// Intermediate values a training forward pass keeps for backward.
pub struct Trace {
    steps: Vec<(LayerCache, Option<(Tensor, DropoutMask)>)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

fn glorot(name: String, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Parameter {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Parameter::new(name, Tensor::from_fn(fan_in, fan_out, |_, _| rng.uniform_range(-a, a)))
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::stream(seed, INIT_STREAM);
        let dims = spec.layer_dims();
        let mut layers = Vec::with_capacity(dims.len());
        for (l, &(din, dout)) in dims.iter().enumerate() {
            let p = |suffix: &str| format!("layers.{l}.{suffix}");
            let bias = Parameter::new(p("bias"), Tensor::zeros(1, dout));
            let layer = match spec.arch {
                Arch::Gcn => Layer::Gcn(GcnLayer::new(glorot(p("weight"), din, dout, &mut rng), bias)?),
                Arch::Mlp => Layer::Linear(LinearLayer::new(glorot(p("weight"), din, dout, &mut rng), bias)?),
                Arch::GraphTransformer => {
                    let heads = if l + 1 == dims.len() { 1 } else { spec.heads };
                    let q = glorot(p("w_query"), din, dout, &mut rng);
                    let k = glorot(p("w_key"), din, dout, &mut rng);
                    let v = glorot(p("w_value"), din, dout, &mut rng);
                    let s = glorot(p("w_skip"), din, dout, &mut rng);
                    Layer::Transformer(GraphTransformerLayer::new(q, k, v, s, bias, heads)?)
                }
            };
            layers.push(layer);
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(Layer::parameters).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(Layer::parameters_mut).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    /// Copies of all parameter values, in `parameters()` order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.parameters().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(Error::InvalidArgument("snapshot parameter count mismatch".into()));
        }
        for (p, v) in params.iter_mut().zip(values) {
            p.value.check_same_shape("restore", v)?;
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, graph: &PreparedGraph, x: &Tensor) -> Result<()> {
        if x.cols() != self.spec.in_dim || x.rows() != graph.num_nodes() {
            return Err(Error::shape(
                "model forward",
                format!(
                    "features {:?}, model expects {} columns over {} nodes",
                    x.shape(),
                    self.spec.in_dim,
                    graph.num_nodes()
                ),
            ));
        }
        Ok(())
    }

    fn run(&self, graph: &PreparedGraph, x: &Tensor, training: bool, rng: &mut Rng) -> Result<(Tensor, Trace)> {
        self.check_input(graph, x)?;
        let keep = 1.0 - self.spec.dropout;
        let last = self.layers.len() - 1;
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (z, cache) = layer.forward(&h, graph)?;
            if l == last {
                steps.push((cache, None));
                h = z;
            } else {
                let (dropped, mask) = dropout(&relu(&z), keep, rng, training)?;
                steps.push((cache, Some((z, mask))));
                h = dropped;
            }
        }
        Ok((h, Trace { steps }))
    }

    /// Logits for every node. With `training = false` dropout is off and the
    /// result does not depend on `rng`.
    pub fn forward(&self, graph: &PreparedGraph, x: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        self.run(graph, x, training, rng).map(|(logits, _)| logits)
    }

    /// Training-mode forward pass that records what [`Model::backward`] needs.
    pub fn forward_train(&self, graph: &PreparedGraph, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Trace)> {
        self.run(graph, x, true, rng)
    }

    /// Accumulates parameter gradients given `dLoss/dLogits`.
    pub fn backward(&mut self, graph: &PreparedGraph, trace: &Trace, d_logits: &Tensor) -> Result<()> {
        let mut d = d_logits.clone();
        for (l, (layer, (cache, act))) in self.layers.iter_mut().zip(&trace.steps).enumerate().rev() {
            if let Some((pre, mask)) = act {
                d = relu_backward(pre, &mask.backward(&d))?;
            }
            match layer.backward(cache, graph, &d, l > 0)? {
                Some(next) => d = next,
                None => break,
            }
        }
        Ok(())
    }
}

/// Convenience forward pass over a dataset's own graph and features.
pub fn forward(model: &Model, dataset: &Dataset, training: bool, rng: &mut Rng) -> Result<Tensor> {
    let graph = PreparedGraph::new(&dataset.graph);
    model.forward(&graph, dataset.features()?, training, rng)
}
