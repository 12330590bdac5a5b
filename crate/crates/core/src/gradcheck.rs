//! Finite-difference verification of every hand-written backward pass.
//!
//! Each op is reduced to the scalar `L = Σ out ⊙ R` for a random `R`, so the
//! analytic gradient is the op's backward applied to `R`. The numeric
//! gradient uses central differences with step [`STEP`]; agreement is the
//! norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖, 1e-12)`.

use std::fmt;
use std::time::{Duration, Instant};

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, spmm, Graph};
use crate::models::gcn::{gcn_layer, GcnLayer};
use crate::models::mlp::{mlp_layer, LinearLayer};
use crate::models::transformer::GraphTransformerLayer;
use crate::models::{Arch, Model, ModelSpec, PreparedGraph};
use crate::ops::{
    add_row_bias, bias_backward, cross_entropy, dropout, matmul, matmul_backward, relu, relu_backward,
    row_softmax, row_softmax_backward, scaled_dot_attention, scaled_dot_attention_backward,
};
use crate::rng::Rng;
use crate::tensor::{Parameter, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 5;

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-12)
}

/// Compares `backward(inputs, R)` against central differences of
/// `Σ forward(inputs) ⊙ R`. Returns the largest relative error over inputs.
pub fn check_op(
    inputs: &[Tensor],
    forward: impl Fn(&[Tensor]) -> Result<Tensor>,
    backward: impl Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
    rng: &mut Rng,
) -> Result<f64> {
    let out = forward(inputs)?;
    let r = random(out.rows(), out.cols(), rng);
    let analytic = backward(inputs, &r)?;
    if analytic.len() != inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "backward returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let objective = |xs: &[Tensor]| -> Result<f64> { Ok(forward(xs)?.dot(&r)) };

    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[t].shape() {
            return Err(Error::shape(
                "gradcheck",
                format!("gradient {:?} for input {:?}", grad.shape(), inputs[t].shape()),
            ));
        }
        let mut numeric = vec![0.0; grad.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[t].data()[k];
            xs[t].data_mut()[k] = orig + STEP;
            let plus = objective(&xs)?;
            xs[t].data_mut()[k] = orig - STEP;
            let minus = objective(&xs)?;
            xs[t].data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(grad.data(), &numeric));
    }
    Ok(worst)
}

fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.normal())
}

/// Normal entries pushed at least 0.1 away from zero, so ReLU kinks stay
/// outside the difference stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let v = rng.normal();
        v + 0.1 * v.signum()
    })
}

fn random_graph(n: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("generated edges are in range")
}

fn param(name: &str, t: &Tensor) -> Parameter {
    Parameter::new(name, t.clone())
}

fn case_matmul(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(4, 3, rng), random(3, 5, rng)];
    check_op(
        &inputs,
        |x| matmul(&x[0], &x[1]),
        |x, d| {
            let (da, db) = matmul_backward(&x[0], &x[1], d)?;
            Ok(vec![da, db])
        },
        rng,
    )
}

fn case_add_bias(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(5, 3, rng), random(1, 3, rng)];
    check_op(
        &inputs,
        |x| {
            let mut out = x[0].clone();
            add_row_bias(&mut out, &x[1])?;
            Ok(out)
        },
        |_, d| Ok(vec![d.clone(), bias_backward(d)]),
        rng,
    )
}

fn case_relu(rng: &mut Rng) -> Result<f64> {
    let inputs = [away_from_zero(4, 5, rng)];
    check_op(&inputs, |x| Ok(relu(&x[0])), |x, d| Ok(vec![relu_backward(&x[0], d)?]), rng)
}

fn case_dropout(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(6, 4, rng)];
    let (_, mask) = dropout(&inputs[0], 0.6, rng, true)?;
    check_op(&inputs, |x| Ok(mask.apply(&x[0])), |_, d| Ok(vec![mask.backward(d)]), rng)
}

fn case_row_softmax(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(4, 5, rng)];
    check_op(
        &inputs,
        |x| Ok(row_softmax(&x[0])),
        |x, d| Ok(vec![row_softmax_backward(&row_softmax(&x[0]), d)?]),
        rng,
    )
}

fn case_attention(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(4, 3, rng), random(5, 3, rng), random(5, 2, rng)];
    check_op(
        &inputs,
        |x| scaled_dot_attention(&x[0], &x[1], &x[2]),
        |x, d| {
            let (dq, dk, dv) = scaled_dot_attention_backward(&x[0], &x[1], &x[2], d)?;
            Ok(vec![dq, dk, dv])
        },
        rng,
    )
}

fn case_cross_entropy(rng: &mut Rng) -> Result<f64> {
    let n = 6;
    let labels = LabelVector::new((0..n).map(|_| rng.below(3)).collect(), 3)?;
    let mask = [0, 2, 3, 5];
    let inputs = [random(n, 3, rng)];
    check_op(
        &inputs,
        |x| Ok(Tensor::filled(1, 1, cross_entropy(&x[0], &labels, &mask)?.0)),
        |x, d| {
            let (_, g) = cross_entropy(&x[0], &labels, &mask)?;
            Ok(vec![g.map(|v| v * d.get(0, 0))])
        },
        rng,
    )
}

fn case_spmm(rng: &mut Rng) -> Result<f64> {
    let g = random_graph(7, 0.35, rng);
    let adj = normalize_adjacency(&g, true);
    let inputs = [random(7, 3, rng)];
    // Â is symmetric
    check_op(&inputs, |x| spmm(&adj, &x[0]), |_, d| Ok(vec![spmm(&adj, d)?]), rng)
}

fn case_gcn_layer(rng: &mut Rng) -> Result<f64> {
    let g = random_graph(7, 0.35, rng);
    let adj = normalize_adjacency(&g, true);
    let inputs = [random(7, 4, rng), random(4, 3, rng), random(1, 3, rng)];
    check_op(
        &inputs,
        |x| gcn_layer(&x[0], &adj, &param("w", &x[1]), &param("b", &x[2])),
        |x, d| {
            let mut layer = GcnLayer::new(param("w", &x[1]), param("b", &x[2]))?;
            let (_, cache) = layer.forward(&x[0], &adj)?;
            let dh = layer.backward(&cache, &adj, d, true)?.expect("requested");
            Ok(vec![dh, layer.weight.grad, layer.bias.grad])
        },
        rng,
    )
}

fn gt_from(x: &[Tensor], heads: usize) -> Result<GraphTransformerLayer> {
    GraphTransformerLayer::new(
        param("q", &x[1]),
        param("k", &x[2]),
        param("v", &x[3]),
        param("s", &x[4]),
        param("b", &x[5]),
        heads,
    )
}

fn case_graph_transformer_layer(rng: &mut Rng) -> Result<f64> {
    let g = random_graph(7, 0.35, rng);
    let inputs = [
        random(7, 3, rng),
        random(3, 4, rng),
        random(3, 4, rng),
        random(3, 4, rng),
        random(3, 4, rng),
        random(1, 4, rng),
    ];
    check_op(
        &inputs,
        |x| Ok(gt_from(x, 2)?.forward(&x[0], &g)?.0),
        |x, d| {
            let mut layer = gt_from(x, 2)?;
            let (_, cache) = layer.forward(&x[0], &g)?;
            let dh = layer.backward(&cache, &g, d, true)?.expect("requested");
            Ok(vec![
                dh,
                layer.w_query.grad,
                layer.w_key.grad,
                layer.w_value.grad,
                layer.w_skip.grad,
                layer.bias.grad,
            ])
        },
        rng,
    )
}

fn case_mlp_layer(rng: &mut Rng) -> Result<f64> {
    let inputs = [random(5, 4, rng), random(4, 3, rng), random(1, 3, rng)];
    check_op(
        &inputs,
        |x| mlp_layer(&x[0], &param("w", &x[1]), &param("b", &x[2])),
        |x, d| {
            let mut layer = LinearLayer::new(param("w", &x[1]), param("b", &x[2]))?;
            let (_, cache) = layer.forward(&x[0])?;
            let dh = layer.backward(&cache, d, true)?.expect("requested");
            Ok(vec![dh, layer.weight.grad, layer.bias.grad])
        },
        rng,
    )
}

/// End-to-end: cross-entropy of a full model with respect to every
/// parameter. Dropout is off so the forward pass is deterministic.
fn case_model(arch: Arch, rng: &mut Rng) -> Result<f64> {
    let n = 8;
    let g = random_graph(n, 0.35, rng);
    let pg = PreparedGraph::new(&g);
    let x = random(n, 4, rng);
    let labels = LabelVector::new((0..n).map(|i| i % 3).collect(), 3)?;
    let mask = [0, 1, 2, 4, 5, 7];
    let spec = ModelSpec {
        arch,
        layers: 3,
        hidden: 4,
        heads: 2,
        dropout: 0.0,
        in_dim: 4,
        num_classes: 3,
    };
    let base = Model::init(spec, rng.next_u64())?;
    let inputs = base.snapshot();
    let loss = |params: &[Tensor]| -> Result<f64> {
        let mut m = base.clone();
        m.restore(params)?;
        let logits = m.forward(&pg, &x, false, &mut Rng::new(0))?;
        Ok(cross_entropy(&logits, &labels, &mask)?.0)
    };
    check_op(
        &inputs,
        |p| Ok(Tensor::filled(1, 1, loss(p)?)),
        |p, d| {
            let mut m = base.clone();
            m.restore(p)?;
            m.zero_grad();
            let (logits, trace) = m.forward_train(&pg, &x, &mut Rng::new(0))?;
            let (_, dl) = cross_entropy(&logits, &labels, &mask)?;
            m.backward(&pg, &trace, &dl)?;
            Ok(m.parameters().iter().map(|q| q.grad.map(|v| v * d.get(0, 0))).collect())
        },
        rng,
    )
}

type Case = fn(&mut Rng) -> Result<f64>;

/// Every checked op, in report order.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", case_matmul as Case),
        ("add_bias", case_add_bias),
        ("relu", case_relu),
        ("dropout", case_dropout),
        ("row_softmax", case_row_softmax),
        ("scaled_dot_attention", case_attention),
        ("cross_entropy", case_cross_entropy),
        ("spmm", case_spmm),
        ("gcn_layer", case_gcn_layer),
        ("graph_transformer_layer", case_graph_transformer_layer),
        ("mlp_layer", case_mlp_layer),
        ("model_gcn", |r| case_model(Arch::Gcn, r)),
        ("model_graph_transformer", |r| case_model(Arch::GraphTransformer, r)),
        ("model_mlp", |r| case_model(Arch::Mlp, r)),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub ops: Vec<OpReport>,
    pub elapsed: Duration,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(OpReport::passed)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.ops {
            writeln!(
                f,
                "{:<26} seeds={} max_rel_err={:.3e} {}",
                r.op,
                r.seeds,
                r.max_rel_error,
                if r.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} ops, tolerance {TOLERANCE:e}, {:.2}s: {}",
            self.ops.len(),
            self.elapsed.as_secs_f64(),
            if self.passed() { "all passed" } else { "FAILED" }
        )
    }
}

/// Runs every case under seeds `0..seeds`.
pub fn run_suite(seeds: u64) -> Result<GradReport> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("gradcheck needs at least one seed".into()));
    }
    let start = Instant::now();
    let mut ops = Vec::new();
    for (op, case) in cases() {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let err = case(&mut Rng::stream(seed, 0x6C))?;
            // NaN must not hide behind max()
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        ops.push(OpReport {
            op,
            seeds,
            max_rel_error: worst,
        });
    }
    Ok(GradReport {
        ops,
        elapsed: start.elapsed(),
    })
}
