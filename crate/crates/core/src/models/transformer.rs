//! Edge-masked multi-head dot-product attention with a learned skip
//! transform.
//!
//! For head `k` with width `d = out_dim / heads` and node `i`:
//!
//! ```text
//! α_ij  = softmax_{j ∈ N(i) ∪ {i}} ( (H W_Q)_i,k · (H W_K)_j,k / sqrt(d) )
//! out_i = concat_k Σ_j α_ij (H W_V)_j,k  +  (H W_S)_i  +  b
//! ```
//!
//! Attention only sees 1-hop neighbourhoods; there is no global attention,
//! no positional encoding and no layer norm.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ops::{add_row_bias, bias_backward, matmul, matmul_nt, matmul_tn, softmax_in_place};
use crate::tensor::{Parameter, Tensor};

#[derive(Clone, Debug)]
pub struct GraphTransformerLayer {
    pub w_query: Parameter,
    pub w_key: Parameter,
    pub w_value: Parameter,
    pub w_skip: Parameter,
    pub bias: Parameter,
    heads: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    input: Tensor,
    query: Tensor,
    key: Tensor,
    value: Tensor,
    /// Attention weights, laid out `[head][closed-neighbourhood entry]`.
    alpha: Vec<f64>,
    entries: usize,
}

impl AttentionCache {
    /// Attention weights of node `i` under `head`, over `N(i) ∪ {i}` in
    /// increasing node order.
    pub fn attention(&self, g: &Graph, i: usize, head: usize) -> &[f64] {
        let base = head * self.entries;
        &self.alpha[base + g.closed_offset(i)..base + g.closed_offset(i + 1)]
    }
}

impl GraphTransformerLayer {
    pub fn new(
        w_query: Parameter,
        w_key: Parameter,
        w_value: Parameter,
        w_skip: Parameter,
        bias: Parameter,
        heads: usize,
    ) -> Result<Self> {
        let shape = w_query.shape();
        let (_, out_dim) = shape;
        if heads == 0 || out_dim % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "output width {out_dim} not divisible by {heads} heads"
            )));
        }
        if w_key.shape() != shape || w_value.shape() != shape || w_skip.shape() != shape {
            return Err(Error::shape(
                "graph_transformer_layer",
                format!(
                    "W_Q {:?}, W_K {:?}, W_V {:?}, W_S {:?}",
                    shape,
                    w_key.shape(),
                    w_value.shape(),
                    w_skip.shape()
                ),
            ));
        }
        if bias.shape() != (1, out_dim) {
            return Err(Error::shape(
                "graph_transformer_layer",
                format!("bias {:?} for width {out_dim}", bias.shape()),
            ));
        }
        Ok(Self {
            w_query,
            w_key,
            w_value,
            w_skip,
            bias,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn out_dim(&self) -> usize {
        self.w_query.shape().1
    }

    fn head_dim(&self) -> usize {
        self.out_dim() / self.heads
    }

    pub fn forward(&self, h: &Tensor, g: &Graph) -> Result<(Tensor, AttentionCache)> {
        let n = g.num_nodes();
        if h.rows() != n || h.cols() != self.w_query.shape().0 {
            return Err(Error::shape(
                "graph_transformer_layer",
                format!("input {:?}, weights {:?}, {n} nodes", h.shape(), self.w_query.shape()),
            ));
        }
        let query = matmul(h, &self.w_query.value)?;
        let key = matmul(h, &self.w_key.value)?;
        let value = matmul(h, &self.w_value.value)?;
        let mut out = matmul(h, &self.w_skip.value)?;
        add_row_bias(&mut out, &self.bias.value)?;

        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let entries = g.nnz() + n;
        let mut alpha = vec![0.0; entries * self.heads];
        let mut nbrs = Vec::new();
        let mut scores = Vec::new();
        for i in 0..n {
            nbrs.clear();
            nbrs.extend(g.closed_neighborhood(i));
            let base = g.closed_offset(i);
            for head in 0..self.heads {
                let cols = head * dh..(head + 1) * dh;
                let qi = &query.row(i)[cols.clone()];
                scores.clear();
                scores.extend(nbrs.iter().map(|&j| {
                    let kj = &key.row(j)[cols.clone()];
                    qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale
                }));
                softmax_in_place(&mut scores);
                let out_i = &mut out.row_mut(i)[cols.clone()];
                for (&j, &a) in nbrs.iter().zip(&scores) {
                    for (o, v) in out_i.iter_mut().zip(&value.row(j)[cols.clone()]) {
                        *o += a * v;
                    }
                }
                let start = head * entries + base;
                alpha[start..start + nbrs.len()].copy_from_slice(&scores);
            }
        }
        Ok((
            out,
            AttentionCache {
                input: h.clone(),
                query,
                key,
                value,
                alpha,
                entries,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &AttentionCache,
        g: &Graph,
        d_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let n = g.num_nodes();
        let width = self.out_dim();
        if d_out.shape() != (n, width) {
            return Err(Error::shape(
                "graph_transformer_layer backward",
                format!("d_out {:?}, expected ({n}, {width})", d_out.shape()),
            ));
        }
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut d_query = Tensor::zeros(n, width);
        let mut d_key = Tensor::zeros(n, width);
        let mut d_value = Tensor::zeros(n, width);
        let mut d_alpha = Vec::new();
        let mut nbrs = Vec::new();

        for i in 0..n {
            let base = g.closed_offset(i);
            let len = g.closed_offset(i + 1) - base;
            nbrs.clear();
            nbrs.extend(g.closed_neighborhood(i));
            for head in 0..self.heads {
                let cols = head * dh..(head + 1) * dh;
                let alpha = &cache.alpha[head * cache.entries + base..][..len];
                let go = &d_out.row(i)[cols.clone()];
                d_alpha.clear();
                for (&j, &a) in nbrs.iter().zip(alpha) {
                    let vj = &cache.value.row(j)[cols.clone()];
                    d_alpha.push(go.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>());
                    for (dv, &x) in d_value.row_mut(j)[cols.clone()].iter_mut().zip(go) {
                        *dv += a * x;
                    }
                }
                let inner: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
                for (e, &j) in nbrs.iter().enumerate() {
                    let ds = alpha[e] * (d_alpha[e] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.key.row(j)[cols.clone()];
                    for (dq, &k) in d_query.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *dq += ds * k;
                    }
                    let qi = &cache.query.row(i)[cols.clone()];
                    for (dk, &q) in d_key.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *dk += ds * q;
                    }
                }
            }
        }

        let h = &cache.input;
        self.w_query.accumulate(&matmul_tn(h, &d_query)?)?;
        self.w_key.accumulate(&matmul_tn(h, &d_key)?)?;
        self.w_value.accumulate(&matmul_tn(h, &d_value)?)?;
        self.w_skip.accumulate(&matmul_tn(h, d_out)?)?;
        self.bias.accumulate(&bias_backward(d_out))?;

        if !need_input_grad {
            return Ok(None);
        }
        let mut dh_in = matmul_nt(d_out, &self.w_skip.value)?;
        dh_in.add_assign(&matmul_nt(&d_query, &self.w_query.value)?)?;
        dh_in.add_assign(&matmul_nt(&d_key, &self.w_key.value)?)?;
        dh_in.add_assign(&matmul_nt(&d_value, &self.w_value.value)?)?;
        Ok(Some(dh_in))
    }
}

/// Stateless form of the layer forward pass.
pub fn graph_transformer_layer(h: &Tensor, g: &Graph, layer: &GraphTransformerLayer) -> Result<Tensor> {
    layer.forward(h, g).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn layer(in_dim: usize, out_dim: usize, heads: usize, seed: u64) -> GraphTransformerLayer {
        let mut rng = Rng::new(seed);
        let mut p = |name: &str| Parameter::new(name, random(in_dim, out_dim, &mut rng));
        let (q, k, v, s) = (p("q"), p("k"), p("v"), p("s"));
        let b = Parameter::new("b", random(1, out_dim, &mut rng));
        GraphTransformerLayer::new(q, k, v, s, b, heads).unwrap()
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let l = layer(3, 4, 2, 1);
        let mut rng = Rng::new(2);
        let h = random(3, 3, &mut rng);
        let (out, cache) = l.forward(&h, &g).unwrap();
        for head in 0..2 {
            assert_eq!(cache.attention(&g, 2, head), &[1.0]);
        }
        let v = matmul(&h, &l.w_value.value).unwrap();
        let s = matmul(&h, &l.w_skip.value).unwrap();
        for c in 0..4 {
            let expect = v.get(2, c) + s.get(2, c) + l.bias.value.get(0, c);
            assert!((out.get(2, c) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_features_give_uniform_attention() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let l = layer(2, 4, 2, 3);
        let h = Tensor::from_fn(4, 2, |_, c| [0.3, -1.2][c]);
        let (_, cache) = l.forward(&h, &g).unwrap();
        for head in 0..2 {
            for &a in cache.attention(&g, 0, head) {
                assert!((a - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = Rng::new(9);
        let mut edges = Vec::new();
        for i in 0..10 {
            for j in i + 1..10 {
                if rng.bernoulli(0.3) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::from_edges(10, &edges).unwrap();
        let l = layer(5, 8, 4, 4);
        let h = random(10, 5, &mut rng);
        let (_, cache) = l.forward(&h, &g).unwrap();
        for i in 0..10 {
            for head in 0..4 {
                let a = cache.attention(&g, i, head);
                assert_eq!(a.len(), g.degree(i) + 1);
                assert!(a.iter().all(|&x| x >= 0.0));
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = Rng::new(0);
        let mut p = |n: &str| Parameter::new(n, random(2, 6, &mut rng));
        let (q, k, v, s) = (p("q"), p("k"), p("v"), p("s"));
        let b = Parameter::new("b", Tensor::zeros(1, 6));
        assert!(GraphTransformerLayer::new(q, k, v, s, b, 4).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = Graph::empty(3);
        let l = layer(3, 4, 2, 1);
        assert!(l.forward(&Tensor::zeros(3, 2), &g).is_err());
        assert!(l.forward(&Tensor::zeros(2, 3), &g).is_err());
    }
}
