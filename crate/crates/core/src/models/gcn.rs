use crate::error::{Error, Result};
use crate::graph::{spmm, NormalizedAdjacency};
use crate::ops::{add_row_bias, bias_backward, matmul, matmul_nt, matmul_tn};
use crate::tensor::{Parameter, Tensor};

/// Graph convolution `Â (H W) + b`.
///
/// Aggregation and the linear update commute, so the transform runs first;
/// it is the cheaper order whenever the input is wider than the output.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Debug)]
pub struct GcnCache {
    input: Tensor,
}

impl GcnLayer {
    pub fn new(weight: Parameter, bias: Parameter) -> Result<Self> {
        if bias.shape() != (1, weight.shape().1) {
            return Err(Error::shape(
                "gcn_layer",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, h: &Tensor, adj: &NormalizedAdjacency) -> Result<(Tensor, GcnCache)> {
        let out = gcn_layer(h, adj, &self.weight, &self.bias)?;
        Ok((out, GcnCache { input: h.clone() }))
    }

    /// Accumulates parameter gradients; returns `dH` when asked for it.
    pub fn backward(
        &mut self,
        cache: &GcnCache,
        adj: &NormalizedAdjacency,
        d_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        // Â is symmetric, so Âᵀ dOut = Â dOut
        let d_support = spmm(adj, d_out)?;
        self.weight.accumulate(&matmul_tn(&cache.input, &d_support)?)?;
        self.bias.accumulate(&bias_backward(d_out))?;
        if need_input_grad {
            Ok(Some(matmul_nt(&d_support, &self.weight.value)?))
        } else {
            Ok(None)
        }
    }
}

/// Stateless form of the layer forward pass.
pub fn gcn_layer(h: &Tensor, adj: &NormalizedAdjacency, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    if h.rows() != adj.num_nodes() || h.cols() != w.shape().0 {
        return Err(Error::shape(
            "gcn_layer",
            format!(
                "input {:?}, weight {:?}, {} nodes",
                h.shape(),
                w.shape(),
                adj.num_nodes()
            ),
        ));
    }
    let support = matmul(h, &w.value)?;
    let mut out = spmm(adj, &support)?;
    add_row_bias(&mut out, &b.value)?;
    Ok(out)
}
