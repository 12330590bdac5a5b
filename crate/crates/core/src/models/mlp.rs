use crate::error::{Error, Result};
use crate::ops::{add_row_bias, bias_backward, matmul, matmul_nt, matmul_tn};
use crate::tensor::{Parameter, Tensor};

/// Dense layer `H W + b`; the graph plays no part.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Debug)]
pub struct LinearCache {
    input: Tensor,
}

impl LinearLayer {
    pub fn new(weight: Parameter, bias: Parameter) -> Result<Self> {
        if bias.shape() != (1, weight.shape().1) {
            return Err(Error::shape(
                "mlp_layer",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, LinearCache)> {
        let out = mlp_layer(h, &self.weight, &self.bias)?;
        Ok((out, LinearCache { input: h.clone() }))
    }

    pub fn backward(&mut self, cache: &LinearCache, d_out: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>> {
        self.weight.accumulate(&matmul_tn(&cache.input, d_out)?)?;
        self.bias.accumulate(&bias_backward(d_out))?;
        if need_input_grad {
            Ok(Some(matmul_nt(d_out, &self.weight.value)?))
        } else {
            Ok(None)
        }
    }
}

pub fn mlp_layer(h: &Tensor, w: &Parameter, b: &Parameter) -> Result<Tensor> {
    let mut out = matmul(h, &w.value)?;
    add_row_bias(&mut out, &b.value)?;
    Ok(out)
}
