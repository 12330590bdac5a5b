//! Layer primitives with explicit forward and backward passes.
//!
//! Every backward function takes the upstream gradient `d_out` (same shape as
//! the forward output) and returns gradients with respect to the forward
//! inputs. The finite-difference checks in [`crate::gradcheck`] cover each
//! pair.

use rayon::prelude::*;

use crate::dataset::LabelVector;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

// Below this many multiply-adds the rayon split costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 18;

fn for_each_row(out: &mut Tensor, work: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    let cols = out.cols();
    if cols == 0 {
        return;
    }
    if work >= PAR_THRESHOLD {
        out.data_mut()
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        out.data_mut()
            .chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// `a · b`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{:?} · {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(a.rows(), b.cols());
    let work = a.rows() * a.cols() * b.cols();
    for_each_row(&mut out, work, |i, row| {
        for (k, &x) in a.row(i).iter().enumerate() {
            // feature rows from bag-of-words encoders are mostly zero
            if x == 0.0 {
                continue;
            }
            for (o, y) in row.iter_mut().zip(b.row(k)) {
                *o += x * y;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "matmul_nt",
            format!("{:?} · {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(a.rows(), b.rows());
    let work = a.rows() * a.cols() * b.rows();
    for_each_row(&mut out, work, |i, row| {
        let ai = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            *o = ai.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    });
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "matmul_tn",
            format!("{:?}ᵀ · {:?}", a.shape(), b.shape()),
        ));
    }
    let mut out = Tensor::zeros(a.cols(), b.cols());
    let work = a.rows() * a.cols() * b.cols();
    for_each_row(&mut out, work, |k, row| {
        for i in 0..a.rows() {
            let x = a.get(i, k);
            if x == 0.0 {
                continue;
            }
            for (o, y) in row.iter_mut().zip(b.row(i)) {
                *o += x * y;
            }
        }
    });
    Ok(out)
}

/// Returns `(dA, dB) = (dOut · Bᵀ, Aᵀ · dOut)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, d_out: &Tensor) -> Result<(Tensor, Tensor)> {
    if d_out.shape() != (a.rows(), b.cols()) {
        return Err(Error::shape(
            "matmul_backward",
            format!("d_out {:?}, expected ({}, {})", d_out.shape(), a.rows(), b.cols()),
        ));
    }
    Ok((matmul_nt(d_out, b)?, matmul_tn(a, d_out)?))
}

/// Adds the `1 × cols` row vector `bias` to every row of `x`.
pub fn add_row_bias(x: &mut Tensor, bias: &Tensor) -> Result<()> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return Err(Error::shape(
            "add_row_bias",
            format!("bias {:?} for input {:?}", bias.shape(), x.shape()),
        ));
    }
    let b = bias.row(0);
    for i in 0..x.rows() {
        for (v, bb) in x.row_mut(i).iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(())
}

/// Gradient of a broadcast row bias: column sums of `d_out`.
pub fn bias_backward(d_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(1, d_out.cols());
    for i in 0..d_out.rows() {
        for (s, d) in g.row_mut(0).iter_mut().zip(d_out.row(i)) {
            *s += d;
        }
    }
    g
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `d_out` where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    x.check_same_shape("relu_backward", d_out)?;
    let data = x
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect();
    Tensor::from_vec(x.rows(), x.cols(), data)
}

/// Inverted-dropout mask. `None` means identity (evaluation or keep_prob = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    keep_prob: f64,
    mask: Option<Vec<bool>>,
}

impl DropoutMask {
    pub fn identity(keep_prob: f64) -> Self {
        Self {
            keep_prob,
            mask: None,
        }
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.keep_prob
    }

    pub fn is_identity(&self) -> bool {
        self.mask.is_none()
    }

    pub fn kept(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        match &self.mask {
            None => x.clone(),
            Some(m) => {
                let s = self.scale();
                let data = x
                    .data()
                    .iter()
                    .zip(m)
                    .map(|(&v, &keep)| if keep { v * s } else { 0.0 })
                    .collect();
                Tensor::from_vec(x.rows(), x.cols(), data).expect("mask matches input")
            }
        }
    }

    /// Same gating and scaling as the forward pass.
    pub fn backward(&self, d_out: &Tensor) -> Tensor {
        self.apply(d_out)
    }
}

/// Inverted dropout: in training, zero each entry with probability
/// `1 - keep_prob` and scale survivors by `1 / keep_prob`; in evaluation,
/// the identity.
pub fn dropout(x: &Tensor, keep_prob: f64, rng: &mut Rng, training: bool) -> Result<(Tensor, DropoutMask)> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep_prob must be in (0, 1], got {keep_prob}"
        )));
    }
    if !training || keep_prob == 1.0 {
        return Ok((x.clone(), DropoutMask::identity(keep_prob)));
    }
    let mask: Vec<bool> = (0..x.len()).map(|_| rng.bernoulli(keep_prob)).collect();
    let m = DropoutMask {
        keep_prob,
        mask: Some(mask),
    };
    Ok((m.apply(x), m))
}

/// Softmax along each row, with the row maximum subtracted first.
pub fn row_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of [`row_softmax`] given its output `y`:
/// `dx = y ⊙ (d_out - rowsum(d_out ⊙ y))`.
pub fn row_softmax_backward(y: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    y.check_same_shape("row_softmax_backward", d_out)?;
    let mut dx = Tensor::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let (yr, dr) = (y.row(i), d_out.row(i));
        let inner: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for ((o, &a), &b) in dx.row_mut(i).iter_mut().zip(yr).zip(dr) {
            *o = a * (b - inner);
        }
    }
    Ok(dx)
}

fn check_attention_shapes(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    if q.cols() != k.cols() || k.rows() != v.rows() || k.rows() == 0 {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    Ok(())
}

/// Dense `softmax(Q Kᵀ / sqrt(d_k)) V`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    check_attention_shapes(q, k, v)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scores = matmul_nt(q, k)?.map(|s| s * scale);
    matmul(&row_softmax(&scores), v)
}

/// Gradients `(dQ, dK, dV)` of [`scaled_dot_attention`].
pub fn scaled_dot_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_attention_shapes(q, k, v)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let probs = row_softmax(&matmul_nt(q, k)?.map(|s| s * scale));
    let d_probs = matmul_nt(d_out, v)?;
    let dv = matmul_tn(&probs, d_out)?;
    let d_scores = row_softmax_backward(&probs, &d_probs)?.map(|g| g * scale);
    let dq = matmul(&d_scores, k)?;
    let dk = matmul_tn(&d_scores, q)?;
    Ok((dq, dk, dv))
}

/// Mean negative log-softmax of the true class over the nodes in `mask`,
/// and its gradient with respect to `logits` (zero outside the mask).
pub fn cross_entropy(logits: &Tensor, labels: &LabelVector, mask: &[usize]) -> Result<(f64, Tensor)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("cross_entropy over an empty mask".into()));
    }
    if logits.cols() != labels.num_classes() || logits.rows() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!(
                "logits {:?} for {} labels over {} classes",
                logits.shape(),
                labels.len(),
                labels.num_classes()
            ),
        ));
    }
    let inv = 1.0 / mask.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.rows(), logits.cols());
    for &i in mask {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let y = labels.get(i);
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (c, (gc, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - log_z).exp();
            *gc += (p - if c == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Similarity used inside [`infonce`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Similarity {
    Dot,
    /// Cosine similarity; a zero vector has similarity 0 to everything.
    #[default]
    Cosine,
}

impl Similarity {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        match self {
            Similarity::Dot => dot,
            Similarity::Cosine => {
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na * nb)
                }
            }
        }
    }
}

/// Contrastive InfoNCE loss averaged over anchors.
///
/// `anchor` and `positive` are `m × d`; `negatives[a]` holds the negative
/// rows for anchor `a`. Per anchor the loss is
/// `-log(e^{s⁺/τ} / (e^{s⁺/τ} + Σ e^{s⁻/τ}))`, evaluated with log-sum-exp.
pub fn infonce(
    anchor: &Tensor,
    positive: &Tensor,
    negatives: &[Tensor],
    tau: f64,
    sim: Similarity,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if anchor.shape() != positive.shape() || negatives.len() != anchor.rows() || anchor.rows() == 0 {
        return Err(Error::shape(
            "infonce",
            format!(
                "anchor {:?}, positive {:?}, {} negative sets",
                anchor.shape(),
                positive.shape(),
                negatives.len()
            ),
        ));
    }
    let mut total = 0.0;
    for (a, negs) in negatives.iter().enumerate() {
        if negs.cols() != anchor.cols() {
            return Err(Error::shape(
                "infonce",
                format!("negatives for anchor {a} have {} columns", negs.cols()),
            ));
        }
        let x = anchor.row(a);
        let pos = sim.eval(x, positive.row(a)) / tau;
        let logits: Vec<f64> = std::iter::once(pos)
            .chain((0..negs.rows()).map(|r| sim.eval(x, negs.row(r)) / tau))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - pos;
    }
    Ok(total / anchor.rows() as f64)
}
