//! Shared neural building blocks: affine layers, layer normalization
//! parameters, and the multi-head attention kernel used by both the
//! vision encoder and the decoder.

use crate::error::{Error, Result};
use crate::ledger::{MulCategory, MulLedger};
use crate::rng::Rng;
use crate::tensor::{concat_cols, Tensor};

/// Affine map stored as weight [d_in, d_out] plus bias [d_out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn seeded(d_in: usize, d_out: usize, std: f64, rng: &mut Rng) -> Linear {
        Linear {
            weight: Tensor::seeded_normal(vec![d_in, d_out], std, rng),
            bias: Tensor::zeros(vec![d_out]),
        }
    }

    pub fn trainable(self) -> Linear {
        Linear {
            weight: self.weight.trainable(),
            bias: self.bias.trainable(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor, category: MulCategory, ledger: &MulLedger) -> Result<Tensor> {
        x.matmul(&self.weight, category, ledger)?.add_bias(&self.bias)
    }
}

/// Gain/bias pair for layer normalization over a fixed width.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gain: Tensor::ones(vec![dim]),
            bias: Tensor::zeros(vec![dim]),
            eps: 1e-5,
        }
    }

    pub fn trainable(self) -> LayerNorm {
        LayerNorm {
            gain: self.gain.trainable(),
            bias: self.bias.trainable(),
            eps: self.eps,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }
}

/// Attention output plus per-head probability copies for tracing.
pub struct AttentionOutput {
    pub hidden: Tensor,
    /// One row-major [n_q, n_kv] matrix per head.
    pub probs_per_head: Vec<Vec<f64>>,
}

/// Multi-head scaled dot-product attention over pre-projected q/k/v of a
/// common width `d`, split column-wise into `heads` heads. With `causal`
/// set, position i attends only to keys at positions <= i (requires
/// n_q == n_kv). Score products charge `attention_scores`; probability-
/// value products charge `attention_values`.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    causal: bool,
    ledger: &MulLedger,
) -> Result<AttentionOutput> {
    let (n_q, d) = match q.shape().as_slice() {
        [n, d] => (*n, *d),
        s => {
            return Err(Error::ShapeMismatch {
                op: "attention",
                left: s.to_vec(),
                right: vec![],
            })
        }
    };
    let n_kv = k.shape()[0];
    if k.shape() != vec![n_kv, d] || v.shape() != vec![n_kv, d] {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: k.shape(),
            right: v.shape(),
        });
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "width {d} not divisible into {heads} heads"
        )));
    }
    if causal && n_q != n_kv {
        return Err(Error::Contract(
            "causal attention requires square score matrix".into(),
        ));
    }

    let head_dim = d / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mask = causal.then(|| {
        let mut data = vec![0.0; n_q * n_kv];
        for i in 0..n_q {
            for j in (i + 1)..n_kv {
                data[i * n_kv + j] = -1e30;
            }
        }
        Tensor::from_vec(vec![n_q, n_kv], data).expect("mask shape")
    });

    let mut contexts = Vec::with_capacity(heads);
    let mut probs_per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let lo = h * head_dim;
        let hi = lo + head_dim;
        let q_h = q.slice_cols(lo, hi)?;
        let k_h = k.slice_cols(lo, hi)?;
        let v_h = v.slice_cols(lo, hi)?;
        let mut scores = q_h
            .matmul(&k_h.transpose()?, MulCategory::AttentionScores, ledger)?
            .scale(scale);
        if let Some(mask) = &mask {
            scores = scores.add(mask)?;
        }
        let probs = scores.softmax_rows()?;
        probs_per_head.push(probs.data());
        contexts.push(probs.matmul(&v_h, MulCategory::AttentionValues, ledger)?);
    }

    Ok(AttentionOutput {
        hidden: concat_cols(&contexts)?,
        probs_per_head,
    })
}
