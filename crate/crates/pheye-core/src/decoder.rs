//! Frozen causal decoder conditioned on vision tokens through dense
//! cross-attention blocks inserted before every I-th decoder layer, plus
//! the concatenation-style baseline that feeds projected vision tokens
//! through the plain decoder.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ledger::{MulCategory, MulLedger};
use crate::nn::{multi_head_attention, LayerNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{concat_rows, Tensor};
use crate::vision::{LoraConfig, VisionEncoder, VisionTokens, VitGeometry};

/// Decoder-side shape hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderGeometry {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    /// Interval I between dense cross-attention insertions; blocks sit
    /// before layers 0, I, 2I, ...
    pub cross_interval: usize,
    pub max_text_len: usize,
}

impl DecoderGeometry {
    pub fn validate(&self) -> Result<()> {
        let g = *self;
        if g.d_model == 0
            || g.layers == 0
            || g.heads == 0
            || g.vocab_size == 0
            || g.cross_interval == 0
            || g.max_text_len == 0
        {
            return Err(Error::Config(format!("geometry fields must be positive: {g:?}")));
        }
        if !g.d_model.is_multiple_of(g.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                g.d_model, g.heads
            )));
        }
        if g.cross_interval > g.layers {
            return Err(Error::Config(format!(
                "cross-attention interval {} exceeds {} decoder layers",
                g.cross_interval, g.layers
            )));
        }
        Ok(())
    }

    pub fn cross_block_count(&self) -> usize {
        self.layers.div_ceil(self.cross_interval)
    }
}

/// One frozen pre-norm decoder layer (causal self-attention + 4x GELU
/// feed-forward, both residual).
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm_attn: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm_ff: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl DecoderLayer {
    fn seeded(d: usize, rng: &mut Rng) -> DecoderLayer {
        let std = 1.0 / (d as f64).sqrt();
        DecoderLayer {
            norm_attn: LayerNorm::new(d),
            q: Linear::seeded(d, d, std, rng),
            k: Linear::seeded(d, d, std, rng),
            v: Linear::seeded(d, d, std, rng),
            o: Linear::seeded(d, d, std, rng),
            norm_ff: LayerNorm::new(d),
            fc1: Linear::seeded(d, 4 * d, std, rng),
            fc2: Linear::seeded(4 * d, d, 1.0 / (4.0 * d as f64).sqrt(), rng),
        }
    }

    fn forward(&self, hidden: &Tensor, heads: usize, ledger: &MulLedger) -> Result<Tensor> {
        let normed = self.norm_attn.forward(hidden)?;
        let q = self.q.forward(&normed, MulCategory::Projection, ledger)?;
        let k = self.k.forward(&normed, MulCategory::Projection, ledger)?;
        let v = self.v.forward(&normed, MulCategory::Projection, ledger)?;
        let attn = multi_head_attention(&q, &k, &v, heads, true, ledger)?;
        let hidden = hidden.add(&self.o.forward(&attn.hidden, MulCategory::Projection, ledger)?)?;

        let normed = self.norm_ff.forward(&hidden)?;
        let ff = self
            .fc1
            .forward(&normed, MulCategory::FeedForward, ledger)?
            .gelu();
        let ff = self.fc2.forward(&ff, MulCategory::FeedForward, ledger)?;
        hidden.add(&ff)
    }
}

/// Trainable conditioning block: cross-attention from text queries onto
/// vision keys/values (consumed at ViT width, unprojected) followed by a
/// dense feed-forward, both residual. The output maps of both sub-blocks
/// start near zero so the frozen decoder's behavior is preserved at
/// initialization.
#[derive(Debug, Clone)]
pub struct DenseCrossAttentionBlock {
    pub norm_attn: LayerNorm,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub norm_ff: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    heads: usize,
}

impl DenseCrossAttentionBlock {
    pub fn seeded(d_model: usize, d_vit: usize, heads: usize, output_std: f64, rng: &mut Rng) -> Self {
        DenseCrossAttentionBlock {
            norm_attn: LayerNorm::new(d_model).trainable(),
            w_q: Linear::seeded(d_model, d_model, 1.0 / (d_model as f64).sqrt(), rng).trainable(),
            w_k: Linear::seeded(d_vit, d_model, 1.0 / (d_vit as f64).sqrt(), rng).trainable(),
            w_v: Linear::seeded(d_vit, d_model, 1.0 / (d_vit as f64).sqrt(), rng).trainable(),
            w_o: Linear::seeded(d_model, d_model, output_std, rng).trainable(),
            norm_ff: LayerNorm::new(d_model).trainable(),
            fc1: Linear::seeded(d_model, 4 * d_model, 1.0 / (d_model as f64).sqrt(), rng).trainable(),
            fc2: Linear::seeded(4 * d_model, d_model, output_std, rng).trainable(),
            heads,
        }
    }

    /// Returns the updated hidden states and per-head attention
    /// probability copies ([n_text * n_vision], row-major).
    pub fn forward(
        &self,
        hidden: &Tensor,
        vision: &Tensor,
        ledger: &MulLedger,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let n_vision = vision.shape()[0];
        if n_vision == 0 {
            return Err(Error::Input("cross-attention over an empty vision sequence".into()));
        }
        if vision.shape()[1] != self.w_k.in_dim() {
            return Err(Error::ShapeMismatch {
                op: "cross_attend",
                left: vision.shape(),
                right: vec![n_vision, self.w_k.in_dim()],
            });
        }

        let normed = self.norm_attn.forward(hidden)?;
        let q = self.w_q.forward(&normed, MulCategory::Projection, ledger)?;
        let k = self.w_k.forward(vision, MulCategory::Projection, ledger)?;
        let v = self.w_v.forward(vision, MulCategory::Projection, ledger)?;
        // Every text position sees every vision token: no mask.
        let attn = multi_head_attention(&q, &k, &v, self.heads, false, ledger)?;
        let hidden = hidden.add(&self.w_o.forward(&attn.hidden, MulCategory::Projection, ledger)?)?;

        let normed = self.norm_ff.forward(&hidden)?;
        let ff = self
            .fc1
            .forward(&normed, MulCategory::FeedForward, ledger)?
            .gelu();
        let ff = self.fc2.forward(&ff, MulCategory::FeedForward, ledger)?;
        Ok((hidden.add(&ff)?, attn.probs_per_head))
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut params = Vec::new();
        for (name, linear) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("fc1", &self.fc1),
            ("fc2", &self.fc2),
        ] {
            params.push((format!("{prefix}.{name}.weight"), linear.weight.clone()));
            params.push((format!("{prefix}.{name}.bias"), linear.bias.clone()));
        }
        for (name, norm) in [("norm_attn", &self.norm_attn), ("norm_ff", &self.norm_ff)] {
            params.push((format!("{prefix}.{name}.gain"), norm.gain.clone()));
            params.push((format!("{prefix}.{name}.bias"), norm.bias.clone()));
        }
        params
    }
}

/// Frozen decoder stack: token/position embeddings, pre-norm layers,
/// final norm, unembedding. Seeded randomly in toy mode and never
/// trainable.
#[derive(Debug, Clone)]
pub struct FrozenDecoder {
    pub geometry: DecoderGeometry,
    pub token_embed: Tensor,
    pub pos_embed: Tensor,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
    pub unembed: Tensor,
}

impl FrozenDecoder {
    pub fn seeded(geometry: DecoderGeometry, rng: &mut Rng) -> Result<FrozenDecoder> {
        geometry.validate()?;
        let d = geometry.d_model;
        Ok(FrozenDecoder {
            geometry,
            token_embed: Tensor::seeded_normal(vec![geometry.vocab_size, d], 1.0, rng),
            pos_embed: Tensor::seeded_normal(vec![geometry.max_text_len, d], 0.5, rng),
            layers: (0..geometry.layers).map(|_| DecoderLayer::seeded(d, rng)).collect(),
            final_norm: LayerNorm::new(d),
            unembed: Tensor::seeded_normal(vec![d, geometry.vocab_size], 1.0 / (d as f64).sqrt(), rng),
        })
    }

    fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        if ids.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if ids.len() > self.geometry.max_text_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds maximum {}",
                ids.len(),
                self.geometry.max_text_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.geometry.vocab_size) {
            return Err(Error::Input(format!(
                "unknown token id {bad} (vocabulary size {})",
                self.geometry.vocab_size
            )));
        }
        let tokens = self.token_embed.gather_rows(ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        tokens.add(&self.pos_embed.gather_rows(&positions)?)
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut params = vec![
            (format!("{prefix}.token_embed"), self.token_embed.clone()),
            (format!("{prefix}.pos_embed"), self.pos_embed.clone()),
            (format!("{prefix}.unembed"), self.unembed.clone()),
            (format!("{prefix}.final_norm.gain"), self.final_norm.gain.clone()),
            (format!("{prefix}.final_norm.bias"), self.final_norm.bias.clone()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, linear) in [
                ("q", &layer.q),
                ("k", &layer.k),
                ("v", &layer.v),
                ("o", &layer.o),
                ("fc1", &layer.fc1),
                ("fc2", &layer.fc2),
            ] {
                params.push((format!("{prefix}.layer{i}.{name}.weight"), linear.weight.clone()));
                params.push((format!("{prefix}.layer{i}.{name}.bias"), linear.bias.clone()));
            }
            for (name, norm) in [("norm_attn", &layer.norm_attn), ("norm_ff", &layer.norm_ff)] {
                params.push((format!("{prefix}.layer{i}.{name}.gain"), norm.gain.clone()));
                params.push((format!("{prefix}.layer{i}.{name}.bias"), norm.bias.clone()));
            }
        }
        params
    }
}

/// Per-forward cross-attention probability capture:
/// `blocks[block][head]` is a row-major [n_text, n_vision] matrix.
#[derive(Debug, Default)]
pub struct CrossAttentionTrace {
    pub blocks: Vec<Vec<Vec<f64>>>,
}

/// Greedy generation record.
#[derive(Debug)]
pub struct GenerationOutput {
    pub prompt_len: usize,
    /// Prompt followed by the generated continuation.
    pub token_ids: Vec<usize>,
    /// Next-token logits at each generation step, [steps, vocab].
    pub logits: Tensor,
    /// `maps[block][step][head]` is the attention distribution of the
    /// emitting position over all vision tokens.
    pub cross_attention_maps: Vec<Vec<Vec<Vec<f64>>>>,
}

impl GenerationOutput {
    pub fn generated(&self) -> &[usize] {
        &self.token_ids[self.prompt_len..]
    }
}

/// The complete model: multi-patch vision encoder plus frozen decoder
/// with interleaved trainable cross-attention blocks.
#[derive(Debug, Clone)]
pub struct PheyeModel {
    pub encoder: VisionEncoder,
    pub decoder: FrozenDecoder,
    pub cross_blocks: Vec<DenseCrossAttentionBlock>,
}

impl PheyeModel {
    /// Build from seeded randomness: frozen ViT and decoder weights,
    /// trainable cross blocks with `cross_init_std` on the output maps
    /// (zero gives exact frozen-decoder behavior at initialization).
    pub fn build(
        decoder_geometry: DecoderGeometry,
        vit_geometry: VitGeometry,
        lora: LoraConfig,
        cross_init_std: f64,
        seed: u64,
    ) -> Result<PheyeModel> {
        decoder_geometry.validate()?;
        vit_geometry.validate()?;
        let mut rng = Rng::new(seed);
        let mut vision_rng = rng.fork(1);
        let mut decoder_rng = rng.fork(2);
        let mut cross_rng = rng.fork(3);
        let encoder = VisionEncoder::seeded(vit_geometry, lora, &mut vision_rng)?;
        let decoder = FrozenDecoder::seeded(decoder_geometry, &mut decoder_rng)?;
        let cross_blocks = (0..decoder_geometry.cross_block_count())
            .map(|_| {
                DenseCrossAttentionBlock::seeded(
                    decoder_geometry.d_model,
                    vit_geometry.d_vit,
                    decoder_geometry.heads,
                    cross_init_std,
                    &mut cross_rng,
                )
            })
            .collect();
        Ok(PheyeModel {
            encoder,
            decoder,
            cross_blocks,
        })
    }

    /// Decoder layer index each cross block precedes.
    pub fn cross_insertion_points(&self) -> Vec<usize> {
        (0..self.cross_blocks.len())
            .map(|b| b * self.decoder.geometry.cross_interval)
            .collect()
    }

    /// Full conditioned forward pass: logits of shape [n_text, vocab].
    pub fn forward(
        &self,
        text_ids: &[usize],
        vision: &VisionTokens,
        ledger: &MulLedger,
        mut trace: Option<&mut CrossAttentionTrace>,
    ) -> Result<Tensor> {
        let interval = self.decoder.geometry.cross_interval;
        let mut hidden = self.decoder.embed(text_ids)?;
        for (index, layer) in self.decoder.layers.iter().enumerate() {
            if index % interval == 0 {
                let block = &self.cross_blocks[index / interval];
                let (next, probs) = block.forward(&hidden, &vision.tokens, ledger)?;
                hidden = next;
                if let Some(trace) = trace.as_deref_mut() {
                    trace.blocks.push(probs);
                }
            }
            hidden = layer.forward(&hidden, self.decoder.geometry.heads, ledger)?;
        }
        let hidden = self.decoder.final_norm.forward(&hidden)?;
        hidden.matmul(&self.decoder.unembed, MulCategory::Other, ledger)
    }

    /// The frozen decoder alone, no cross-attention blocks. Reference
    /// path for the initialization-identity property.
    pub fn forward_frozen_only(&self, text_ids: &[usize], ledger: &MulLedger) -> Result<Tensor> {
        let mut hidden = self.decoder.embed(text_ids)?;
        for layer in &self.decoder.layers {
            hidden = layer.forward(&hidden, self.decoder.geometry.heads, ledger)?;
        }
        let hidden = self.decoder.final_norm.forward(&hidden)?;
        hidden.matmul(&self.decoder.unembed, MulCategory::Other, ledger)
    }

    /// Concatenation baseline: vision tokens pre-projected to the model
    /// width are prefixed to the text embeddings and the plain frozen
    /// decoder runs over the combined sequence. `None` degenerates to the
    /// text-only decoder. Returns logits over the full sequence.
    pub fn llava_forward(
        &self,
        text_ids: &[usize],
        vision_projected: Option<&Tensor>,
        ledger: &MulLedger,
    ) -> Result<Tensor> {
        let text = self.decoder.embed(text_ids)?;
        let hidden = match vision_projected {
            Some(vision) => {
                if vision.shape().len() != 2 || vision.shape()[1] != self.decoder.geometry.d_model
                {
                    return Err(Error::ShapeMismatch {
                        op: "llava_forward",
                        left: vision.shape(),
                        right: vec![0, self.decoder.geometry.d_model],
                    });
                }
                concat_rows(&[vision.clone(), text])?
            }
            None => text,
        };
        let mut hidden = hidden;
        for layer in &self.decoder.layers {
            hidden = layer.forward(&hidden, self.decoder.geometry.heads, ledger)?;
        }
        let hidden = self.decoder.final_norm.forward(&hidden)?;
        hidden.matmul(&self.decoder.unembed, MulCategory::Other, ledger)
    }

    /// Greedy decoding with per-step capture of every cross-attention
    /// block's attention over the vision tokens.
    pub fn generate(
        &self,
        prompt_ids: &[usize],
        vision: &VisionTokens,
        max_new: usize,
        ledger: &MulLedger,
    ) -> Result<GenerationOutput> {
        if max_new == 0 {
            return Err(Error::Contract("generate requires max_new >= 1".into()));
        }
        let vocab = self.decoder.geometry.vocab_size;
        let block_count = self.cross_blocks.len();
        let mut ids = prompt_ids.to_vec();
        let mut step_logits: Vec<f64> = Vec::with_capacity(max_new * vocab);
        let mut maps: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); block_count];

        for _ in 0..max_new {
            let mut trace = CrossAttentionTrace::default();
            let logits = self.forward(&ids, vision, ledger, Some(&mut trace))?;
            let n = ids.len();
            let last_row = logits.with_data(|d| d[(n - 1) * vocab..n * vocab].to_vec());

            let n_vision = vision.tokens.shape()[0];
            for (block, per_head) in trace.blocks.into_iter().enumerate() {
                let step_rows: Vec<Vec<f64>> = per_head
                    .into_iter()
                    .map(|probs| probs[(n - 1) * n_vision..n * n_vision].to_vec())
                    .collect();
                maps[block].push(step_rows);
            }

            let mut best = 0usize;
            for (i, &v) in last_row.iter().enumerate() {
                if v > last_row[best] {
                    best = i;
                }
            }
            step_logits.extend_from_slice(&last_row);
            ids.push(best);
        }

        Ok(GenerationOutput {
            prompt_len: prompt_ids.len(),
            token_ids: ids,
            logits: Tensor::from_vec(vec![max_new, vocab], step_logits)?,
            cross_attention_maps: maps,
        })
    }

    /// Exactly the trainable set: cross-attention blocks, LoRA adapters,
    /// the vision positional embedding, and the two post-ViT LayerNorms.
    pub fn trainable_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params = Vec::new();
        for (i, block) in self.cross_blocks.iter().enumerate() {
            params.extend(block.parameters(&format!("cross{i}")));
        }
        params.extend(self.encoder.trainable_parameters());
        params
    }

    /// Every frozen array: the decoder stack and the ViT backbone.
    pub fn frozen_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params = self.decoder.parameters("decoder");
        params.extend(self.encoder.frozen_parameters());
        params
    }

    /// SHA-256 of each frozen array's little-endian bytes.
    pub fn frozen_checksums(&self) -> Vec<(String, String)> {
        self.frozen_parameters()
            .iter()
            .map(|(name, tensor)| (name.clone(), sha256_hex(tensor)))
            .collect()
    }
}

/// Hex digest of a tensor's values in storage order.
pub fn sha256_hex(tensor: &Tensor) -> String {
    let mut hasher = Sha256::new();
    tensor.with_data(|data| {
        for v in data {
            hasher.update(v.to_le_bytes());
        }
    });
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
