//! Multi-patch high-resolution vision encoder: one global sub-image plus
//! a grid of local tiles, all encoded by a single frozen ViT that is
//! modulated by one of two LoRA adapter sets (global vs. local), followed
//! by separate LayerNorms and a learned positional embedding over the
//! concatenated token sequence.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ledger::{MulCategory, MulLedger};
use crate::nn::{multi_head_attention, LayerNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{concat_rows, Tensor};

/// All shape hyperparameters of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitGeometry {
    /// Pixels per side of one ViT input.
    pub base_resolution: usize,
    /// Pixels per side of one square patch.
    pub patch_size: usize,
    /// ViT embedding width.
    pub d_vit: usize,
    pub layers: usize,
    pub heads: usize,
    /// Pixels per side of the high-resolution input; an integer multiple
    /// of `base_resolution`.
    pub target_resolution: usize,
    pub channels: usize,
}

impl VitGeometry {
    pub fn validate(&self) -> Result<()> {
        let g = *self;
        if g.base_resolution == 0
            || g.patch_size == 0
            || g.d_vit == 0
            || g.layers == 0
            || g.heads == 0
            || g.target_resolution == 0
            || g.channels == 0
        {
            return Err(Error::Config(format!("geometry fields must be positive: {g:?}")));
        }
        if !g.base_resolution.is_multiple_of(g.patch_size) {
            return Err(Error::Config(format!(
                "base resolution {} not divisible by patch size {}",
                g.base_resolution, g.patch_size
            )));
        }
        if !g.target_resolution.is_multiple_of(g.base_resolution) || g.target_resolution < g.base_resolution
        {
            return Err(Error::Config(format!(
                "target resolution {} must be a positive multiple of base resolution {}",
                g.target_resolution, g.base_resolution
            )));
        }
        if !g.d_vit.is_multiple_of(g.heads) {
            return Err(Error::Config(format!(
                "d_vit {} not divisible by {} heads",
                g.d_vit, g.heads
            )));
        }
        Ok(())
    }

    /// Patches per side of one sub-image.
    pub fn patches_per_side(&self) -> usize {
        self.base_resolution / self.patch_size
    }

    /// Tokens per sub-image: patch grid plus the [CLS] token.
    pub fn tokens_per_sub_image(&self) -> usize {
        self.patches_per_side() * self.patches_per_side() + 1
    }

    /// Local tile grid side length.
    pub fn grid_side(&self) -> usize {
        self.target_resolution / self.base_resolution
    }

    /// Sub-images per input: one global plus the local grid. When the
    /// target equals the base resolution the encoder degenerates to a
    /// single global image with no locals.
    pub fn sub_image_count(&self) -> usize {
        if self.target_resolution == self.base_resolution {
            1
        } else {
            self.grid_side() * self.grid_side() + 1
        }
    }

    /// Concatenated sequence length produced by `encode`.
    pub fn total_tokens(&self) -> usize {
        self.sub_image_count() * self.tokens_per_sub_image()
    }

    /// Token count of a single ViT run over the full target resolution
    /// (the monolithic high-resolution baseline).
    pub fn monolithic_tokens(&self) -> usize {
        let side = self.target_resolution / self.patch_size;
        side * side + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

/// Hyperparameters shared by every adapter in a set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            dropout: 0.05,
        }
    }
}

/// Low-rank update for one linear layer: down [d_in, rank] seeded from a
/// normal, up [rank, d_out] initialized to exact zeros so the adapter is
/// a no-op until trained.
#[derive(Debug, Clone)]
pub struct LoraLayer {
    pub down: Tensor,
    pub up: Tensor,
}

impl LoraLayer {
    pub fn seeded(d_in: usize, d_out: usize, rank: usize, rng: &mut Rng) -> LoraLayer {
        let std = 1.0 / (d_in as f64).sqrt();
        LoraLayer {
            down: Tensor::seeded_normal(vec![d_in, rank], std, rng).trainable(),
            up: Tensor::zeros(vec![rank, d_out]).trainable(),
        }
    }
}

/// Frozen affine output plus the scaled low-rank delta:
/// `x W + b + (alpha / rank) * (dropout(x) A) B`. Dropout applies to the
/// adapter branch input only, and only when a generator is supplied
/// (training mode); evaluation passes `None`.
pub fn lora_apply(
    x: &Tensor,
    frozen: &Linear,
    adapter: &LoraLayer,
    config: &LoraConfig,
    category: MulCategory,
    ledger: &MulLedger,
    dropout_rng: Option<&mut Rng>,
) -> Result<Tensor> {
    if config.rank == 0 {
        return Err(Error::Config("LoRA rank must be positive".into()));
    }
    let base = frozen.forward(x, category, ledger)?;
    let branch_input = match dropout_rng {
        Some(rng) => x.dropout(config.dropout, rng)?,
        None => x.clone(),
    };
    let delta = branch_input
        .matmul(&adapter.down, MulCategory::Other, ledger)?
        .matmul(&adapter.up, MulCategory::Other, ledger)?
        .scale(config.alpha / config.rank as f64);
    base.add(&delta)
}

/// One adapter per linear layer of a ViT block.
#[derive(Debug, Clone)]
pub struct VitAdapterLayer {
    pub q: LoraLayer,
    pub k: LoraLayer,
    pub v: LoraLayer,
    pub o: LoraLayer,
    pub fc1: LoraLayer,
    pub fc2: LoraLayer,
}

/// Complete adapter set covering every linear layer of the frozen ViT,
/// including the patch-embedding projection.
#[derive(Debug, Clone)]
pub struct LoraAdapterSet {
    pub config: LoraConfig,
    pub patch_embed: LoraLayer,
    pub layers: Vec<VitAdapterLayer>,
}

impl LoraAdapterSet {
    pub fn seeded(geometry: &VitGeometry, config: LoraConfig, rng: &mut Rng) -> LoraAdapterSet {
        let d = geometry.d_vit;
        let r = config.rank;
        LoraAdapterSet {
            config,
            patch_embed: LoraLayer::seeded(geometry.patch_dim(), d, r, rng),
            layers: (0..geometry.layers)
                .map(|_| VitAdapterLayer {
                    q: LoraLayer::seeded(d, d, r, rng),
                    k: LoraLayer::seeded(d, d, r, rng),
                    v: LoraLayer::seeded(d, d, r, rng),
                    o: LoraLayer::seeded(d, d, r, rng),
                    fc1: LoraLayer::seeded(d, 4 * d, r, rng),
                    fc2: LoraLayer::seeded(4 * d, d, r, rng),
                })
                .collect(),
        }
    }

    /// Named parameter handles (down/up pairs), in a stable order.
    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut params = vec![
            (format!("{prefix}.patch_embed.down"), self.patch_embed.down.clone()),
            (format!("{prefix}.patch_embed.up"), self.patch_embed.up.clone()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, lora) in [
                ("q", &layer.q),
                ("k", &layer.k),
                ("v", &layer.v),
                ("o", &layer.o),
                ("fc1", &layer.fc1),
                ("fc2", &layer.fc2),
            ] {
                params.push((format!("{prefix}.layer{i}.{name}.down"), lora.down.clone()));
                params.push((format!("{prefix}.layer{i}.{name}.up"), lora.up.clone()));
            }
        }
        params
    }
}

/// One pre-norm transformer block of the frozen ViT.
#[derive(Debug, Clone)]
pub struct VitLayer {
    pub norm_attn: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm_ff: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Frozen ViT backbone: patch projection, [CLS] token, and pre-norm
/// transformer layers with 4x-wide feed-forwards. No parameter here is
/// ever trainable.
#[derive(Debug, Clone)]
pub struct FrozenVit {
    pub geometry: VitGeometry,
    pub patch_embed: Linear,
    pub cls_token: Tensor,
    pub layers: Vec<VitLayer>,
}

impl FrozenVit {
    pub fn seeded(geometry: VitGeometry, rng: &mut Rng) -> Result<FrozenVit> {
        geometry.validate()?;
        let d = geometry.d_vit;
        let std = 1.0 / (d as f64).sqrt();
        Ok(FrozenVit {
            geometry,
            patch_embed: Linear::seeded(geometry.patch_dim(), d, 1.0 / (geometry.patch_dim() as f64).sqrt(), rng),
            cls_token: Tensor::seeded_normal(vec![1, d], 1.0, rng),
            layers: (0..geometry.layers)
                .map(|_| VitLayer {
                    norm_attn: LayerNorm::new(d),
                    q: Linear::seeded(d, d, std, rng),
                    k: Linear::seeded(d, d, std, rng),
                    v: Linear::seeded(d, d, std, rng),
                    o: Linear::seeded(d, d, std, rng),
                    norm_ff: LayerNorm::new(d),
                    fc1: Linear::seeded(d, 4 * d, std, rng),
                    fc2: Linear::seeded(4 * d, d, 1.0 / (4.0 * d as f64).sqrt(), rng),
                })
                .collect(),
        })
    }

    pub fn parameters(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut params = vec![
            (format!("{prefix}.patch_embed.weight"), self.patch_embed.weight.clone()),
            (format!("{prefix}.patch_embed.bias"), self.patch_embed.bias.clone()),
            (format!("{prefix}.cls_token"), self.cls_token.clone()),
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

    /// Flatten a base-resolution image into row-major patch vectors;
    /// each row is channel-major within the patch.
    fn patchify(&self, image: &Image) -> Result<Tensor> {
        let g = &self.geometry;
        if image.height != g.base_resolution
            || image.width != g.base_resolution
            || image.channels != g.channels
        {
            return Err(Error::Input(format!(
                "expected {}x{}x{} sub-image, got {}x{}x{}",
                g.channels, g.base_resolution, g.base_resolution,
                image.channels, image.height, image.width
            )));
        }
        let side = g.patches_per_side();
        let p = g.patch_size;
        let mut rows = Vec::with_capacity(side * side * g.patch_dim());
        for py in 0..side {
            for px in 0..side {
                for c in 0..g.channels {
                    for y in 0..p {
                        for x in 0..p {
                            rows.push(image.get(c, py * p + y, px * p + x));
                        }
                    }
                }
            }
        }
        Tensor::from_vec(vec![side * side, g.patch_dim()], rows)
    }

    /// Encode one base-resolution sub-image. With an adapter set, every
    /// linear layer gains its low-rank delta; without one, this is the
    /// plain frozen ViT. Returns [tokens_per_sub_image, d_vit].
    pub fn forward(
        &self,
        image: &Image,
        adapter: Option<&LoraAdapterSet>,
        ledger: &MulLedger,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<Tensor> {
        if let Some(set) = adapter {
            if set.layers.len() != self.layers.len() {
                return Err(Error::Config(format!(
                    "adapter set covers {} layers, ViT has {}",
                    set.layers.len(),
                    self.layers.len()
                )));
            }
        }
        let patches = self.patchify(image)?;
        let embedded = match adapter {
            Some(set) => lora_apply(
                &patches,
                &self.patch_embed,
                &set.patch_embed,
                &set.config,
                MulCategory::Other,
                ledger,
                dropout_rng.as_deref_mut(),
            )?,
            None => self.patch_embed.forward(&patches, MulCategory::Other, ledger)?,
        };
        let mut hidden = concat_rows(&[self.cls_token.clone(), embedded])?;

        for (index, layer) in self.layers.iter().enumerate() {
            let project = |x: &Tensor,
                           frozen: &Linear,
                           pick: fn(&VitAdapterLayer) -> &LoraLayer,
                           category: MulCategory,
                           rng: Option<&mut Rng>|
             -> Result<Tensor> {
                match adapter {
                    Some(set) => lora_apply(
                        x,
                        frozen,
                        pick(&set.layers[index]),
                        &set.config,
                        category,
                        ledger,
                        rng,
                    ),
                    None => frozen.forward(x, category, ledger),
                }
            };

            let normed = layer.norm_attn.forward(&hidden)?;
            let q = project(&normed, &layer.q, |a| &a.q, MulCategory::Projection, dropout_rng.as_deref_mut())?;
            let k = project(&normed, &layer.k, |a| &a.k, MulCategory::Projection, dropout_rng.as_deref_mut())?;
            let v = project(&normed, &layer.v, |a| &a.v, MulCategory::Projection, dropout_rng.as_deref_mut())?;
            let attn = multi_head_attention(&q, &k, &v, self.geometry.heads, false, ledger)?;
            let attn_out = project(
                &attn.hidden,
                &layer.o,
                |a| &a.o,
                MulCategory::Projection,
                dropout_rng.as_deref_mut(),
            )?;
            hidden = hidden.add(&attn_out)?;

            let normed = layer.norm_ff.forward(&hidden)?;
            let ff = project(&normed, &layer.fc1, |a| &a.fc1, MulCategory::FeedForward, dropout_rng.as_deref_mut())?
                .gelu();
            let ff = project(&ff, &layer.fc2, |a| &a.fc2, MulCategory::FeedForward, dropout_rng.as_deref_mut())?;
            hidden = hidden.add(&ff)?;
        }
        Ok(hidden)
    }
}

/// Provenance tag for each token in the concatenated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    Global,
    /// Row-major index of the local tile the token came from.
    Local(usize),
}

/// Concatenated global-first token sequence with per-token origin tags.
#[derive(Debug)]
pub struct VisionTokens {
    pub tokens: Tensor,
    pub origin: Vec<TokenOrigin>,
    pub global_count: usize,
    pub local_count: usize,
}

/// Split a high-resolution image into the global view (resized to the
/// base resolution) and the row-major grid of non-overlapping local
/// tiles cut from the target-resolution resample.
pub fn split_image(image: &Image, geometry: &VitGeometry) -> Result<(Image, Vec<Image>)> {
    geometry.validate()?;
    if image.height < geometry.base_resolution || image.width < geometry.base_resolution {
        return Err(Error::Input(format!(
            "image {}x{} smaller than base resolution {}",
            image.height, image.width, geometry.base_resolution
        )));
    }
    if image.channels != geometry.channels {
        return Err(Error::Input(format!(
            "image has {} channels, geometry expects {}",
            image.channels, geometry.channels
        )));
    }
    let base = geometry.base_resolution;
    let global = image.resize_bilinear(base, base);
    if geometry.target_resolution == base {
        return Ok((global, Vec::new()));
    }
    let resized = image.resize_bilinear(geometry.target_resolution, geometry.target_resolution);
    let side = geometry.grid_side();
    let mut locals = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            locals.push(resized.crop(row * base, col * base, base, base)?);
        }
    }
    Ok((global, locals))
}

/// Encoder state: the shared frozen ViT, the two adapter sets, the two
/// post-ViT LayerNorms, and the learned positional embedding over the
/// concatenated sequence. Everything except the ViT is trainable.
#[derive(Debug, Clone)]
pub struct VisionEncoder {
    pub vit: FrozenVit,
    pub global_adapter: LoraAdapterSet,
    pub local_adapter: LoraAdapterSet,
    pub norm_global: LayerNorm,
    pub norm_local: LayerNorm,
    pub pos_embed: Tensor,
}

impl VisionEncoder {
    pub fn seeded(geometry: VitGeometry, lora: LoraConfig, rng: &mut Rng) -> Result<VisionEncoder> {
        let vit = FrozenVit::seeded(geometry, rng)?;
        let global_adapter = LoraAdapterSet::seeded(&geometry, lora, rng);
        let local_adapter = LoraAdapterSet::seeded(&geometry, lora, rng);
        Ok(VisionEncoder {
            vit,
            global_adapter,
            local_adapter,
            norm_global: LayerNorm::new(geometry.d_vit).trainable(),
            norm_local: LayerNorm::new(geometry.d_vit).trainable(),
            // Learned per position of the concatenated sequence, zero-init.
            pos_embed: Tensor::zeros(vec![geometry.total_tokens(), geometry.d_vit]).trainable(),
        })
    }

    pub fn geometry(&self) -> &VitGeometry {
        &self.vit.geometry
    }

    /// Encode a high-resolution image into the concatenated, normalized,
    /// positionally embedded token sequence: global tokens (through the
    /// global adapter and LayerNorm) first, local tiles row-major after.
    pub fn encode(
        &self,
        image: &Image,
        ledger: &MulLedger,
        mut dropout_rng: Option<&mut Rng>,
    ) -> Result<VisionTokens> {
        let geometry = self.geometry();
        let n_per = geometry.tokens_per_sub_image();
        let expected_total = geometry.total_tokens();
        if self.pos_embed.shape() != vec![expected_total, geometry.d_vit] {
            return Err(Error::Config(format!(
                "positional embedding shape {:?} does not cover {} tokens",
                self.pos_embed.shape(),
                expected_total
            )));
        }

        let (global, locals) = split_image(image, geometry)?;
        let global_tokens = self.norm_global.forward(&self.vit.forward(
            &global,
            Some(&self.global_adapter),
            ledger,
            dropout_rng.as_deref_mut(),
        )?)?;

        let mut blocks = vec![global_tokens];
        let mut origin = vec![TokenOrigin::Global; n_per];
        for (tile, local) in locals.iter().enumerate() {
            let tokens = self.norm_local.forward(&self.vit.forward(
                local,
                Some(&self.local_adapter),
                ledger,
                dropout_rng.as_deref_mut(),
            )?)?;
            blocks.push(tokens);
            origin.extend(std::iter::repeat_n(TokenOrigin::Local(tile), n_per));
        }

        let tokens = concat_rows(&blocks)?.add(&self.pos_embed)?;
        let local_count = locals.len() * n_per;
        Ok(VisionTokens {
            tokens,
            origin,
            global_count: n_per,
            local_count,
        })
    }

    /// Trainable parameters: both adapter sets, the two LayerNorms, and
    /// the positional embedding.
    pub fn trainable_parameters(&self) -> Vec<(String, Tensor)> {
        let mut params = self.global_adapter.parameters("vision.lora.global");
        params.extend(self.local_adapter.parameters("vision.lora.local"));
        params.push(("vision.norm_global.gain".into(), self.norm_global.gain.clone()));
        params.push(("vision.norm_global.bias".into(), self.norm_global.bias.clone()));
        params.push(("vision.norm_local.gain".into(), self.norm_local.gain.clone()));
        params.push(("vision.norm_local.bias".into(), self.norm_local.bias.clone()));
        params.push(("vision.pos_embed".into(), self.pos_embed.clone()));
        params
    }

    /// Frozen parameters: the shared ViT backbone.
    pub fn frozen_parameters(&self) -> Vec<(String, Tensor)> {
        self.vit.parameters("vision.vit")
    }
}

#[cfg(test)]
mod tests;
