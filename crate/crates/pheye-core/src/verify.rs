//! Instrumented reconciliation sweep: builds toy models over a fixed set
//! of geometries, executes all four architectures with a fresh ledger
//! each, and reconciles the counted multiplications against the analytic
//! expectations. The exit gate is delta == 0 for every run under the
//! published-formula accounting.

use crate::cost::{reconcile, Accounting, CostInputs, Formula, ReconcileReport, RunSpec};
use crate::decoder::{DecoderGeometry, PheyeModel};
use crate::error::Result;
use crate::image::Image;
use crate::ledger::MulLedger;
use crate::nn::Linear;
use crate::rng::Rng;
use crate::vision::{FrozenVit, LoraConfig, VitGeometry};

/// One toy configuration of the sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepGeometry {
    pub label: &'static str,
    pub base_resolution: usize,
    pub patch_size: usize,
    pub vit_dim: usize,
    pub vit_layers: usize,
    pub lm_dim: usize,
    pub lm_layers: usize,
    pub interval: usize,
    pub text_tokens: usize,
}

/// Five geometries spanning per-sub-image token counts {5, 10, 17} and
/// widths {8, 16}, all with the local grid at twice the base resolution
/// (five sub-images) and decoder depths that are exact multiples of the
/// insertion interval.
pub const SWEEP: [SweepGeometry; 5] = [
    SweepGeometry {
        label: "n5_d8",
        base_resolution: 28,
        patch_size: 14,
        vit_dim: 8,
        vit_layers: 1,
        lm_dim: 8,
        lm_layers: 2,
        interval: 1,
        text_tokens: 4,
    },
    SweepGeometry {
        label: "n5_d16",
        base_resolution: 28,
        patch_size: 14,
        vit_dim: 8,
        vit_layers: 2,
        lm_dim: 16,
        lm_layers: 2,
        interval: 2,
        text_tokens: 5,
    },
    SweepGeometry {
        label: "n10_d16",
        base_resolution: 42,
        patch_size: 14,
        vit_dim: 16,
        vit_layers: 1,
        lm_dim: 8,
        lm_layers: 4,
        interval: 2,
        text_tokens: 3,
    },
    SweepGeometry {
        label: "n10_d8",
        base_resolution: 42,
        patch_size: 14,
        vit_dim: 8,
        vit_layers: 2,
        lm_dim: 16,
        lm_layers: 4,
        interval: 4,
        text_tokens: 6,
    },
    SweepGeometry {
        label: "n17_d16",
        base_resolution: 56,
        patch_size: 14,
        vit_dim: 16,
        vit_layers: 1,
        lm_dim: 16,
        lm_layers: 3,
        interval: 3,
        text_tokens: 4,
    },
];

/// Reconciliation result for one (geometry, formula) pair.
#[derive(Debug)]
pub struct SweepOutcome {
    pub label: String,
    pub report: ReconcileReport,
}

fn pattern_image(channels: usize, side: usize, salt: usize) -> Image {
    let mut img = Image::zeros(channels, side, side);
    for c in 0..channels {
        for y in 0..side {
            for x in 0..side {
                let v = ((c + 1) * (y * side + x) + salt) % 101;
                img.set(c, y, x, v as f64 / 101.0);
            }
        }
    }
    img
}

/// Execute the four instrumented runs for one geometry and reconcile
/// each against its analytic expectation.
pub fn run_geometry(geometry: &SweepGeometry, accounting: Accounting) -> Result<Vec<SweepOutcome>> {
    let g = geometry;
    let vit_geometry = VitGeometry {
        base_resolution: g.base_resolution,
        patch_size: g.patch_size,
        d_vit: g.vit_dim,
        layers: g.vit_layers,
        heads: 2,
        target_resolution: 2 * g.base_resolution,
        channels: 1,
    };
    let decoder_geometry = DecoderGeometry {
        d_model: g.lm_dim,
        layers: g.lm_layers,
        heads: 2,
        vocab_size: 16,
        cross_interval: g.interval,
        max_text_len: g.text_tokens.max(8),
    };
    let lora = LoraConfig {
        rank: 2,
        alpha: 4.0,
        dropout: 0.0,
    };
    let model = PheyeModel::build(decoder_geometry, vit_geometry, lora, 1e-6, 1234)?;

    let n_prime = vit_geometry.tokens_per_sub_image() as u64;
    let sub_images = vit_geometry.sub_image_count() as u64;
    let n_vision = vit_geometry.total_tokens() as u64;
    let inputs = CostInputs {
        full_res_tokens: vit_geometry.monolithic_tokens() as u64,
        tokens_per_sub_image: n_prime,
        sub_images,
        text_tokens: g.text_tokens as u64,
        vision_tokens: n_vision,
        lm_dim: g.lm_dim as u64,
        vit_dim: g.vit_dim as u64,
        interval: g.interval as u64,
    };
    inputs.validate()?;
    let text: Vec<usize> = (0..g.text_tokens).map(|t| (t * 3 + 1) % 16).collect();
    let mut outcomes = Vec::with_capacity(4);

    // Monolithic ViT over the full-resolution image.
    {
        let monolithic_geometry = VitGeometry {
            base_resolution: vit_geometry.target_resolution,
            target_resolution: vit_geometry.target_resolution,
            ..vit_geometry
        };
        let mut rng = Rng::new(77);
        let vit = FrozenVit::seeded(monolithic_geometry, &mut rng)?;
        let ledger = MulLedger::new();
        vit.forward(
            &pattern_image(1, monolithic_geometry.base_resolution, 3),
            None,
            &ledger,
            None,
        )?;
        let spec = RunSpec {
            formula: Formula::VitMonolithic,
            inputs,
            layers: g.vit_layers as u64,
        };
        outcomes.push(SweepOutcome {
            label: format!("{}/{}", g.label, spec.formula.name()),
            report: reconcile(&spec, &spec, &ledger, accounting)?,
        });
    }

    // Tiled multi-patch encoder over the same resolution.
    let vision = {
        let ledger = MulLedger::new();
        let vision = model.encoder.encode(
            &pattern_image(1, vit_geometry.target_resolution, 5),
            &ledger,
            None,
        )?;
        let spec = RunSpec {
            formula: Formula::VitTiled,
            inputs,
            layers: g.vit_layers as u64,
        };
        outcomes.push(SweepOutcome {
            label: format!("{}/{}", g.label, spec.formula.name()),
            report: reconcile(&spec, &spec, &ledger, accounting)?,
        });
        vision
    };

    // Concatenation baseline: project the encoded tokens to the decoder
    // width (charged outside the formula accounting) and run the plain
    // decoder over the combined sequence.
    {
        let mut rng = Rng::new(99);
        let projector = Linear::seeded(g.vit_dim, g.lm_dim, 0.02, &mut rng).trainable();
        let ledger = MulLedger::new();
        let projected =
            projector.forward(&vision.tokens, crate::ledger::MulCategory::Other, &ledger)?;
        model.llava_forward(&text, Some(&projected), &ledger)?;
        let spec = RunSpec {
            formula: Formula::LmConcat,
            inputs,
            layers: g.lm_layers as u64,
        };
        outcomes.push(SweepOutcome {
            label: format!("{}/{}", g.label, spec.formula.name()),
            report: reconcile(&spec, &spec, &ledger, accounting)?,
        });
    }

    // Cross-attention conditioned decoder.
    {
        let ledger = MulLedger::new();
        model.forward(&text, &vision, &ledger, None)?;
        let spec = RunSpec {
            formula: Formula::LmCross,
            inputs,
            layers: g.lm_layers as u64,
        };
        outcomes.push(SweepOutcome {
            label: format!("{}/{}", g.label, spec.formula.name()),
            report: reconcile(&spec, &spec, &ledger, accounting)?,
        });
    }

    Ok(outcomes)
}

/// The full sweep under the given accounting.
pub fn reconciliation_sweep(accounting: Accounting) -> Result<Vec<SweepOutcome>> {
    let mut outcomes = Vec::with_capacity(SWEEP.len() * 4);
    for geometry in &SWEEP {
        outcomes.extend(run_geometry(geometry, accounting)?);
    }
    Ok(outcomes)
}
