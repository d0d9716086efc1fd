use super::*;

fn toy_geometry() -> VitGeometry {
    VitGeometry {
        base_resolution: 28,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 56,
        channels: 1,
    }
}

fn pattern_image(channels: usize, side: usize) -> Image {
    let mut img = Image::zeros(channels, side, side);
    for c in 0..channels {
        for y in 0..side {
            for x in 0..side {
                img.set(c, y, x, ((c + 1) * (y * side + x) % 97) as f64 / 97.0);
            }
        }
    }
    img
}

#[test]
fn split_672_yields_one_global_and_nine_locals() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 672,
        channels: 1,
    };
    let image = pattern_image(1, 672);
    let (global, locals) = split_image(&image, &geometry).unwrap();
    assert_eq!((global.height, global.width), (224, 224));
    assert_eq!(locals.len(), 9);
    assert_eq!(geometry.sub_image_count(), 10);
}

#[test]
fn split_degenerates_to_single_global_when_target_equals_base() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 224,
        channels: 1,
    };
    let image = pattern_image(1, 224);
    let (_, locals) = split_image(&image, &geometry).unwrap();
    assert!(locals.is_empty());
    assert_eq!(geometry.sub_image_count(), 1);
}

#[test]
fn split_448_tiles_match_reference_index_arithmetic() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 448,
        channels: 1,
    };
    // Input already at target resolution, so the resample is the identity
    // and tile (r, c) must reproduce pixels [224r, 224r+224) x [224c, ...).
    let image = pattern_image(1, 448);
    let (_, locals) = split_image(&image, &geometry).unwrap();
    assert_eq!(locals.len(), 4);
    for r in 0..2 {
        for c in 0..2 {
            let tile = &locals[r * 2 + c];
            for y in (0..224).step_by(37) {
                for x in (0..224).step_by(37) {
                    assert_eq!(
                        tile.get(0, y, x),
                        image.get(0, 224 * r + y, 224 * c + x),
                        "tile ({r},{c}) pixel ({y},{x})"
                    );
                }
            }
        }
    }
}

#[test]
fn split_rejects_undersized_or_mismatched_input() {
    let geometry = toy_geometry();
    let small = pattern_image(1, 14);
    assert!(matches!(
        split_image(&small, &geometry),
        Err(Error::Input(_))
    ));
    let wrong_channels = pattern_image(3, 56);
    assert!(split_image(&wrong_channels, &geometry).is_err());
}

#[test]
fn vit_forward_emits_257_tokens_for_base_224_patch_14() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 224,
        channels: 1,
    };
    let mut rng = Rng::new(1);
    let vit = FrozenVit::seeded(geometry, &mut rng).unwrap();
    let ledger = MulLedger::new();
    let out = vit
        .forward(&pattern_image(1, 224), None, &ledger, None)
        .unwrap();
    assert_eq!(out.shape(), vec![257, 8]);
    assert_eq!(geometry.tokens_per_sub_image(), 257);
}

#[test]
fn zero_up_adapter_is_identical_to_plain_frozen_vit() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(2);
    let vit = FrozenVit::seeded(geometry, &mut rng).unwrap();
    let adapter = LoraAdapterSet::seeded(&geometry, LoraConfig::default(), &mut rng);
    let image = pattern_image(1, 28);
    let ledger = MulLedger::new();
    let with_adapter = vit
        .forward(&image, Some(&adapter), &ledger, None)
        .unwrap();
    let plain = vit.forward(&image, None, &ledger, None).unwrap();
    assert_eq!(with_adapter.data(), plain.data());
}

#[test]
fn toy_ledger_projection_count_is_1280() {
    // One layer over 5 tokens at width 8: q/k/v/o charge 4 * 5 * 8 * 8.
    let geometry = toy_geometry();
    let mut rng = Rng::new(3);
    let vit = FrozenVit::seeded(geometry, &mut rng).unwrap();
    let adapter = LoraAdapterSet::seeded(&geometry, LoraConfig::default(), &mut rng);
    let ledger = MulLedger::new();
    vit.forward(&pattern_image(1, 28), Some(&adapter), &ledger, None)
        .unwrap();
    assert_eq!(ledger.get(MulCategory::Projection), 1280);
    assert_eq!(ledger.get(MulCategory::AttentionScores), 8 * 25);
    assert_eq!(ledger.get(MulCategory::FeedForward), 8 * 5 * 64);
    assert_eq!(ledger.paper_total(), 4040);
}

#[test]
fn attention_score_count_scales_with_layers_and_sub_images() {
    let mut geometry = toy_geometry();
    geometry.layers = 2;
    let mut rng = Rng::new(4);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let ledger = MulLedger::new();
    encoder
        .encode(&pattern_image(1, 56), &ledger, None)
        .unwrap();
    let n_per = geometry.tokens_per_sub_image();
    let per_layer_per_sub = (geometry.d_vit * n_per * n_per) as u128;
    assert_eq!(
        ledger.get(MulCategory::AttentionScores),
        per_layer_per_sub * geometry.layers as u128 * geometry.sub_image_count() as u128
    );
}

#[test]
fn encode_672_config_yields_2570_tokens_with_257_global() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 672,
        channels: 1,
    };
    let mut rng = Rng::new(5);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let ledger = MulLedger::new();
    let tokens = encoder
        .encode(&pattern_image(1, 672), &ledger, None)
        .unwrap();
    assert_eq!(tokens.tokens.shape(), vec![2570, 8]);
    assert_eq!(tokens.global_count, 257);
    assert_eq!(tokens.local_count, 2570 - 257);
    assert_eq!(
        tokens.origin.iter().filter(|o| **o == TokenOrigin::Global).count(),
        257
    );
    assert_eq!(geometry.monolithic_tokens(), 2305);
}

#[test]
fn encode_448_config_yields_1285_tokens() {
    let geometry = VitGeometry {
        base_resolution: 224,
        patch_size: 14,
        d_vit: 8,
        layers: 1,
        heads: 2,
        target_resolution: 448,
        channels: 1,
    };
    let mut rng = Rng::new(6);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let ledger = MulLedger::new();
    let tokens = encoder
        .encode(&pattern_image(1, 448), &ledger, None)
        .unwrap();
    assert_eq!(tokens.tokens.shape()[0], 1285);
}

#[test]
fn identical_tiles_produce_identical_token_blocks() {
    // Zero positional embeddings (the init state) and the shared local
    // adapter make equal tile content map to equal token blocks.
    let geometry = toy_geometry();
    let mut rng = Rng::new(7);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let mut image = Image::zeros(1, 56, 56);
    for y in 0..28 {
        for x in 0..28 {
            let v = ((y * 31 + x) % 13) as f64 / 13.0;
            image.set(0, y, x, v); // tile (0, 0)
            image.set(0, y, 28 + x, v); // tile (0, 1), same content
            image.set(0, 28 + y, x, 0.5); // tile (1, 0), different
            image.set(0, 28 + y, 28 + x, 0.25);
        }
    }
    let ledger = MulLedger::new();
    let tokens = encoder.encode(&image, &ledger, None).unwrap();
    let n = geometry.tokens_per_sub_image();
    let d = geometry.d_vit;
    let data = tokens.tokens.data();
    let block = |tile: usize| &data[(1 + tile) * n * d..(2 + tile) * n * d];
    assert_eq!(block(0), block(1));
    assert_ne!(block(0), block(2));
}

#[test]
fn perturbing_local_adapter_leaves_global_tokens_unchanged() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(8);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let image = pattern_image(1, 56);
    let n = geometry.tokens_per_sub_image() * geometry.d_vit;

    let ledger = MulLedger::new();
    let before = encoder.encode(&image, &ledger, None).unwrap().tokens.data();
    encoder.local_adapter.layers[0]
        .q
        .up
        .map_data_mut(|d| d.iter_mut().for_each(|v| *v += 0.37));
    let after = encoder.encode(&image, &ledger, None).unwrap().tokens.data();

    assert_eq!(&before[..n], &after[..n], "global block must be unaffected");
    assert_ne!(&before[n..], &after[n..], "local blocks must respond");

    // And symmetrically for the global adapter.
    encoder.global_adapter.layers[0]
        .v
        .up
        .map_data_mut(|d| d.iter_mut().for_each(|v| *v += 0.11));
    let third = encoder.encode(&image, &ledger, None).unwrap().tokens.data();
    assert_ne!(&after[..n], &third[..n]);
    assert_eq!(&after[n..], &third[n..]);
}

#[test]
fn zero_init_encode_equals_plain_vit_plus_layernorms() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(9);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let image = pattern_image(1, 56);
    let ledger = MulLedger::new();
    let encoded = encoder.encode(&image, &ledger, None).unwrap();

    let (global, locals) = split_image(&image, &geometry).unwrap();
    let mut blocks = vec![encoder
        .norm_global
        .forward(&encoder.vit.forward(&global, None, &ledger, None).unwrap())
        .unwrap()];
    for local in &locals {
        blocks.push(
            encoder
                .norm_local
                .forward(&encoder.vit.forward(local, None, &ledger, None).unwrap())
                .unwrap(),
        );
    }
    let reference = concat_rows(&blocks).unwrap();
    assert_eq!(encoded.tokens.data(), reference.data());
}

#[test]
fn frozen_vit_is_immutable_under_forward_and_backward() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(10);
    let encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    let image = pattern_image(1, 56);
    let snapshot: Vec<Vec<u64>> = encoder
        .frozen_parameters()
        .iter()
        .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
        .collect();

    for _ in 0..3 {
        let ledger = MulLedger::new();
        let tokens = encoder.encode(&image, &ledger, None).unwrap();
        tokens.tokens.sum_all().backward().unwrap();
    }

    for ((name, tensor), bits) in encoder.frozen_parameters().iter().zip(&snapshot) {
        let now: Vec<u64> = tensor.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(&now, bits, "frozen parameter {name} changed");
        assert!(!tensor.requires_grad(), "{name} must not be trainable");
    }
}

#[test]
fn token_arithmetic_holds_over_geometry_sweep() {
    for (base, factor, patch) in [
        (14usize, 2usize, 7usize),
        (14, 3, 7),
        (28, 2, 14),
        (28, 4, 7),
        (224, 3, 14),
        (224, 2, 14),
    ] {
        let geometry = VitGeometry {
            base_resolution: base,
            patch_size: patch,
            d_vit: 8,
            layers: 1,
            heads: 2,
            target_resolution: base * factor,
            channels: 1,
        };
        geometry.validate().unwrap();
        let per_sub = (base / patch) * (base / patch) + 1;
        let subs = factor * factor + 1;
        assert_eq!(geometry.total_tokens(), subs * per_sub);
        // Per-sub-image count is consistent with the monolithic count:
        // N' = (N - 1) / (P - 1) + 1.
        let n = geometry.monolithic_tokens();
        let p = geometry.sub_image_count();
        assert_eq!(geometry.tokens_per_sub_image(), (n - 1) / (p - 1) + 1);
    }
}

#[test]
fn lora_apply_zero_up_matrix_returns_frozen_output() {
    let mut rng = Rng::new(11);
    let ledger = MulLedger::new();
    let frozen = Linear::seeded(4, 3, 0.5, &mut rng);
    let adapter = LoraLayer::seeded(4, 3, 2, &mut rng);
    let x = Tensor::seeded_normal(vec![2, 4], 1.0, &mut rng);
    let config = LoraConfig {
        rank: 2,
        alpha: 4.0,
        dropout: 0.0,
    };
    let adapted = lora_apply(&x, &frozen, &adapter, &config, MulCategory::Other, &ledger, None)
        .unwrap();
    let plain = frozen.forward(&x, MulCategory::Other, &ledger).unwrap();
    assert_eq!(adapted.data(), plain.data());
}

#[test]
fn lora_apply_dense_evaluation_oracle() {
    // Frozen identity, x = [1, 0], rank 1, alpha 2, down = [1, 0]^T,
    // up = [0, 1]: output = x + 2 * (x . down) * up = [1, 2].
    let ledger = MulLedger::new();
    let frozen = Linear {
        weight: Tensor::eye(2),
        bias: Tensor::zeros(vec![2]),
    };
    let adapter = LoraLayer {
        down: Tensor::from_vec(vec![2, 1], vec![1.0, 0.0]).unwrap(),
        up: Tensor::from_vec(vec![1, 2], vec![0.0, 1.0]).unwrap(),
    };
    let config = LoraConfig {
        rank: 1,
        alpha: 2.0,
        dropout: 0.0,
    };
    let x = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let out = lora_apply(&x, &frozen, &adapter, &config, MulCategory::Other, &ledger, None)
        .unwrap();
    assert_eq!(out.data(), vec![1.0, 2.0]);
}

#[test]
fn lora_apply_train_mode_with_zero_dropout_matches_eval() {
    let mut rng = Rng::new(12);
    let ledger = MulLedger::new();
    let frozen = Linear::seeded(3, 3, 0.5, &mut rng);
    let adapter = LoraLayer::seeded(3, 3, 2, &mut rng);
    adapter.up.map_data_mut(|d| d.iter_mut().for_each(|v| *v = 0.3));
    let config = LoraConfig {
        rank: 2,
        alpha: 4.0,
        dropout: 0.0,
    };
    let x = Tensor::seeded_normal(vec![2, 3], 1.0, &mut rng);
    let eval = lora_apply(&x, &frozen, &adapter, &config, MulCategory::Other, &ledger, None)
        .unwrap();
    let mut dropout_rng = Rng::new(99);
    let train = lora_apply(
        &x,
        &frozen,
        &adapter,
        &config,
        MulCategory::Other,
        &ledger,
        Some(&mut dropout_rng),
    )
    .unwrap();
    assert_eq!(eval.data(), train.data());
}

#[test]
fn lora_apply_rejects_rank_zero() {
    let mut rng = Rng::new(13);
    let ledger = MulLedger::new();
    let frozen = Linear::seeded(2, 2, 0.5, &mut rng);
    let adapter = LoraLayer {
        down: Tensor::ones(vec![2, 1]),
        up: Tensor::ones(vec![1, 2]),
    };
    let config = LoraConfig {
        rank: 0,
        alpha: 2.0,
        dropout: 0.0,
    };
    let x = Tensor::ones(vec![1, 2]);
    assert!(matches!(
        lora_apply(&x, &frozen, &adapter, &config, MulCategory::Other, &ledger, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn vit_forward_rejects_wrong_resolution() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(14);
    let vit = FrozenVit::seeded(geometry, &mut rng).unwrap();
    let ledger = MulLedger::new();
    assert!(matches!(
        vit.forward(&pattern_image(1, 56), None, &ledger, None),
        Err(Error::Input(_))
    ));
}

#[test]
fn encode_rejects_mismatched_positional_embedding() {
    let geometry = toy_geometry();
    let mut rng = Rng::new(15);
    let mut encoder = VisionEncoder::seeded(geometry, LoraConfig::default(), &mut rng).unwrap();
    encoder.pos_embed = Tensor::zeros(vec![3, geometry.d_vit]);
    let ledger = MulLedger::new();
    assert!(matches!(
        encoder.encode(&pattern_image(1, 56), &ledger, None),
        Err(Error::Config(_))
    ));
}

#[test]
fn geometry_validation_rejects_bad_combinations() {
    let mut g = toy_geometry();
    g.patch_size = 13;
    assert!(g.validate().is_err());
    let mut g = toy_geometry();
    g.target_resolution = 42;
    assert!(g.validate().is_err());
    let mut g = toy_geometry();
    g.heads = 3;
    assert!(g.validate().is_err());
}
