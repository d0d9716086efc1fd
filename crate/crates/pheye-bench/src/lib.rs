//! Shared fixtures for the criterion benches.

use pheye_core::decoder::{DecoderGeometry, PheyeModel};
use pheye_core::vision::LoraConfig;
use pheye_core::{Image, VitGeometry};

pub fn bench_vit_geometry() -> VitGeometry {
    VitGeometry {
        base_resolution: 28,
        patch_size: 14,
        d_vit: 16,
        layers: 2,
        heads: 2,
        target_resolution: 56,
        channels: 3,
    }
}

pub fn bench_model() -> PheyeModel {
    let decoder = DecoderGeometry {
        d_model: 32,
        layers: 4,
        heads: 4,
        vocab_size: 64,
        cross_interval: 2,
        max_text_len: 16,
    };
    let lora = LoraConfig {
        rank: 4,
        alpha: 8.0,
        dropout: 0.0,
    };
    PheyeModel::build(decoder, bench_vit_geometry(), lora, 1e-6, 7).expect("bench model")
}

pub fn bench_image() -> Image {
    let geometry = bench_vit_geometry();
    let side = geometry.target_resolution;
    let mut image = Image::zeros(geometry.channels, side, side);
    for c in 0..geometry.channels {
        for y in 0..side {
            for x in 0..side {
                image.set(c, y, x, ((c + 1) * (y * side + x) % 251) as f64 / 251.0);
            }
        }
    }
    image
}
