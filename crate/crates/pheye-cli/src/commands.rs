//! Subcommand implementations. Every output is byte-deterministic for
//! fixed flags and seeds: big counts are rendered as exact decimal
//! strings, ratios as fixed-point decimals plus exact fractions.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use pheye_core::analysis::{
    accuracy_over, aggregate_by_tertile, aggregate_records, format_delta, partition_samples,
    read_attention_jsonl, read_samples_jsonl, tertile_accuracy_delta,
};
use pheye_core::cost::{
    cost_report, Accounting, CategoryCounts, CostInputs, CostReport, Rational,
};
use pheye_core::decoder::sha256_hex;
use pheye_core::train::{train, StageConfig, SyntheticTask, VisionMode};
use pheye_core::verify::reconciliation_sweep;
use pheye_core::{MulCategory, MulLedger};

pub enum CostFormat {
    Json,
    Csv,
}

/// Raw flag values of the `cost` subcommand.
pub struct CostQuery {
    pub n_text: u64,
    pub n_vision: u64,
    pub lm_dim: u64,
    pub vit_dim: u64,
    pub interval: u64,
    pub sub_images: u64,
}

fn breakdown_json(counts: &CategoryCounts) -> serde_json::Value {
    json!({
        "total": counts.paper_total().to_string(),
        "projection": counts.projection.to_string(),
        "attention_scores": counts.attention_scores.to_string(),
        "attention_values": counts.attention_values.to_string(),
        "feedforward": counts.feedforward.to_string(),
    })
}

fn rational_json(value: &Rational, places: u32) -> serde_json::Value {
    json!({
        "decimal": value.to_decimal_string(places),
        "exact": value.to_fraction_string(),
    })
}

pub fn cmd_cost(query: &CostQuery, format: CostFormat, out: &mut impl Write) -> Result<()> {
    let tokens_per_sub_image =
        CostInputs::derive_tokens_per_sub_image(query.n_vision, query.sub_images)?;
    let inputs = CostInputs {
        full_res_tokens: query.n_vision,
        tokens_per_sub_image,
        sub_images: query.sub_images,
        text_tokens: query.n_text,
        vision_tokens: query.n_vision,
        lm_dim: query.lm_dim,
        vit_dim: query.vit_dim,
        interval: query.interval,
    };
    let report = cost_report(&inputs)?;
    match format {
        CostFormat::Json => write_cost_json(&report, out),
        CostFormat::Csv => write_cost_csv(&report, out),
    }
}

fn write_cost_json(report: &CostReport, out: &mut impl Write) -> Result<()> {
    let i = &report.inputs;
    let value = json!({
        "inputs": {
            "nt": i.text_tokens,
            "ni": i.vision_tokens,
            "d": i.lm_dim,
            "dvit": i.vit_dim,
            "i": i.interval,
            "n": i.full_res_tokens,
            "n_prime": i.tokens_per_sub_image,
            "p": i.sub_images,
        },
        "per_layer": {
            "vit_monolithic": breakdown_json(&report.vit_monolithic_breakdown),
            "vit_tiled": breakdown_json(&report.vit_tiled_breakdown),
            "lm_concat": breakdown_json(&report.lm_concat_breakdown),
            "lm_cross": {
                "average": rational_json(&report.lm_cross, 2),
                "decoder_layer": breakdown_json(&report.lm_cross_decoder_layer),
                "cross_block": breakdown_json(&report.lm_cross_block),
            },
        },
        "vision_ratio": report.vision_ratio.to_decimal_string(4),
        "vision_ratio_exact": report.vision_ratio.to_fraction_string(),
        "ratio": report.lm_ratio.to_decimal_string(2),
        "ratio_exact": report.lm_ratio.to_fraction_string(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn write_cost_csv(report: &CostReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "quantity,value")?;
    let rows: Vec<(&str, String)> = vec![
        ("vit_monolithic_total", report.vit_monolithic.to_string()),
        (
            "vit_monolithic_projection",
            report.vit_monolithic_breakdown.projection.to_string(),
        ),
        (
            "vit_monolithic_attention_scores",
            report.vit_monolithic_breakdown.attention_scores.to_string(),
        ),
        (
            "vit_monolithic_feedforward",
            report.vit_monolithic_breakdown.feedforward.to_string(),
        ),
        ("vit_tiled_total", report.vit_tiled.to_string()),
        (
            "vit_tiled_projection",
            report.vit_tiled_breakdown.projection.to_string(),
        ),
        (
            "vit_tiled_attention_scores",
            report.vit_tiled_breakdown.attention_scores.to_string(),
        ),
        (
            "vit_tiled_feedforward",
            report.vit_tiled_breakdown.feedforward.to_string(),
        ),
        ("lm_concat_total", report.lm_concat.to_string()),
        (
            "lm_cross_average_per_layer",
            report.lm_cross.to_fraction_string(),
        ),
        (
            "lm_cross_average_per_layer_decimal",
            report.lm_cross.to_decimal_string(2),
        ),
        ("vision_ratio", report.vision_ratio.to_decimal_string(4)),
        (
            "vision_ratio_exact",
            report.vision_ratio.to_fraction_string(),
        ),
        ("ratio", report.lm_ratio.to_decimal_string(2)),
        ("ratio_exact", report.lm_ratio.to_fraction_string()),
    ];
    for (key, value) in rows {
        writeln!(out, "{key},{value}")?;
    }
    Ok(())
}

/// Reconciliation sweep; Ok(false) means some delta was nonzero.
pub fn cmd_verify(out: &mut impl Write) -> Result<bool> {
    let outcomes = reconciliation_sweep(Accounting::Paper)?;
    let mut all_exact = true;
    for outcome in &outcomes {
        let status = if outcome.report.is_exact() { "ok" } else { "MISMATCH" };
        writeln!(
            out,
            "{:<28} analytic={:<14} counted={:<14} delta={} [{status}]",
            outcome.label,
            outcome.report.analytic_total,
            outcome.report.counted_total,
            outcome.report.delta_total(),
        )?;
        for row in &outcome.report.rows {
            if row.delta() != 0 {
                writeln!(
                    out,
                    "    {}: analytic {} counted {} delta {}",
                    row.category.name(),
                    row.analytic,
                    row.counted,
                    row.delta()
                )?;
            }
        }
        all_exact &= outcome.report.is_exact();
    }
    writeln!(
        out,
        "{} reconciliations, {}",
        outcomes.len(),
        if all_exact { "all exact" } else { "MISMATCHES PRESENT" }
    )?;
    Ok(all_exact)
}

pub fn cmd_demo_forward(config_path: &Path, image_path: &Path, out: &mut impl Write) -> Result<()> {
    let config = pheye_core::config::parse_config_file(config_path)?;
    let model = config.build_model()?;
    let image = crate::ppm::load(image_path)?;
    let ledger = MulLedger::new();
    let vision = model.encoder.encode(&image, &ledger, None)?;
    let prompt: Vec<usize> = vec![0, 1.min(config.decoder.vocab_size - 1)];
    let logits = model.forward(&prompt, &vision, &ledger, None)?;

    let ledger_json: serde_json::Value = MulCategory::ALL
        .iter()
        .map(|&c| (c.name().to_string(), json!(ledger.get(c).to_string())))
        .collect::<serde_json::Map<String, serde_json::Value>>()
        .into();
    let value = json!({
        "image": {
            "channels": image.channels,
            "height": image.height,
            "width": image.width,
        },
        "tokens": {
            "total": vision.tokens.shape()[0],
            "global": vision.global_count,
            "local": vision.local_count,
        },
        "prompt": prompt,
        "logits_shape": logits.shape(),
        "logits_sha256": sha256_hex(&logits),
        "multiplications": ledger_json,
        "multiplications_total": ledger.total().to_string(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

pub fn cmd_train_toy(
    stage: u8,
    steps: usize,
    seed: u64,
    config_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let mut model_config = match config_path {
        Some(path) => pheye_core::config::parse_config_file(path)?,
        None => pheye_core::config::ModelConfig::default(),
    };
    model_config.seed = seed;
    if model_config.vit.channels != 3 {
        bail!("train-toy needs a 3-channel vision geometry");
    }
    if model_config.decoder.vocab_size < pheye_core::train::task_tokens::VOCAB {
        bail!(
            "train-toy needs vocab_size >= {}",
            pheye_core::train::task_tokens::VOCAB
        );
    }
    let mut stage_config = StageConfig::stage(stage)?;
    stage_config.total_steps = steps;
    stage_config.seed = seed;

    let model = model_config.build_model()?;
    let task = SyntheticTask::new(model_config.vit, seed ^ 0xda7a)?;

    let combined_checksum = |checksums: &[(String, String)]| -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, digest) in checksums {
            hasher.update(name.as_bytes());
            hasher.update(digest.as_bytes());
        }
        let mut hex = String::new();
        for byte in hasher.finalize() {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    };

    let log = train(&model, &task, &stage_config, VisionMode::Normal)?;
    writeln!(
        out,
        "{}",
        json!({
            "event": "start",
            "stage": stage,
            "learning_rate": stage_config.learning_rate,
            "total_steps": stage_config.total_steps,
            "effective_batch": stage_config.effective_batch,
            "micro_batch": stage_config.micro_batch,
            "seed": seed,
            "frozen_arrays": log.frozen_checksums_start.len(),
            "frozen_sha256": combined_checksum(&log.frozen_checksums_start),
        })
    )?;
    for record in &log.records {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    writeln!(
        out,
        "{}",
        json!({
            "event": "end",
            "frozen_sha256": combined_checksum(&log.frozen_checksums_end),
            "frozen_unchanged": log.frozen_checksums_start == log.frozen_checksums_end,
        })
    )?;
    Ok(())
}

pub enum AnalyzeFormat {
    Csv,
    Json,
}

pub fn cmd_analyze_tertiles(
    samples_path: &Path,
    pairs: &[(String, String)],
    format: AnalyzeFormat,
    out: &mut impl Write,
) -> Result<()> {
    let file = std::fs::File::open(samples_path)
        .with_context(|| format!("opening {}", samples_path.display()))?;
    let samples = read_samples_jsonl(std::io::BufReader::new(file))?;
    let partition = partition_samples(&samples)?;

    let models: BTreeSet<String> = samples
        .iter()
        .flat_map(|s| s.correct.keys().cloned())
        .collect();
    if models.is_empty() {
        bail!("no model correctness flags in the input");
    }

    let accuracy = |model: &str| -> Result<[f64; 3]> {
        Ok([
            accuracy_over(&samples, &partition.bottom, model)?,
            accuracy_over(&samples, &partition.middle, model)?,
            accuracy_over(&samples, &partition.top, model)?,
        ])
    };
    let mut deltas = Vec::new();
    for (low, high) in pairs {
        if !models.contains(low) || !models.contains(high) {
            bail!("pair {low},{high} references unknown model ids");
        }
        let low_acc = accuracy(low)?;
        let high_acc = accuracy(high)?;
        let mut cells = Vec::with_capacity(3);
        for t in 0..3 {
            cells.push(format_delta(tertile_accuracy_delta(low_acc[t], high_acc[t])?));
        }
        deltas.push((low.clone(), high.clone(), cells));
    }

    match format {
        AnalyzeFormat::Csv => {
            writeln!(out, "row,bottom,middle,top")?;
            writeln!(
                out,
                "count,{},{},{}",
                partition.bottom.len(),
                partition.middle.len(),
                partition.top.len()
            )?;
            for model in &models {
                let acc = accuracy(model)?;
                writeln!(
                    out,
                    "accuracy:{model},{:.2},{:.2},{:.2}",
                    acc[0], acc[1], acc[2]
                )?;
            }
            for (low, high, cells) in &deltas {
                writeln!(out, "delta:{low}->{high},{},{},{}", cells[0], cells[1], cells[2])?;
            }
        }
        AnalyzeFormat::Json => {
            let mut accuracy_map = serde_json::Map::new();
            for model in &models {
                let acc = accuracy(model)?;
                accuracy_map.insert(
                    model.clone(),
                    json!({
                        "bottom": format!("{:.2}", acc[0]),
                        "middle": format!("{:.2}", acc[1]),
                        "top": format!("{:.2}", acc[2]),
                    }),
                );
            }
            let delta_json: Vec<serde_json::Value> = deltas
                .iter()
                .map(|(low, high, cells)| {
                    json!({
                        "low": low,
                        "high": high,
                        "bottom": cells[0],
                        "middle": cells[1],
                        "top": cells[2],
                    })
                })
                .collect();
            let value = json!({
                "count": {
                    "bottom": partition.bottom.len(),
                    "middle": partition.middle.len(),
                    "top": partition.top.len(),
                },
                "boundaries": [partition.boundaries.0, partition.boundaries.1],
                "accuracy": accuracy_map,
                "delta": delta_json,
            });
            writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
        }
    }
    Ok(())
}

pub fn cmd_analyze_attention(
    maps_path: &Path,
    global_count: usize,
    samples_path: Option<&Path>,
    format: AnalyzeFormat,
    out: &mut impl Write,
) -> Result<()> {
    let file = std::fs::File::open(maps_path)
        .with_context(|| format!("opening {}", maps_path.display()))?;
    let records = read_attention_jsonl(std::io::BufReader::new(file))?;
    let total = records[0].scores.len();
    if global_count == 0 || global_count >= total {
        bail!("global token count {global_count} outside (0, {total})");
    }
    let local_count = total - global_count;

    // (tertile label, per-layer series); a single unlabeled group when no
    // sample file joins the records to a partition.
    type LayerSeries = Vec<(usize, f64, usize)>;
    let groups: Vec<(Option<&'static str>, LayerSeries)> = match samples_path {
        None => vec![(
            None,
            aggregate_records(&records, global_count, local_count)?.per_layer,
        )],
        Some(path) => {
            let file =
                std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let samples = read_samples_jsonl(std::io::BufReader::new(file))?;
            let partition = partition_samples(&samples)?;
            aggregate_by_tertile(&records, &partition, global_count, local_count)?
                .into_iter()
                .map(|(tertile, summary)| (Some(tertile.name()), summary.per_layer))
                .collect()
        }
    };

    match format {
        AnalyzeFormat::Csv => {
            if groups.first().is_some_and(|(label, _)| label.is_some()) {
                writeln!(out, "tertile,layer,global_mass,local_mass,observations")?;
            } else {
                writeln!(out, "layer,global_mass,local_mass,observations")?;
            }
            for (label, series) in &groups {
                for (layer, global, observations) in series {
                    match label {
                        Some(tertile) => writeln!(
                            out,
                            "{tertile},{layer},{:.6},{:.6},{observations}",
                            global,
                            1.0 - global
                        )?,
                        None => writeln!(
                            out,
                            "{layer},{:.6},{:.6},{observations}",
                            global,
                            1.0 - global
                        )?,
                    }
                }
            }
        }
        AnalyzeFormat::Json => {
            let rows: Vec<serde_json::Value> = groups
                .iter()
                .flat_map(|(label, series)| {
                    series.iter().map(move |(layer, global, observations)| {
                        let mut row = serde_json::Map::new();
                        if let Some(tertile) = label {
                            row.insert("tertile".into(), json!(tertile));
                        }
                        row.insert("layer".into(), json!(layer));
                        row.insert("global_mass".into(), json!(global));
                        row.insert("local_mass".into(), json!(1.0 - global));
                        row.insert("observations".into(), json!(observations));
                        serde_json::Value::Object(row)
                    })
                })
                .collect();
            writeln!(out, "{}", serde_json::to_string_pretty(&json!(rows))?)?;
        }
    }
    Ok(())
}
