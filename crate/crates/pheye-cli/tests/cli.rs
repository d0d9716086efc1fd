//! End-to-end tests over the compiled binary: output schemas, exit
//! codes, and byte determinism.

use std::path::PathBuf;
use std::process::{Command, Output};

fn pheye() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pheye"))
}

fn run(args: &[&str]) -> Output {
    pheye().args(args).output().expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf-8 stdout")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pheye_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn cost_json_reports_published_ratios() {
    let output = run(&[
        "cost", "--nt", "65", "--ni", "2305", "--d", "2048", "--dvit", "1280", "--i", "2",
    ]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(value["ratio"], "12.07");
    assert_eq!(value["vision_ratio"], "1.0145");
    assert_eq!(value["inputs"]["n_prime"], 257);
    assert_eq!(value["per_layer"]["lm_concat"]["total"], "130789416960");
    assert_eq!(
        value["per_layer"]["lm_cross"]["average"]["exact"],
        "10839198720/1"
    );

    let output = run(&[
        "cost", "--nt", "65", "--ni", "2305", "--d", "2048", "--dvit", "1280", "--i", "4",
    ]);
    let value: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(value["ratio"], "18.53");
}

#[test]
fn cost_csv_has_stable_keys() {
    let output = run(&[
        "cost", "--nt", "65", "--ni", "2305", "--d", "2048", "--dvit", "1280", "--i", "2",
        "--csv",
    ]);
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.contains("\nratio,12.07\n"));
    assert!(text.contains("\nvision_ratio,1.0145\n"));
    assert!(text.contains("\nvit_monolithic_total,52118816000\n"));
    assert!(text.contains("\nvit_tiled_total,51373683200\n"));
}

#[test]
fn cost_rejects_bad_flags_with_usage_exit_code() {
    let output = run(&["cost", "--ni", "2305", "--d", "2048", "--dvit", "1280", "--i", "2"]);
    assert_eq!(output.status.code(), Some(2), "missing --nt is a usage error");
    let output = run(&["cost", "--nt", "1", "--ni", "1", "--d", "1", "--dvit", "1", "--i", "1", "--json", "--csv"]);
    assert_eq!(output.status.code(), Some(2), "conflicting formats");
}

#[test]
fn cost_reports_contract_violations_as_structured_errors() {
    // (N - 1) not divisible by (P - 1).
    let output = run(&[
        "cost", "--nt", "65", "--ni", "2305", "--d", "2048", "--dvit", "1280", "--i", "2",
        "--p", "11",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    let value: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(value["error"].as_str().unwrap().contains("not divisible"));
}

#[test]
fn verify_exits_zero_with_all_exact() {
    let output = run(&["verify"]);
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.contains("all exact"));
    assert_eq!(text.matches("[ok]").count(), 20);
    assert!(!text.contains("MISMATCH"));
}

fn write_demo_fixtures(dir: &std::path::Path) -> (PathBuf, PathBuf) {
    let config_path = dir.join("demo.cfg");
    std::fs::write(
        &config_path,
        "seed = 11\nd_model = 16\nvocab_size = 12\nbase_resolution = 14\npatch_size = 7\ntarget_resolution = 28\nchannels = 3\n",
    )
    .unwrap();
    let image_path = dir.join("demo.ppm");
    let (w, h) = (32usize, 32usize);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            bytes.push(((x * 8) % 256) as u8);
            bytes.push(((y * 8) % 256) as u8);
            bytes.push((((x + y) * 4) % 256) as u8);
        }
    }
    std::fs::write(&image_path, bytes).unwrap();
    (config_path, image_path)
}

#[test]
fn demo_forward_is_deterministic_and_reports_counts() {
    let dir = temp_dir("demo");
    let (config, image) = write_demo_fixtures(&dir);
    let args = [
        "demo-forward",
        "--config",
        config.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success());
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "byte-deterministic output");

    let value: serde_json::Value = serde_json::from_str(&stdout_of(&first)).unwrap();
    assert_eq!(value["tokens"]["total"], 25);
    assert_eq!(value["tokens"]["global"], 5);
    assert_eq!(value["logits_shape"][1], 12);
    assert_eq!(value["logits_sha256"].as_str().unwrap().len(), 64);
    assert!(value["multiplications"]["projection"].is_string());
}

#[test]
fn demo_forward_missing_image_is_exit_one() {
    let dir = temp_dir("demo_err");
    let (config, _) = write_demo_fixtures(&dir);
    let output = run(&[
        "demo-forward",
        "--config",
        config.to_str().unwrap(),
        "--image",
        dir.join("missing.ppm").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn train_toy_emits_deterministic_jsonl() {
    let args = ["train-toy", "--stage", "1", "--steps", "2", "--seed", "3"];
    let first = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, run(&args).stdout);

    let text = stdout_of(&first);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "start + 2 steps + end");
    let start: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(start["event"], "start");
    assert_eq!(start["learning_rate"], 2e-4);
    assert_eq!(start["effective_batch"], 128);
    let step: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert!(step["loss_sum"].as_f64().unwrap() > 0.0);
    assert!(step["tokens"].as_u64().unwrap() > 0);
    let end: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert_eq!(end["frozen_unchanged"], true);
    assert_eq!(end["frozen_sha256"], start["frozen_sha256"]);
}

#[test]
fn train_toy_seed_defaults_to_environment() {
    let with_flag = run(&["train-toy", "--stage", "2", "--steps", "1", "--seed", "7"]);
    let with_env = pheye()
        .args(["train-toy", "--stage", "2", "--steps", "1"])
        .env("PHEYE_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(with_flag.stdout, with_env.stdout);
}

#[test]
fn train_toy_rejects_unknown_stage() {
    let output = run(&["train-toy", "--stage", "5", "--steps", "1"]);
    assert_eq!(output.status.code(), Some(2));
}

fn write_samples_fixture(dir: &std::path::Path) -> PathBuf {
    // Nine samples with ascending relative areas; two models whose
    // per-tertile accuracies are (33.33, 66.67, 100.00) and
    // (66.67, 33.33, 100.00).
    let path = dir.join("samples.jsonl");
    let mut lines = Vec::new();
    for i in 1..=9u32 {
        let m448 = matches!(i, 1 | 4 | 5 | 7 | 8 | 9);
        let m672 = matches!(i, 1 | 2 | 4 | 7 | 8 | 9);
        lines.push(format!(
            "{{\"id\":\"s{i}\",\"image_area\":100.0,\"question\":\"what does the sign say\",\
             \"answers\":[\"stop\"],\"regions\":[{{\"label\":\"stop\",\"area\":{i}.0}}],\
             \"correct\":{{\"m448\":{m448},\"m672\":{m672}}}}}"
        ));
    }
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[test]
fn analyze_tertiles_emits_table_shaped_csv() {
    let dir = temp_dir("tertiles");
    let samples = write_samples_fixture(&dir);
    let output = run(&[
        "analyze",
        "tertiles",
        "--samples",
        samples.to_str().unwrap(),
        "--pair",
        "m448,m672",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let expected = "\
row,bottom,middle,top
count,3,3,3
accuracy:m448,33.33,66.67,100.00
accuracy:m672,66.67,33.33,100.00
delta:m448->m672,+100.00,-50.00,+0.00
";
    assert_eq!(stdout_of(&output), expected);
}

#[test]
fn analyze_tertiles_rejects_unknown_pair_model() {
    let dir = temp_dir("tertiles_err");
    let samples = write_samples_fixture(&dir);
    let output = run(&[
        "analyze",
        "tertiles",
        "--samples",
        samples.to_str().unwrap(),
        "--pair",
        "m448,nope",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

fn write_attention_fixture(dir: &std::path::Path) -> PathBuf {
    let path = dir.join("maps.jsonl");
    let lines = [
        r#"{"sample":"s1","layer":0,"step":0,"head":0,"scores":[0.5,0.25,0.125,0.125]}"#,
        r#"{"sample":"s2","layer":0,"step":0,"head":1,"scores":[0.25,0.25,0.25,0.25]}"#,
        r#"{"sample":"s3","layer":1,"step":0,"head":0,"scores":[0.5,0.5,0.0,0.0]}"#,
        r#"{"sample":"s4","layer":1,"step":1,"head":0,"scores":[0.0,0.0,0.0,1.0]}"#,
    ];
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[test]
fn analyze_attention_emits_per_layer_series() {
    let dir = temp_dir("attention");
    let maps = write_attention_fixture(&dir);
    let output = run(&[
        "analyze",
        "attention",
        "--maps",
        maps.to_str().unwrap(),
        "--global-count",
        "2",
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let expected = "\
layer,global_mass,local_mass,observations
0,0.625000,0.375000,2
1,0.500000,0.500000,2
";
    assert_eq!(stdout_of(&output), expected);
}

#[test]
fn analyze_attention_with_samples_breaks_down_by_tertile() {
    let dir = temp_dir("attention_tertile");
    let maps = dir.join("maps.jsonl");
    std::fs::write(
        &maps,
        [
            r#"{"sample":"s1","layer":0,"step":0,"head":0,"scores":[1.0,0.0,0.0,0.0]}"#,
            r#"{"sample":"s5","layer":0,"step":0,"head":0,"scores":[0.5,0.5,0.0,0.0]}"#,
            r#"{"sample":"s9","layer":0,"step":0,"head":0,"scores":[0.0,0.0,1.0,0.0]}"#,
        ]
        .join("\n"),
    )
    .unwrap();
    let samples = write_samples_fixture(&dir);
    let output = run(&[
        "analyze",
        "attention",
        "--maps",
        maps.to_str().unwrap(),
        "--global-count",
        "2",
        "--samples",
        samples.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let expected = "\
tertile,layer,global_mass,local_mass,observations
bottom,0,1.000000,0.000000,1
middle,0,1.000000,0.000000,1
top,0,0.000000,1.000000,1
";
    assert_eq!(stdout_of(&output), expected);
}

#[test]
fn analyze_attention_rejects_bad_global_count() {
    let dir = temp_dir("attention_err");
    let maps = write_attention_fixture(&dir);
    let output = run(&[
        "analyze",
        "attention",
        "--maps",
        maps.to_str().unwrap(),
        "--global-count",
        "9",
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn analyze_tertiles_json_variant() {
    let dir = temp_dir("tertiles_json");
    let samples = write_samples_fixture(&dir);
    let output = run(&[
        "analyze",
        "tertiles",
        "--samples",
        samples.to_str().unwrap(),
        "--pair",
        "m448,m672",
        "--json",
    ]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(value["count"]["bottom"], 3);
    assert_eq!(value["accuracy"]["m448"]["bottom"], "33.33");
    assert_eq!(value["delta"][0]["bottom"], "+100.00");
}

#[test]
fn analyze_attention_json_variant() {
    let dir = temp_dir("attention_json");
    let maps = write_attention_fixture(&dir);
    let output = run(&[
        "analyze",
        "attention",
        "--maps",
        maps.to_str().unwrap(),
        "--global-count",
        "2",
        "--json",
    ]);
    assert!(output.status.success());
    let value: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(value[0]["layer"], 0);
    assert_eq!(value[0]["global_mass"], 0.625);
    assert_eq!(value[1]["observations"], 2);
}
