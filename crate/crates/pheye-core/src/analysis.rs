//! Evaluation analyses: gestalt string similarity, answer-region
//! selection, relative-area tertile partitioning, accuracy deltas, and
//! aggregation of cross-attention mass over global vs. local tokens.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::decoder::GenerationOutput;
use crate::error::{Error, Result};

/// Longest common contiguous block of `a` and `b`; ties resolved to the
/// smallest start in `a`, then the smallest start in `b`.
fn longest_block(a: &[char], b: &[char]) -> (usize, usize, usize) {
    let mut best = (0usize, 0usize, 0usize);
    let mut prev = vec![0usize; b.len() + 1];
    for (i, a_char) in a.iter().enumerate() {
        let mut current = vec![0usize; b.len() + 1];
        for (j, b_char) in b.iter().enumerate() {
            if a_char == b_char {
                let len = prev[j] + 1;
                current[j + 1] = len;
                if len > best.2 {
                    best = (i + 1 - len, j + 1 - len, len);
                }
            }
        }
        prev = current;
    }
    best
}

fn matched_chars(a: &[char], b: &[char]) -> usize {
    let (i, j, len) = longest_block(a, b);
    if len == 0 {
        return 0;
    }
    len + matched_chars(&a[..i], &b[..j]) + matched_chars(&a[i + len..], &b[j + len..])
}

/// Gestalt pattern-matching ratio: locate the longest contiguous matching
/// block, recurse on both flanks, and return
/// 2 * matched / (|a| + |b|) over case-folded characters.
/// Two empty strings are defined to be identical (ratio 1).
pub fn string_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / (a.len() + b.len()) as f64
}

/// Candidate answer region: a text label with its pixel area (bounding
/// box or segmentation mask).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub area: f64,
}

/// One evaluation sample with per-model correctness flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub id: String,
    pub image_area: f64,
    pub question: String,
    pub answers: Vec<String>,
    pub regions: Vec<Region>,
    /// model id -> answered correctly.
    pub correct: BTreeMap<String, bool>,
}

impl AnnotatedSample {
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() || self.answers.is_empty() {
            return Err(Error::Input(format!(
                "sample {} needs at least one region and one answer",
                self.id
            )));
        }
        if self.image_area <= 0.0 {
            return Err(Error::Input(format!("sample {}: image area must be positive", self.id)));
        }
        for region in &self.regions {
            if region.area <= 0.0 || region.area > self.image_area {
                return Err(Error::Input(format!(
                    "sample {}: region '{}' area {} outside (0, image_area]",
                    self.id, region.label, region.area
                )));
            }
        }
        Ok(())
    }
}

/// Yes/no answer sets and all-numeric answer sets are scored against the
/// question text instead of the answers.
pub fn answers_are_yes_no_or_numeric(answers: &[String]) -> bool {
    if answers.is_empty() {
        return false;
    }
    let yes_no = answers
        .iter()
        .all(|a| matches!(a.trim().to_lowercase().as_str(), "yes" | "no"));
    let numeric = answers.iter().all(|a| a.trim().parse::<f64>().is_ok());
    yes_no || numeric
}

/// Pick the region whose label has the highest mean similarity to the
/// ground-truth answers (or to the question, for yes/no and numeric
/// answer sets). Ties go to the larger area, then the earlier region.
pub fn select_region(sample: &AnnotatedSample) -> Result<&Region> {
    sample.validate()?;
    let question_targets = [sample.question.clone()];
    let targets: &[String] = if answers_are_yes_no_or_numeric(&sample.answers) {
        &question_targets
    } else {
        &sample.answers
    };
    let mut best: Option<(&Region, f64)> = None;
    for region in &sample.regions {
        let score = targets
            .iter()
            .map(|t| string_similarity(&region.label, t))
            .sum::<f64>()
            / targets.len() as f64;
        best = match best {
            None => Some((region, score)),
            Some((current, current_score)) => {
                if score > current_score
                    || (score == current_score && region.area > current.area)
                {
                    Some((region, score))
                } else {
                    Some((current, current_score))
                }
            }
        };
    }
    Ok(best.expect("regions validated non-empty").0)
}

/// Relative size S of a region within its image.
pub fn relative_area(region_area: f64, image_area: f64) -> Result<f64> {
    if image_area <= 0.0 {
        return Err(Error::Input("image area must be positive".into()));
    }
    if region_area <= 0.0 {
        return Err(Error::Input("region area must be positive".into()));
    }
    Ok(region_area / image_area)
}

/// Sample ids split into thirds by ascending relative area.
#[derive(Debug, Clone, PartialEq)]
pub struct TertilePartition {
    pub bottom: Vec<String>,
    pub middle: Vec<String>,
    pub top: Vec<String>,
    /// Largest S in the bottom and middle tertiles.
    pub boundaries: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tertile {
    Bottom,
    Middle,
    Top,
}

impl Tertile {
    pub const ALL: [Tertile; 3] = [Tertile::Bottom, Tertile::Middle, Tertile::Top];

    pub fn name(self) -> &'static str {
        match self {
            Tertile::Bottom => "bottom",
            Tertile::Middle => "middle",
            Tertile::Top => "top",
        }
    }
}

impl TertilePartition {
    pub fn ids(&self, tertile: Tertile) -> &[String] {
        match tertile {
            Tertile::Bottom => &self.bottom,
            Tertile::Middle => &self.middle,
            Tertile::Top => &self.top,
        }
    }

    pub fn tertile_of(&self, id: &str) -> Option<Tertile> {
        Tertile::ALL.into_iter().find(|&tertile| self.ids(tertile).iter().any(|s| s == id))
    }
}

/// Stable ascending sort by S, cut at ceil(n/3) and ceil(2n/3); the
/// remainder goes to the earlier tertiles, and ties keep input order.
pub fn tertile_partition(scored: &[(String, f64)]) -> Result<TertilePartition> {
    let n = scored.len();
    if n < 3 {
        return Err(Error::Input(format!("tertile partition needs >= 3 samples, got {n}")));
    }
    let mut sorted: Vec<&(String, f64)> = scored.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let cut1 = n.div_ceil(3);
    let cut2 = (2 * n).div_ceil(3);
    let bottom: Vec<String> = sorted[..cut1].iter().map(|s| s.0.clone()).collect();
    let middle: Vec<String> = sorted[cut1..cut2].iter().map(|s| s.0.clone()).collect();
    let top: Vec<String> = sorted[cut2..].iter().map(|s| s.0.clone()).collect();
    let boundaries = (sorted[cut1 - 1].1, sorted[cut2 - 1].1);
    Ok(TertilePartition {
        bottom,
        middle,
        top,
        boundaries,
    })
}

/// Partition annotated samples by the relative area of their selected
/// answer region.
pub fn partition_samples(samples: &[AnnotatedSample]) -> Result<TertilePartition> {
    let mut scored = Vec::with_capacity(samples.len());
    for sample in samples {
        let region = select_region(sample)?;
        scored.push((sample.id.clone(), relative_area(region.area, sample.image_area)?));
    }
    tertile_partition(&scored)
}

/// Accuracy (percent) of one model over the given sample ids.
pub fn accuracy_over(
    samples: &[AnnotatedSample],
    ids: &[String],
    model: &str,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::Input("accuracy over an empty tertile".into()));
    }
    let by_id: BTreeMap<&str, &AnnotatedSample> =
        samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut correct = 0usize;
    for id in ids {
        let sample = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Contract(format!("unknown sample id {id}")))?;
        let flag = sample
            .correct
            .get(model)
            .ok_or_else(|| Error::Contract(format!("sample {id} has no flag for model {model}")))?;
        if *flag {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / ids.len() as f64)
}

/// Relative accuracy change in percent, rounded to two decimals
/// (half away from zero): 100 * (high - low) / low. A zero low accuracy
/// leaves the delta undefined (None).
pub fn tertile_accuracy_delta(low: f64, high: f64) -> Result<Option<f64>> {
    for value in [low, high] {
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::Input(format!("accuracy {value} outside [0, 100]")));
        }
    }
    if low == 0.0 {
        return Ok(None);
    }
    let delta = 100.0 * (high - low) / low;
    Ok(Some((delta * 100.0).round() / 100.0))
}

/// Render a delta as the signed two-decimal form used in reports.
pub fn format_delta(delta: Option<f64>) -> String {
    match delta {
        Some(value) => format!("{value:+.2}"),
        None => "undefined".into(),
    }
}

/// One recorded cross-attention distribution: a single (sample, layer,
/// generation step, head) observation over all vision tokens.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub sample: String,
    pub layer: usize,
    pub step: usize,
    pub head: usize,
    pub scores: Vec<f64>,
}

/// Mean global-token attention mass per cross-attention layer. The local
/// mass is 1 - global by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSummary {
    /// (layer index, mean global mass, observation count).
    pub per_layer: Vec<(usize, f64, usize)>,
}

impl AttentionSummary {
    pub fn global_mass(&self, layer: usize) -> Option<f64> {
        self.per_layer
            .iter()
            .find(|(l, _, _)| *l == layer)
            .map(|(_, mass, _)| *mass)
    }

    pub fn local_mass(&self, layer: usize) -> Option<f64> {
        self.global_mass(layer).map(|g| 1.0 - g)
    }
}

/// Aggregate flat records: uniform weighting over every (sample, step,
/// head) observation, grouped by layer.
pub fn aggregate_records(
    records: &[AttentionRecord],
    global_count: usize,
    local_count: usize,
) -> Result<AttentionSummary> {
    if records.is_empty() {
        return Err(Error::Input("no attention records".into()));
    }
    let total = global_count + local_count;
    let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for record in records {
        if record.scores.len() != total {
            return Err(Error::Contract(format!(
                "attention record for sample {} layer {} has {} entries, expected {}",
                record.sample,
                record.layer,
                record.scores.len(),
                total
            )));
        }
        let global_mass: f64 = record.scores[..global_count].iter().sum();
        buckets.entry(record.layer).or_default().push(global_mass);
    }
    // Contributions are summed in sorted order so the mean is exactly
    // invariant to record permutations.
    Ok(AttentionSummary {
        per_layer: buckets
            .into_iter()
            .map(|(layer, mut masses)| {
                masses.sort_by(f64::total_cmp);
                let count = masses.len();
                (layer, masses.iter().sum::<f64>() / count as f64, count)
            })
            .collect(),
    })
}

/// Flatten generation outputs into per-observation records. Block index
/// becomes the layer key.
pub fn records_from_outputs(
    outputs: &[(String, GenerationOutput)],
) -> Vec<AttentionRecord> {
    let mut records = Vec::new();
    for (sample, output) in outputs {
        for (layer, steps) in output.cross_attention_maps.iter().enumerate() {
            for (step, heads) in steps.iter().enumerate() {
                for (head, scores) in heads.iter().enumerate() {
                    records.push(AttentionRecord {
                        sample: sample.clone(),
                        layer,
                        step,
                        head,
                        scores: scores.clone(),
                    });
                }
            }
        }
    }
    records
}

/// Mean global attention mass per layer over generated captions.
pub fn attention_aggregate(
    outputs: &[(String, GenerationOutput)],
    global_count: usize,
    local_count: usize,
) -> Result<AttentionSummary> {
    aggregate_records(&records_from_outputs(outputs), global_count, local_count)
}

/// Per-tertile aggregation: records are grouped by the tertile of their
/// sample. Records whose sample is missing from the partition are a
/// contract error.
pub fn aggregate_by_tertile(
    records: &[AttentionRecord],
    partition: &TertilePartition,
    global_count: usize,
    local_count: usize,
) -> Result<Vec<(Tertile, AttentionSummary)>> {
    let mut buckets: BTreeMap<&'static str, Vec<AttentionRecord>> = BTreeMap::new();
    for record in records {
        let tertile = partition.tertile_of(&record.sample).ok_or_else(|| {
            Error::Contract(format!("sample {} not present in the partition", record.sample))
        })?;
        buckets.entry(tertile.name()).or_default().push(record.clone());
    }
    let mut out = Vec::new();
    for tertile in Tertile::ALL {
        if let Some(records) = buckets.get(tertile.name()) {
            out.push((tertile, aggregate_records(records, global_count, local_count)?));
        }
    }
    Ok(out)
}

/// Parse JSON-lines of [`AnnotatedSample`], validating each line.
pub fn read_samples_jsonl(reader: impl BufRead) -> Result<Vec<AnnotatedSample>> {
    let mut samples = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AnnotatedSample = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("samples line {}: {e}", number + 1)))?;
        sample.validate()?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Input("no samples in input".into()));
    }
    Ok(samples)
}

/// Parse JSON-lines of [`AttentionRecord`].
pub fn read_attention_jsonl(reader: impl BufRead) -> Result<Vec<AttentionRecord>> {
    let mut records = Vec::new();
    for (number, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AttentionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("attention line {}: {e}", number + 1)))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Input("no attention records in input".into()));
    }
    Ok(records)
}
