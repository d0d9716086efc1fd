//! Exact multiplication-count calculators for the four architectures
//! (monolithic ViT, tiled multi-patch ViT, concatenation-style language
//! model, cross-attention language model), efficiency ratios, and
//! reconciliation of analytic counts against instrumented ledgers.
//!
//! All arithmetic is exact: u128 integers and reduced rationals. The
//! headline counts exceed 2^32 and float rounding would corrupt ratio
//! digits.

use crate::error::{Error, Result};
use crate::ledger::{MulCategory, MulLedger};

/// Reduced non-negative rational with exact decimal rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: u128,
    den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rational {
    pub fn new(num: u128, den: u128) -> Result<Rational> {
        if den == 0 {
            return Err(Error::Numeric("rational with zero denominator".into()));
        }
        if num == 0 {
            return Ok(Rational { num: 0, den: 1 });
        }
        let g = gcd(num, den);
        Ok(Rational {
            num: num / g,
            den: den / g,
        })
    }

    pub fn from_int(value: u128) -> Rational {
        Rational { num: value, den: 1 }
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn denominator(&self) -> u128 {
        self.den
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn add_int(&self, value: u128) -> Rational {
        Rational {
            num: self.num + value * self.den,
            den: self.den,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact comparison against another rational.
    pub fn cmp_exact(&self, other: &Rational) -> std::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    /// Fixed-point decimal string with round-half-away-from-zero, computed
    /// without any float intermediate.
    pub fn to_decimal_string(&self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let scaled = self.num * scale;
        let quotient = scaled / self.den;
        let remainder = scaled % self.den;
        let rounded = if 2 * remainder >= self.den {
            quotient + 1
        } else {
            quotient
        };
        if places == 0 {
            return rounded.to_string();
        }
        let int = rounded / scale;
        let frac = rounded % scale;
        format!("{int}.{frac:0width$}", width = places as usize)
    }

    /// "num/den" form for audit output.
    pub fn to_fraction_string(&self) -> String {
        format!("{}/{}", self.num, self.den)
    }
}

/// Per-layer multiplication counts for one transformer layer (q/k/v/o
/// projections, score product, value product, feed-forward).
pub fn vit_layer_categories(n: u64, d: u64) -> CategoryCounts {
    let (n, d) = (n as u128, d as u128);
    CategoryCounts {
        projection: 4 * n * d * d,
        attention_scores: d * n * n,
        attention_values: d * n * n,
        feedforward: 8 * n * d * d,
    }
}

/// Monolithic ViT cost per layer: 12*N*D^2 + D*N^2 under the published
/// accounting (projections + score product + feed-forward).
pub fn vit_cost(n: u64, d: u64) -> u128 {
    vit_layer_categories(n, d).paper_total()
}

/// Tiled multi-patch encoder cost per layer: the per-sub-image cost over
/// N' tokens, times P sub-images.
pub fn pheye_vit_cost(n_per_sub: u64, d: u64, sub_images: u64) -> u128 {
    vit_cost(n_per_sub, d) * sub_images as u128
}

/// Concatenation-baseline language model cost per layer: one plain
/// decoder layer over N_T + N_I tokens.
pub fn llava_lm_cost(n_text: u64, n_vision: u64, d: u64) -> u128 {
    vit_cost(n_text + n_vision, d)
}

/// Per-cross-block multiplication counts: K/V maps from ViT width,
/// Q/O maps at model width, the cross score and value products, and the
/// dense feed-forward.
pub fn cross_block_categories(n_text: u64, n_vision: u64, d: u64, d_vit: u64) -> CategoryCounts {
    let (nt, ni, d, dv) = (n_text as u128, n_vision as u128, d as u128, d_vit as u128);
    CategoryCounts {
        projection: 2 * ni * dv * d + 2 * nt * d * d,
        attention_scores: d * nt * ni,
        attention_values: d * nt * ni,
        feedforward: 8 * nt * d * d,
    }
}

/// Cross-attention language model average cost per decoder layer: one
/// plain decoder layer over the text tokens plus 1/I of a dense
/// cross-attention block, kept exact as a rational.
pub fn pheye_lm_cost(
    n_text: u64,
    n_vision: u64,
    d: u64,
    d_vit: u64,
    interval: u64,
) -> Result<Rational> {
    if interval == 0 {
        return Err(Error::Config("cross-attention interval must be positive".into()));
    }
    let plain = vit_cost(n_text, d);
    let cross = cross_block_categories(n_text, n_vision, d, d_vit).paper_total();
    Rational::new(plain * interval as u128 + cross, interval as u128)
}

/// baseline / method with exact arithmetic; `method` must be positive.
pub fn efficiency_ratio(baseline: u128, method: &Rational) -> Result<Rational> {
    if method.numerator() == 0 {
        return Err(Error::Numeric("efficiency ratio with zero method cost".into()));
    }
    Rational::new(baseline * method.denominator(), method.numerator())
}

/// Exact per-category expectation for one instrumented run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryCounts {
    pub projection: u128,
    pub attention_scores: u128,
    pub attention_values: u128,
    pub feedforward: u128,
}

impl CategoryCounts {
    pub fn scaled(&self, factor: u128) -> CategoryCounts {
        CategoryCounts {
            projection: self.projection * factor,
            attention_scores: self.attention_scores * factor,
            attention_values: self.attention_values * factor,
            feedforward: self.feedforward * factor,
        }
    }

    pub fn plus(&self, other: &CategoryCounts) -> CategoryCounts {
        CategoryCounts {
            projection: self.projection + other.projection,
            attention_scores: self.attention_scores + other.attention_scores,
            attention_values: self.attention_values + other.attention_values,
            feedforward: self.feedforward + other.feedforward,
        }
    }

    /// Published-formula accounting: the value product is excluded.
    pub fn paper_total(&self) -> u128 {
        self.projection + self.attention_scores + self.feedforward
    }

    pub fn full_total(&self) -> u128 {
        self.paper_total() + self.attention_values
    }

    pub fn get(&self, category: MulCategory) -> u128 {
        match category {
            MulCategory::Projection => self.projection,
            MulCategory::AttentionScores => self.attention_scores,
            MulCategory::AttentionValues => self.attention_values,
            MulCategory::FeedForward => self.feedforward,
            MulCategory::Other => 0,
        }
    }
}

/// Token counts and dimensionalities feeding the calculators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostInputs {
    /// N: tokens of the monolithic full-resolution ViT.
    pub full_res_tokens: u64,
    /// N': tokens per sub-image.
    pub tokens_per_sub_image: u64,
    /// P: sub-images (global + locals).
    pub sub_images: u64,
    /// N_T: text tokens.
    pub text_tokens: u64,
    /// N_I: vision tokens entering the language model.
    pub vision_tokens: u64,
    /// D: language model width.
    pub lm_dim: u64,
    /// D_ViT: vision encoder width.
    pub vit_dim: u64,
    /// I: cross-attention insertion interval.
    pub interval: u64,
}

impl CostInputs {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("full_res_tokens", self.full_res_tokens),
            ("tokens_per_sub_image", self.tokens_per_sub_image),
            ("sub_images", self.sub_images),
            ("text_tokens", self.text_tokens),
            ("vision_tokens", self.vision_tokens),
            ("lm_dim", self.lm_dim),
            ("vit_dim", self.vit_dim),
            ("interval", self.interval),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.sub_images > 1 {
            let derived = (self.full_res_tokens - 1) / (self.sub_images - 1) + 1;
            if !(self.full_res_tokens - 1).is_multiple_of(self.sub_images - 1)
                || derived != self.tokens_per_sub_image
            {
                return Err(Error::Config(format!(
                    "tokens per sub-image {} inconsistent with (N-1)/(P-1)+1 for N={}, P={}",
                    self.tokens_per_sub_image, self.full_res_tokens, self.sub_images
                )));
            }
        }
        Ok(())
    }

    /// Derive N' from N and P, requiring exact divisibility.
    pub fn derive_tokens_per_sub_image(full_res_tokens: u64, sub_images: u64) -> Result<u64> {
        if sub_images < 2 {
            return Ok(full_res_tokens);
        }
        if !(full_res_tokens - 1).is_multiple_of(sub_images - 1) {
            return Err(Error::Config(format!(
                "(N-1) = {} not divisible by (P-1) = {}",
                full_res_tokens - 1,
                sub_images - 1
            )));
        }
        Ok((full_res_tokens - 1) / (sub_images - 1) + 1)
    }
}

/// The four analytic architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formula {
    VitMonolithic,
    VitTiled,
    LmConcat,
    LmCross,
}

impl Formula {
    pub fn name(self) -> &'static str {
        match self {
            Formula::VitMonolithic => "vit_monolithic",
            Formula::VitTiled => "vit_tiled",
            Formula::LmConcat => "lm_concat",
            Formula::LmCross => "lm_cross",
        }
    }
}

/// Geometry and layer count of one instrumented run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub formula: Formula,
    pub inputs: CostInputs,
    pub layers: u64,
}

impl RunSpec {
    /// Exact per-category expectation over the whole run. For the
    /// cross-attention model this counts the structural insertion points
    /// (ceil(layers / I) blocks before layers 0, I, 2I, ...).
    pub fn expected_categories(&self) -> Result<CategoryCounts> {
        if self.layers == 0 {
            return Err(Error::Config("run with zero layers".into()));
        }
        let i = &self.inputs;
        let per = match self.formula {
            Formula::VitMonolithic => vit_layer_categories(i.full_res_tokens, i.vit_dim),
            Formula::VitTiled => vit_layer_categories(i.tokens_per_sub_image, i.vit_dim)
                .scaled(i.sub_images as u128),
            Formula::LmConcat => {
                vit_layer_categories(i.text_tokens + i.vision_tokens, i.lm_dim)
            }
            Formula::LmCross => vit_layer_categories(i.text_tokens, i.lm_dim),
        };
        let mut total = per.scaled(self.layers as u128);
        if self.formula == Formula::LmCross {
            if i.interval == 0 {
                return Err(Error::Config("cross-attention interval must be positive".into()));
            }
            let blocks = self.layers.div_ceil(i.interval) as u128;
            total = total.plus(
                &cross_block_categories(i.text_tokens, i.vision_tokens, i.lm_dim, i.vit_dim)
                    .scaled(blocks),
            );
        }
        Ok(total)
    }
}

/// Which multiplications the comparison covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accounting {
    /// Projections, score product, feed-forward: the published formulas.
    Paper,
    /// Everything the ledger counted, including the value product.
    Full,
}

#[derive(Debug, Clone)]
pub struct ReconcileRow {
    pub category: MulCategory,
    pub analytic: u128,
    pub counted: u128,
}

impl ReconcileRow {
    pub fn delta(&self) -> i128 {
        self.counted as i128 - self.analytic as i128
    }
}

#[derive(Debug, Clone)]
pub struct ReconcileReport {
    pub formula: Formula,
    pub accounting: Accounting,
    pub rows: Vec<ReconcileRow>,
    pub analytic_total: u128,
    pub counted_total: u128,
    /// Multiplications the run performed outside the formula accounting
    /// (LoRA branches, patch embedding, unembedding); informational.
    pub uncounted_other: u128,
}

impl ReconcileReport {
    pub fn delta_total(&self) -> i128 {
        self.counted_total as i128 - self.analytic_total as i128
    }

    pub fn is_exact(&self) -> bool {
        self.delta_total() == 0 && self.rows.iter().all(|r| r.delta() == 0)
    }
}

/// Compare analytic expectations against an instrumented ledger.
/// `run` describes what was actually executed; a mismatch with the
/// analytic geometry is a contract error.
pub fn reconcile(
    analytic: &RunSpec,
    run: &RunSpec,
    ledger: &MulLedger,
    accounting: Accounting,
) -> Result<ReconcileReport> {
    if analytic != run {
        return Err(Error::Contract(format!(
            "instrumented run {run:?} does not match analytic inputs {analytic:?}"
        )));
    }
    let expected = analytic.expected_categories()?;
    let compared: &[MulCategory] = match accounting {
        Accounting::Paper => &[
            MulCategory::Projection,
            MulCategory::AttentionScores,
            MulCategory::FeedForward,
        ],
        Accounting::Full => &[
            MulCategory::Projection,
            MulCategory::AttentionScores,
            MulCategory::AttentionValues,
            MulCategory::FeedForward,
        ],
    };
    let rows: Vec<ReconcileRow> = compared
        .iter()
        .map(|&category| ReconcileRow {
            category,
            analytic: expected.get(category),
            counted: ledger.get(category),
        })
        .collect();
    let analytic_total = rows.iter().map(|r| r.analytic).sum();
    let counted_total = rows.iter().map(|r| r.counted).sum();
    Ok(ReconcileReport {
        formula: analytic.formula,
        accounting,
        rows,
        analytic_total,
        counted_total,
        uncounted_other: ledger.get(MulCategory::Other),
    })
}

/// Full analytic report: the four per-layer costs, per-category
/// breakdowns, and the two efficiency ratios.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub inputs: CostInputs,
    pub vit_monolithic: u128,
    pub vit_monolithic_breakdown: CategoryCounts,
    pub vit_tiled: u128,
    pub vit_tiled_breakdown: CategoryCounts,
    pub lm_concat: u128,
    pub lm_concat_breakdown: CategoryCounts,
    pub lm_cross: Rational,
    pub lm_cross_decoder_layer: CategoryCounts,
    pub lm_cross_block: CategoryCounts,
    /// vit_monolithic / vit_tiled.
    pub vision_ratio: Rational,
    /// lm_concat / lm_cross.
    pub lm_ratio: Rational,
}

pub fn cost_report(inputs: &CostInputs) -> Result<CostReport> {
    inputs.validate()?;
    let i = inputs;
    let vit_monolithic_breakdown = vit_layer_categories(i.full_res_tokens, i.vit_dim);
    let vit_tiled_breakdown =
        vit_layer_categories(i.tokens_per_sub_image, i.vit_dim).scaled(i.sub_images as u128);
    let lm_concat_breakdown = vit_layer_categories(i.text_tokens + i.vision_tokens, i.lm_dim);
    let lm_cross = pheye_lm_cost(i.text_tokens, i.vision_tokens, i.lm_dim, i.vit_dim, i.interval)?;
    let vit_monolithic = vit_monolithic_breakdown.paper_total();
    let vit_tiled = vit_tiled_breakdown.paper_total();
    let lm_concat = lm_concat_breakdown.paper_total();
    Ok(CostReport {
        inputs: *inputs,
        vit_monolithic,
        vit_monolithic_breakdown,
        vit_tiled,
        vit_tiled_breakdown,
        lm_concat,
        lm_concat_breakdown,
        lm_cross,
        lm_cross_decoder_layer: vit_layer_categories(i.text_tokens, i.lm_dim),
        lm_cross_block: cross_block_categories(i.text_tokens, i.vision_tokens, i.lm_dim, i.vit_dim),
        vision_ratio: efficiency_ratio(vit_monolithic, &Rational::from_int(vit_tiled))?,
        lm_ratio: efficiency_ratio(lm_concat, &lm_cross)?,
    })
}

#[cfg(test)]
mod tests;
