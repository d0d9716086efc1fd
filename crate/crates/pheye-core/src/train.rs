//! Toy training harness: sum-reduced loss with gradient normalization by
//! output-token count, cosine learning-rate decay, plain SGD over the
//! trainable set, and a synthetic rectangle task that is solvable only
//! through the vision tokens.

use serde::Serialize;

use crate::decoder::PheyeModel;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::ledger::MulLedger;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::vision::{TokenOrigin, VisionTokens, VitGeometry};

/// Per-stage optimization settings. The three stage presets carry the
/// published learning rates (2e-4, 1e-4, 5e-5) and an effective batch of
/// 128 sequences assembled by gradient accumulation.
#[derive(Debug, Clone, Copy)]
pub struct StageConfig {
    pub learning_rate: f64,
    pub total_steps: usize,
    pub effective_batch: usize,
    pub micro_batch: usize,
    pub seed: u64,
}

impl StageConfig {
    pub fn stage(stage: u8) -> Result<StageConfig> {
        let learning_rate = match stage {
            1 => 2e-4,
            2 => 1e-4,
            3 => 5e-5,
            other => return Err(Error::Config(format!("unknown training stage {other}"))),
        };
        Ok(StageConfig {
            learning_rate,
            total_steps: 200,
            effective_batch: 128,
            micro_batch: 16,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batch == 0 || self.effective_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.micro_batch > self.effective_batch
            || !self.effective_batch.is_multiple_of(self.micro_batch)
        {
            return Err(Error::Config(format!(
                "effective batch {} must be a multiple of micro batch {}",
                self.effective_batch, self.micro_batch
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Cosine decay from the base rate to zero over the schedule:
/// base * 0.5 * (1 + cos(pi * step / total)).
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Contract(format!(
            "step {step} beyond schedule end {total_steps}"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Sum-reduced cross-entropy over the masked output positions, plus the
/// number of tokens in the mask (the divisor used before the optimizer
/// update).
pub fn loss_sum(
    logits: &Tensor,
    targets: &[usize],
    output_mask: &[bool],
) -> Result<(Tensor, usize)> {
    let loss = logits.cross_entropy_sum(targets, output_mask)?;
    let tokens = output_mask.iter().filter(|&&m| m).count();
    Ok((loss, tokens))
}

/// Plain stochastic gradient descent over named parameter handles.
pub struct Sgd {
    parameters: Vec<(String, Tensor)>,
}

impl Sgd {
    pub fn new(parameters: Vec<(String, Tensor)>) -> Sgd {
        Sgd { parameters }
    }

    pub fn parameters(&self) -> &[(String, Tensor)] {
        &self.parameters
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.parameters {
            p.zero_grad();
        }
    }

    /// Divide every accumulated gradient by the total output-token count
    /// of the batch, then apply one descent step and clear the grads.
    pub fn accumulate_and_step(&mut self, learning_rate: f64, token_count_total: usize) -> Result<()> {
        if token_count_total == 0 {
            return Err(Error::Contract(
                "optimizer step with zero output tokens".into(),
            ));
        }
        let scale = 1.0 / token_count_total as f64;
        for (_, p) in &self.parameters {
            p.scale_grad(scale);
            if let Some(grad) = p.grad() {
                p.map_data_mut(|data| {
                    for (d, g) in data.iter_mut().zip(&grad) {
                        *d -= learning_rate * g;
                    }
                });
            }
            p.zero_grad();
        }
        Ok(())
    }
}

/// Token ids of the synthetic task vocabulary.
pub mod task_tokens {
    pub const BOS: usize = 0;
    pub const ASK: usize = 1;
    pub const COLOR_BASE: usize = 2; // red, green, blue -> 2, 3, 4
    pub const QUADRANT_BASE: usize = 5; // TL, TR, BL, BR -> 5, 6, 7, 8
    pub const VOCAB: usize = 12;
}

/// One training triple.
#[derive(Debug, Clone)]
pub struct TaskSample {
    pub image: Image,
    pub prompt: Vec<usize>,
    pub target: Vec<usize>,
}

impl TaskSample {
    /// Teacher-forcing views: model inputs, next-token targets, and the
    /// output mask selecting target positions.
    pub fn teacher_forcing(&self) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
        let full: Vec<usize> = self.prompt.iter().chain(&self.target).copied().collect();
        let inputs = full[..full.len() - 1].to_vec();
        let next = full[1..].to_vec();
        let mask: Vec<bool> = (1..full.len())
            .map(|pos| pos >= self.prompt.len())
            .collect();
        (inputs, next, mask)
    }
}

/// Generator of colored-rectangle images with prompts that are constant
/// across samples, so the targets (rectangle color, sometimes also its
/// quadrant) are predictable only through the vision tokens. Target
/// length varies between one and two tokens to exercise the token-count
/// normalization.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub geometry: VitGeometry,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(geometry: VitGeometry, seed: u64) -> Result<SyntheticTask> {
        geometry.validate()?;
        if geometry.channels != 3 {
            return Err(Error::Config(
                "the rectangle task encodes color over three channels".into(),
            ));
        }
        Ok(SyntheticTask { geometry, seed })
    }

    /// Deterministic sample for an index: same seed and index, same triple.
    pub fn sample(&self, index: u64) -> TaskSample {
        let mut rng = Rng::new(self.seed ^ index.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
        let side = self.geometry.target_resolution;
        let color = rng.next_below(3) as usize;
        let quadrant = rng.next_below(4) as usize;

        let mut image = Image::zeros(3, side, side);
        for value in image.data.iter_mut() {
            *value = 0.1;
        }
        // Rectangle fills the middle half of its quadrant.
        let half = side / 2;
        let (top, left) = (
            (quadrant / 2) * half + half / 4,
            (quadrant % 2) * half + half / 4,
        );
        for y in top..top + half / 2 {
            for x in left..left + half / 2 {
                image.set(color, y, x, 0.9);
            }
        }

        let mut target = vec![task_tokens::COLOR_BASE + color];
        if rng.next_below(2) == 1 {
            target.push(task_tokens::QUADRANT_BASE + quadrant);
        }
        TaskSample {
            image,
            prompt: vec![task_tokens::BOS, task_tokens::ASK],
            target,
        }
    }
}

/// Whether the conditioning path carries image information or zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisionMode {
    Normal,
    /// Vision tokens replaced by zeros: the no-information control.
    Ablated,
}

/// All-zero vision tokens with the geometry's origin layout.
fn zeroed_vision_tokens(geometry: &VitGeometry) -> VisionTokens {
    let n_per = geometry.tokens_per_sub_image();
    let subs = geometry.sub_image_count();
    let mut origin = vec![TokenOrigin::Global; n_per];
    for tile in 0..subs - 1 {
        origin.extend(std::iter::repeat_n(TokenOrigin::Local(tile), n_per));
    }
    VisionTokens {
        tokens: Tensor::zeros(vec![geometry.total_tokens(), geometry.d_vit]),
        origin,
        global_count: n_per,
        local_count: (subs - 1) * n_per,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_sum: f64,
    pub tokens: usize,
    pub mean_loss: f64,
}

#[derive(Debug)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub frozen_checksums_start: Vec<(String, String)>,
    pub frozen_checksums_end: Vec<(String, String)>,
}

impl TrainLog {
    pub fn mean_loss_over(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.records[range];
        slice.iter().map(|r| r.mean_loss).sum::<f64>() / slice.len() as f64
    }
}

/// Run the optimization loop: per step, accumulate sum-reduced losses and
/// gradients over `effective_batch` sequences (in `micro_batch` groups),
/// divide the gradients by the total output-token count, and apply one
/// SGD update at the cosine-decayed rate. Only the trainable set moves;
/// frozen checksums are recorded at start and end.
pub fn train(
    model: &PheyeModel,
    task: &SyntheticTask,
    config: &StageConfig,
    vision_mode: VisionMode,
) -> Result<TrainLog> {
    config.validate()?;
    if task.geometry != *model.encoder.geometry() {
        return Err(Error::Config(
            "task geometry does not match the model's encoder".into(),
        ));
    }
    let mut optimizer = Sgd::new(model.trainable_parameters());
    optimizer.zero_grads();
    let frozen_checksums_start = model.frozen_checksums();
    let mut dropout_rng = Rng::new(config.seed ^ 0x5eed_d20f);
    let mut records = Vec::with_capacity(config.total_steps);
    let mut data_index: u64 = 0;

    for step in 0..config.total_steps {
        let lr = cosine_lr(step, config.total_steps, config.learning_rate)?;
        let mut step_loss = 0.0;
        let mut step_tokens = 0usize;
        for _ in 0..config.effective_batch / config.micro_batch {
            for _ in 0..config.micro_batch {
                let sample = task.sample(data_index);
                data_index += 1;
                let ledger = MulLedger::new();
                let vision = match vision_mode {
                    VisionMode::Normal => {
                        model
                            .encoder
                            .encode(&sample.image, &ledger, Some(&mut dropout_rng))?
                    }
                    VisionMode::Ablated => zeroed_vision_tokens(model.encoder.geometry()),
                };
                let (inputs, next, mask) = sample.teacher_forcing();
                let diverged = |detail: String| {
                    Error::Numeric(format!(
                        "training diverged at step {step} ({detail}); \
                         lr {lr}, batch index {data_index}"
                    ))
                };
                let logits = model
                    .forward(&inputs, &vision, &ledger, None)
                    .map_err(|e| match e {
                        Error::Numeric(detail) => diverged(detail),
                        other => other,
                    })?;
                let (loss, tokens) = loss_sum(&logits, &next, &mask)?;
                let loss_value = loss.item()?;
                if !loss_value.is_finite() {
                    return Err(diverged(format!("loss {loss_value}")));
                }
                loss.backward()?;
                step_loss += loss_value;
                step_tokens += tokens;
            }
        }
        optimizer.accumulate_and_step(lr, step_tokens)?;
        records.push(TrainRecord {
            step,
            lr,
            loss_sum: step_loss,
            tokens: step_tokens,
            mean_loss: step_loss / step_tokens as f64,
        });
    }

    Ok(TrainLog {
        records,
        frozen_checksums_start,
        frozen_checksums_end: model.frozen_checksums(),
    })
}
