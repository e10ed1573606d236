use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adam_step, generalized_dice_loss, one_hot, AdamState, LabelMask, TrainConfig};
use crate::dsp::TARGET_FS;
use crate::error::{Error, Result};
use crate::metrics::{default_grid, f1_curve_and_bar, SpindleEvent};
use crate::model::{ArchConfig, Checkpoint, ModelParams};
use crate::nn::Tensor;
use crate::postproc::{detect, ExtractOptions};

/// A z-scored 100 Hz training segment and its label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub signal: Vec<f32>,
    pub mask: LabelMask,
}

/// A z-scored 100 Hz validation segment and its reference events.
#[derive(Clone, Debug, PartialEq)]
pub struct ValExample {
    pub signal: Vec<f32>,
    pub events: Vec<SpindleEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss.
    pub loss: f64,
    pub val_f1_bar: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged { epoch: usize, detail: String },
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Latest parameters; `model.meta` carries the epoch and early-stopping
    /// counters.
    pub model: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Parameters from the epoch with the best validation F1-bar.
    pub best: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let model = ModelParams::build(arch, seed)?;
        let adam = AdamState::new(&model.learnable());
        Ok(Self { best: model.clone(), model, adam, history: Vec::new() })
    }

    /// Latest parameters with optimizer moments, and the best parameters.
    pub fn to_checkpoints(&self) -> (Checkpoint, Checkpoint) {
        let last = Checkpoint {
            model: self.model.clone(),
            optimizer_step: Some(self.adam.step),
            extra: self.adam.to_named(&self.model.learnable_names()),
        };
        (last, Checkpoint::from_model(self.best.clone()))
    }

    pub fn from_checkpoints(last: Checkpoint, best: Checkpoint, history: Vec<EpochRecord>) -> Result<Self> {
        if last.model.arch != best.model.arch {
            return Err(Error::Format("latest and best checkpoints have different architectures".into()));
        }
        let step = last
            .optimizer_step
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let names = last.model.learnable_names();
        let adam = AdamState::from_named(&last.extra, &names, &last.model.learnable(), step)?;
        Ok(Self { model: last.model, adam, best: best.model, history })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn best(&self) -> &ModelParams<f32> {
        &self.state.best
    }
}

pub fn steps_per_epoch(segments: usize, batch_size: usize) -> usize {
    segments.div_ceil(batch_size)
}

/// Pooled F1-bar of the model's detections over the validation segments.
pub fn validation_f1_bar(model: &ModelParams<f32>, val: &[ValExample]) -> Result<f64> {
    let detected: Vec<Vec<SpindleEvent>> = val
        .par_iter()
        .map(|v| detect(model, &v.signal, TARGET_FS, &ExtractOptions::default()))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&[SpindleEvent], &[SpindleEvent])> =
        val.iter().zip(&detected).map(|(v, d)| (v.events.as_slice(), d.as_slice())).collect();
    Ok(f1_curve_and_bar(&pairs, &default_grid())?.f1_bar)
}

/// Trains a freshly initialized model (seeded by `cfg.seed`).
pub fn train_fold(train: &[TrainExample], val: &[ValExample], arch: &ArchConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_resume(TrainState::new(arch, cfg.seed)?, train, val, cfg, &mut |_| Ok(()))
}

fn check_inputs(train: &[TrainExample], val: &[ValExample]) -> Result<usize> {
    let Some(first) = train.first() else {
        return Err(Error::Config("no training segments".into()));
    };
    if val.is_empty() {
        return Err(Error::Config("no validation segments".into()));
    }
    let len = first.signal.len();
    for (i, ex) in train.iter().enumerate() {
        if ex.signal.len() != len {
            return Err(Error::Config(format!(
                "training segments must share one length: segment {i} has {} samples, expected {len}",
                ex.signal.len()
            )));
        }
        if ex.mask.len() != len {
            return Err(Error::Shape(format!("segment {i}: mask length {} vs {len} samples", ex.mask.len())));
        }
    }
    Ok(len)
}

/// Continues training from `state` until early stopping, the epoch limit,
/// or divergence. `on_epoch` sees the state after every epoch.
///
/// Minibatches are drawn from a shuffle seeded by `(cfg.seed, epoch)`; the
/// last short batch is kept. The best parameters change only on a strict
/// improvement of validation F1-bar.
pub fn train_resume(
    mut state: TrainState,
    train: &[TrainExample],
    val: &[ValExample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let len = check_inputs(train, val)?;
    let adam = cfg.adam();
    let done = |s: &TrainState| -> Option<StopReason> {
        let m = &s.model.meta;
        if m.best_val_f1_bar.is_some() && m.stale_epochs > cfg.patience_epochs {
            Some(StopReason::Patience)
        } else if m.epoch >= cfg.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        }
    };

    while done(&state).is_none() {
        let epoch = state.model.meta.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut data = Vec::with_capacity(b * len);
            for &i in chunk {
                data.extend_from_slice(&train[i].signal);
            }
            let x = Tensor::new(vec![b, 1, len], data)?;
            let masks: Vec<&LabelMask> = chunk.iter().map(|&i| &train[i].mask).collect();
            let r = one_hot::<f32>(&masks)?;
            let (probs, cache) = state.model.forward_train(&x)?;
            let (loss, g) = generalized_dice_loss(&probs, &r)?;
            if !loss.is_finite() {
                let detail = format!("loss became {loss} at batch {batches}");
                return Ok(TrainOutcome { state, stop: StopReason::Diverged { epoch, detail } });
            }
            let grads = state.model.backward(&cache, &g)?;
            let step = {
                let gl = grads.learnable();
                let mut pl = state.model.learnable_mut();
                adam_step(&mut pl, &gl, &mut state.adam, &adam)
            };
            match step {
                Ok(()) => {}
                Err(Error::Numerical(detail)) => {
                    return Ok(TrainOutcome { state, stop: StopReason::Diverged { epoch, detail } });
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss;
            batches += 1;
        }
        let loss = loss_sum / batches as f64;
        let val_f1_bar = validation_f1_bar(&state.model, val)?;
        let meta = &mut state.model.meta;
        meta.epoch = epoch;
        let improved = meta.best_val_f1_bar.is_none_or(|b| val_f1_bar > b);
        if improved {
            meta.best_val_f1_bar = Some(val_f1_bar);
            meta.best_epoch = epoch;
            meta.stale_epochs = 0;
            state.best = state.model.clone();
        } else {
            meta.stale_epochs += 1;
            state.best.meta = meta.clone();
            // the best parameters keep the epoch they came from
            state.best.meta.epoch = meta.best_epoch;
        }
        log::info!("epoch {epoch}: loss {loss:.5} val F1-bar {val_f1_bar:.4}{}", if improved { " *" } else { "" });
        state.history.push(EpochRecord { epoch, loss, val_f1_bar, improved });
        on_epoch(&state)?;
    }
    let stop = done(&state).expect("loop exits on a stop condition");
    Ok(TrainOutcome { state, stop })
}
