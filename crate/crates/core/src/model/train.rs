use super::decoder::{decoder_forward, DecoderConfig, DecoderState};
use super::encoder::Encoder;
use super::loss::LossWeights;
use super::optim::{cosine_lr, AdamW};
use super::tape::Tape;
use super::tensor::Tensor;
use super::ModelError;
use crate::data::{BinaryMask, Image, ProbMask};
use crate::float::{derive_seed, kahan_mean, Float};
use crate::metrics::{confusion, dice, iou};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One annotated frame, already sized for the encoder.
#[derive(Clone)]
pub struct TrainSample<T: Float> {
    pub image: Image<T>,
    pub mask: BinaryMask,
}

/// Per-epoch log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
    pub val_iou: f64,
}

pub type LearningCurve = Vec<EpochRow>;

pub struct TrainedModel<T: Float> {
    pub decoder: DecoderState<T>,
    pub curve: LearningCurve,
}

/// Hyperparameters for one training run. The frozen encoder is passed
/// separately and is never touched.
#[derive(Debug, Clone, Copy)]
pub struct Trainer<T: Float> {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossWeights<T>,
    pub threshold: T,
}

impl<T: Float> Trainer<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Shape("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Shape("learning rate must be positive and finite".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ModelError::Shape("weight decay must be non-negative".into()));
        }
        let tau = self.threshold.to_f64_lossy();
        if !(tau > 0.0 && tau < 1.0) {
            return Err(ModelError::Shape("threshold must lie strictly inside (0, 1)".into()));
        }
        Ok(())
    }
}

/// Encode every sample once; the frozen backbone makes features reusable
/// across all epochs.
pub fn cache_features<T: Float>(
    encoder: &Encoder<T>,
    samples: &[TrainSample<T>],
) -> Result<Vec<[Tensor<T>; 4]>, ModelError> {
    samples.par_iter().map(|s| encoder.picked(&s.image)).collect()
}

/// Probability map from cached features, no gradient bookkeeping.
pub fn predict_prob<T: Float>(
    decoder: &DecoderState<T>,
    features: &[Tensor<T>; 4],
    out_hw: (usize, usize),
) -> Result<ProbMask<T>, ModelError> {
    let mut tape = Tape::new();
    let fwd = decoder_forward(&mut tape, decoder, features, out_hw, false)?;
    let probs = tape.value(fwd.prob).data().to_vec();
    ProbMask::new(out_hw.0, out_hw.1, probs)
        .map_err(|e| ModelError::Shape(format!("prediction is not a probability map: {e}")))
}

/// Mean Dice and IoU of thresholded predictions over a labeled set.
pub fn evaluate_decoder<T: Float>(
    decoder: &DecoderState<T>,
    features: &[[Tensor<T>; 4]],
    masks: &[&BinaryMask],
    threshold: T,
) -> Result<(f64, f64), ModelError> {
    assert_eq!(features.len(), masks.len(), "feature/mask count mismatch");
    if masks.is_empty() {
        return Err(ModelError::EmptySet("evaluation set".into()));
    }
    let scores: Vec<(f64, f64)> = features
        .par_iter()
        .zip(masks)
        .map(|(f, gt)| {
            let prob = predict_prob(decoder, f, (gt.height(), gt.width()))?;
            let c = confusion(&prob.threshold(threshold), gt)
                .map_err(|e| ModelError::Shape(e.to_string()))?;
            Ok((dice::<f64>(&c), iou::<f64>(&c)))
        })
        .collect::<Result<_, ModelError>>()?;
    let d = kahan_mean(scores.iter().map(|s| s.0)).expect("non-empty");
    let j = kahan_mean(scores.iter().map(|s| s.1)).expect("non-empty");
    Ok((d, j))
}

/// Train a fresh decoder on cached features with mini-batch AdamW under a
/// cosine schedule. Batch gradients are averaged in index order, so runs
/// are reproducible for a fixed seed regardless of thread count.
pub fn train_decoder<T: Float>(
    encoder: &Encoder<T>,
    trainer: &Trainer<T>,
    train: &[TrainSample<T>],
    val: &[TrainSample<T>],
) -> Result<TrainedModel<T>, ModelError> {
    trainer.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySet("training set".into()));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySet("validation set".into()));
    }

    let train_feats = cache_features(encoder, train)?;
    let val_feats = cache_features(encoder, val)?;
    let val_masks: Vec<&BinaryMask> = val.iter().map(|s| &s.mask).collect();

    let cfg = DecoderConfig::for_scale(encoder.config().scale);
    let mut decoder = DecoderState::new(cfg, trainer.seed)?;
    let mut opt: AdamW<T> = AdamW::new(T::from_f64_exactish(trainer.weight_decay));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(trainer.seed, "train:order"));

    let mut curve = Vec::with_capacity(trainer.epochs);
    for epoch in 0..trainer.epochs {
        let lr = T::from_f64_exactish(cosine_lr(trainer.learning_rate, epoch, trainer.epochs));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(trainer.batch_size) {
            let results: Vec<(T, Vec<Tensor<T>>)> = batch
                .par_iter()
                .map(|&i| {
                    let sample = &train[i];
                    let mut tape = Tape::new();
                    let out_hw = (sample.mask.height(), sample.mask.width());
                    let fwd = decoder_forward(&mut tape, &decoder, &train_feats[i], out_hw, true)?;
                    let loss = tape.bce_dice_loss(fwd.prob, &sample.mask, trainer.loss)?;
                    tape.backward(loss);
                    let value = tape.value(loss).item();
                    let grads = fwd
                        .params
                        .iter()
                        .zip(decoder.params())
                        .map(|(&id, (_, p))| {
                            tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()))
                        })
                        .collect();
                    Ok((value, grads))
                })
                .collect::<Result<_, ModelError>>()?;

            let inv = T::one() / T::from_usize_exactish(batch.len());
            let mut grads: Vec<Tensor<T>> =
                decoder.params().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
            for (value, frame_grads) in &results {
                let v = value.to_f64_lossy();
                if !v.is_finite() {
                    return Err(ModelError::Divergence { epoch: epoch + 1, loss: v });
                }
                loss_sum += v;
                for (acc, g) in grads.iter_mut().zip(frame_grads) {
                    for (a, &gv) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += gv * inv;
                    }
                }
            }
            opt.step(decoder.params_mut(), &grads, lr);
        }

        let (val_dice, val_iou) =
            evaluate_decoder(&decoder, &val_feats, &val_masks, trainer.threshold)?;
        curve.push(EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_dice,
            val_iou,
        });
    }

    Ok(TrainedModel { decoder, curve })
}
