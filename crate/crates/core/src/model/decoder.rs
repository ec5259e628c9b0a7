use super::tape::{NodeId, Tape};
use super::tensor::{fill_trunc_normal, Tensor};
use super::ModelError;
use crate::data::BackboneScale;
use crate::float::{derive_seed, Float};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const INIT_STD: f64 = 0.02;

/// Shape of the trainable fusion decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Channel count of the incoming feature maps.
    pub embed_dim: usize,
    /// Internal width of the fusion stream.
    pub fusion_width: usize,
}

impl DecoderConfig {
    pub fn for_scale(scale: BackboneScale) -> Self {
        Self { embed_dim: scale.embed_dim(), fusion_width: scale.fusion_width() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 {
            return Err(ModelError::Shape("decoder embed dim must be positive".into()));
        }
        if self.fusion_width < 2 || !self.fusion_width.is_multiple_of(2) {
            return Err(ModelError::Shape(format!(
                "fusion width {} must be even and at least 2",
                self.fusion_width
            )));
        }
        Ok(())
    }
}

/// Target sizes of the four resampled pyramid stages for a token grid:
/// 4x, 2x, 1x, and half (rounded up), shallow to deep.
pub fn pyramid_dims(gh: usize, gw: usize) -> [(usize, usize); 4] {
    [(4 * gh, 4 * gw), (2 * gh, 2 * gw), (gh, gw), (gh.div_ceil(2), gw.div_ceil(2))]
}

/// The decoder's parameters as named tensors, in a fixed order:
/// four 1x1 resample convs, four two-conv residual fusion units,
/// then the two-conv prediction head.
pub struct DecoderState<T: Float> {
    cfg: DecoderConfig,
    params: Vec<(String, Tensor<T>)>,
}

impl<T: Float> DecoderState<T> {
    pub fn new(cfg: DecoderConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        let f = cfg.fusion_width;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "decoder"));
        let mut weight = |shape: &[usize]| -> Tensor<T> {
            let mut t = Tensor::zeros(shape);
            fill_trunc_normal(&mut rng, INIT_STD, t.data_mut());
            t
        };
        let mut params = Vec::with_capacity(28);
        for k in 0..4 {
            params.push((format!("resample.{k}.weight"), weight(&[f, e, 1, 1])));
            params.push((format!("resample.{k}.bias"), Tensor::zeros(&[f])));
        }
        for k in 0..4 {
            for conv in ["conv1", "conv2"] {
                params.push((format!("fuse.{k}.{conv}.weight"), weight(&[f, f, 3, 3])));
                params.push((format!("fuse.{k}.{conv}.bias"), Tensor::zeros(&[f])));
            }
        }
        params.push(("head.conv1.weight".into(), weight(&[f / 2, f, 3, 3])));
        params.push(("head.conv1.bias".into(), Tensor::zeros(&[f / 2])));
        params.push(("head.conv2.weight".into(), weight(&[1, f / 2, 3, 3])));
        params.push(("head.conv2.bias".into(), Tensor::zeros(&[1])));
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> DecoderConfig {
        self.cfg
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    /// Rebuild from named tensors, validating names, order, and shapes
    /// against a freshly initialized layout.
    pub fn from_params(
        cfg: DecoderConfig,
        params: Vec<(String, Tensor<T>)>,
    ) -> Result<Self, ModelError> {
        let template = Self::new(cfg, 0)?;
        if params.len() != template.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} decoder tensors, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((name, tensor), (want_name, want)) in params.iter().zip(&template.params) {
            if name != want_name {
                return Err(ModelError::Checkpoint(format!(
                    "unexpected tensor {name:?} where {want_name:?} belongs"
                )));
            }
            if tensor.shape() != want.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    want.shape()
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|(_, t)| t.numel() as u64).sum()
    }
}

/// Node handles from one decoder forward pass.
pub struct DecoderForward {
    /// Per-pixel foreground probabilities, shape (1, H, W).
    pub prob: NodeId,
    /// Parameter nodes in [`DecoderState`] order; read gradients from these.
    pub params: Vec<NodeId>,
}

/// Build the decoder graph on a tape: resample each tap to its pyramid
/// size, fuse coarse to fine through residual units, then predict through
/// the head at the requested output size.
pub fn decoder_forward<T: Float>(
    tape: &mut Tape<T>,
    state: &DecoderState<T>,
    features: &[Tensor<T>; 4],
    out_hw: (usize, usize),
    trainable: bool,
) -> Result<DecoderForward, ModelError> {
    let e = state.cfg.embed_dim;
    let (gh, gw) = {
        let s = features[0].shape();
        if s.len() != 3 {
            return Err(ModelError::Shape(format!("feature maps must be rank 3, got {s:?}")));
        }
        (s[1], s[2])
    };
    for (k, feat) in features.iter().enumerate() {
        if feat.shape() != [e, gh, gw] {
            return Err(ModelError::Shape(format!(
                "feature {k} has shape {:?}, expected [{e}, {gh}, {gw}]",
                feat.shape()
            )));
        }
    }
    if out_hw.0 == 0 || out_hw.1 == 0 {
        return Err(ModelError::Shape("output size must be positive".into()));
    }

    let ids: Vec<NodeId> = state
        .params
        .iter()
        .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let dims = pyramid_dims(gh, gw);

    let mut stages = Vec::with_capacity(4);
    for (k, feat) in features.iter().enumerate() {
        let input = tape.constant(feat.clone());
        let projected = tape.conv2d(input, ids[2 * k], ids[2 * k + 1], 1);
        stages.push(tape.resize_bilinear(projected, dims[k].0, dims[k].1));
    }

    let fuse = |tape: &mut Tape<T>, x: NodeId, k: usize, ids: &[NodeId]| -> NodeId {
        let base = 8 + 4 * k;
        let y = tape.conv2d(x, ids[base], ids[base + 1], 3);
        let y = tape.gelu(y);
        let y = tape.conv2d(y, ids[base + 2], ids[base + 3], 3);
        tape.add(x, y)
    };
    let mut fused = fuse(tape, stages[3], 3, &ids);
    for k in (0..3).rev() {
        let up = tape.resize_bilinear(fused, dims[k].0, dims[k].1);
        let sum = tape.add(stages[k], up);
        fused = fuse(tape, sum, k, &ids);
    }

    let y = tape.conv2d(fused, ids[24], ids[25], 3);
    let y = tape.gelu(y);
    let y = tape.conv2d(y, ids[26], ids[27], 3);
    let y = tape.resize_bilinear(y, out_hw.0, out_hw.1);
    let prob = tape.sigmoid(y);
    Ok(DecoderForward { prob, params: ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BinaryMask;
    use crate::model::loss::LossWeights;
    use rand::Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    fn rand_features(rng: &mut ChaCha8Rng, e: usize, g: usize) -> [Tensor<f64>; 4] {
        std::array::from_fn(|_| rand_tensor(rng, &[e, g, g]))
    }

    #[test]
    fn pyramid_sizes_step_down_by_halves() {
        assert_eq!(pyramid_dims(8, 8), [(32, 32), (16, 16), (8, 8), (4, 4)]);
        assert_eq!(pyramid_dims(5, 7), [(20, 28), (10, 14), (5, 7), (3, 4)]);
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = DecoderConfig { embed_dim: 6, fusion_width: 8 };
        let state = DecoderState::<f64>::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let features = rand_features(&mut rng, 6, 4);
        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &state, &features, (32, 32), false).unwrap();
        let prob = tape.value(out.prob);
        assert_eq!(prob.shape(), &[1, 32, 32]);
        assert!(prob.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn zero_features_give_exactly_half_everywhere() {
        let cfg = DecoderConfig { embed_dim: 4, fusion_width: 4 };
        let state = DecoderState::<f64>::new(cfg, 3).unwrap();
        let features: [Tensor<f64>; 4] = std::array::from_fn(|_| Tensor::zeros(&[4, 3, 3]));
        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &state, &features, (12, 12), false).unwrap();
        assert!(tape.value(out.prob).data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn zero_final_conv_pins_output_to_half() {
        let cfg = DecoderConfig { embed_dim: 4, fusion_width: 4 };
        let mut state = DecoderState::<f64>::new(cfg, 4).unwrap();
        let last = state.params_mut().iter_mut().find(|(n, _)| n == "head.conv2.weight");
        for v in last.unwrap().1.data_mut() {
            *v = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let features = rand_features(&mut rng, 4, 3);
        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &state, &features, (9, 9), false).unwrap();
        assert!(tape.value(out.prob).data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn head_bias_shifts_every_probability_up() {
        let cfg = DecoderConfig { embed_dim: 4, fusion_width: 4 };
        let state = DecoderState::<f64>::new(cfg, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features = rand_features(&mut rng, 4, 3);
        let mut tape = Tape::new();
        let base = decoder_forward(&mut tape, &state, &features, (12, 12), false).unwrap();
        let base_probs = tape.value(base.prob).data().to_vec();

        let mut bumped = DecoderState::<f64>::new(cfg, 6).unwrap();
        bumped
            .params_mut()
            .iter_mut()
            .find(|(n, _)| n == "head.conv2.bias")
            .unwrap()
            .1
            .data_mut()[0] += 1.0;
        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &bumped, &features, (12, 12), false).unwrap();
        for (&hi, &lo) in tape.value(out.prob).data().iter().zip(&base_probs) {
            assert!(hi > lo);
        }
    }

    #[test]
    fn mismatched_feature_shapes_are_rejected() {
        let cfg = DecoderConfig { embed_dim: 4, fusion_width: 4 };
        let state = DecoderState::<f64>::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut features = rand_features(&mut rng, 4, 3);
        features[2] = rand_tensor(&mut rng, &[4, 2, 3]);
        let mut tape = Tape::new();
        let res = decoder_forward(&mut tape, &state, &features, (12, 12), false);
        assert!(matches!(res, Err(ModelError::Shape(_))));

        let wrong_channels = [
            rand_tensor(&mut rng, &[5, 3, 3]),
            rand_tensor(&mut rng, &[5, 3, 3]),
            rand_tensor(&mut rng, &[5, 3, 3]),
            rand_tensor(&mut rng, &[5, 3, 3]),
        ];
        let res = decoder_forward(&mut tape, &state, &wrong_channels, (12, 12), false);
        assert!(matches!(res, Err(ModelError::Shape(_))));
    }

    #[test]
    fn param_count_matches_hand_arithmetic() {
        let cfg = DecoderConfig { embed_dim: 32, fusion_width: 64 };
        let state = DecoderState::<f64>::new(cfg, 0).unwrap();
        let resample = 4 * (64 * 32 + 64) as u64;
        let fuse = 4 * 2 * (64 * 64 * 9 + 64) as u64;
        let head = (32 * 64 * 9 + 32 + 32 * 9 + 1) as u64;
        assert_eq!(state.param_count(), resample + fuse + head);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn analytic_gradients_match_finite_differences_through_the_whole_decoder() {
        let cfg = DecoderConfig { embed_dim: 3, fusion_width: 4 };
        let state = DecoderState::<f64>::new(cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let features = rand_features(&mut rng, 3, 2);
        let gt = BinaryMask::from_fn(8, 8, |y, x| (y + x) % 3 == 0);

        let loss_for = |state: &DecoderState<f64>| -> f64 {
            let mut tape = Tape::new();
            let out = decoder_forward(&mut tape, state, &features, (8, 8), true).unwrap();
            let loss = tape.bce_dice_loss(out.prob, &gt, LossWeights::default()).unwrap();
            tape.value(loss).item()
        };

        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &state, &features, (8, 8), true).unwrap();
        let loss = tape.bce_dice_loss(out.prob, &gt, LossWeights::default()).unwrap();
        tape.backward(loss);

        let h = 1e-3;
        for (pi, name) in [
            (0, "resample.0.weight"),
            (7, "resample.3.bias"),
            (8, "fuse.0.conv1.weight"),
            (23, "fuse.3.conv2.bias"),
            (24, "head.conv1.weight"),
            (26, "head.conv2.weight"),
            (27, "head.conv2.bias"),
        ] {
            assert_eq!(state.params()[pi].0, name);
            let analytic = tape.grad(out.params[pi]).unwrap().data().to_vec();
            let coords = state.params()[pi].1.numel().min(5);
            for ci in 0..coords {
                let mut plus = DecoderState::from_params(cfg, state.params().to_vec()).unwrap();
                plus.params_mut()[pi].1.data_mut()[ci] += h;
                let mut minus = DecoderState::from_params(cfg, state.params().to_vec()).unwrap();
                minus.params_mut()[pi].1.data_mut()[ci] -= h;
                let fd = (loss_for(&plus) - loss_for(&minus)) / (2.0 * h);
                let a = analytic[ci];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{ci}]: analytic {a} vs finite difference {fd}");
            }
        }
    }

    #[test]
    fn horizontally_symmetric_kernels_make_the_decoder_flip_equivariant() {
        let cfg = DecoderConfig { embed_dim: 4, fusion_width: 4 };
        let mut state = DecoderState::<f64>::new(cfg, 13).unwrap();
        for (name, t) in state.params_mut() {
            if !name.ends_with("weight") {
                continue;
            }
            let shape = t.shape().to_vec();
            let (kh, kw) = (shape[2], shape[3]);
            if kw == 1 {
                continue;
            }
            let data = t.data_mut();
            let planes = shape[0] * shape[1];
            for p in 0..planes {
                for ky in 0..kh {
                    for kx in 0..kw / 2 {
                        let a = (p * kh + ky) * kw + kx;
                        let b = (p * kh + ky) * kw + (kw - 1 - kx);
                        let mean = 0.5 * (data[a] + data[b]);
                        data[a] = mean;
                        data[b] = mean;
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let features = rand_features(&mut rng, 4, 4);
        let flipped: [Tensor<f64>; 4] = std::array::from_fn(|k| {
            let mut t = features[k].clone();
            let (c, h, w) = (4, 4, 4);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        t.data_mut()[(ch * h + y) * w + x] =
                            features[k].data()[(ch * h + y) * w + (w - 1 - x)];
                    }
                }
            }
            t
        });

        let mut tape = Tape::new();
        let out = decoder_forward(&mut tape, &state, &features, (16, 16), false).unwrap();
        let probs = tape.value(out.prob).data().to_vec();
        let mut tape = Tape::new();
        let out_f = decoder_forward(&mut tape, &state, &flipped, (16, 16), false).unwrap();
        let probs_f = tape.value(out_f.prob).data().to_vec();
        for y in 0..16 {
            for x in 0..16 {
                let a = probs[y * 16 + x];
                let b = probs_f[y * 16 + (15 - x)];
                assert!((a - b).abs() < 1e-12, "({y},{x}): {a} vs {b}");
            }
        }
    }
}
