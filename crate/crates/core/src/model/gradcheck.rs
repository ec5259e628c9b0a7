use super::decoder::{decoder_forward, DecoderState};
use super::loss::LossWeights;
use super::tape::Tape;
use super::tensor::Tensor;
use super::ModelError;
use crate::data::BinaryMask;
use crate::float::{derive_seed, Float};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-8;

/// Worst finite-difference disagreement inside one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_abs_err).fold(0.0, f64::max)
    }
}

fn loss_value<T: Float>(
    decoder: &DecoderState<T>,
    features: &[Tensor<T>; 4],
    gt: &BinaryMask,
    weights: LossWeights<T>,
) -> Result<T, ModelError> {
    let mut tape = Tape::new();
    let fwd = decoder_forward(&mut tape, decoder, features, (gt.height(), gt.width()), true)?;
    let loss = tape.bce_dice_loss(fwd.prob, gt, weights)?;
    Ok(tape.value(loss).item())
}

/// Compare tape gradients against central finite differences on a random
/// sample of coordinates per parameter group (group = name prefix before
/// the first dot). Relative error uses |a - fd| / max(|a|, |fd|, floor),
/// so exact zero agreement scores zero.
pub fn check_gradients<T: Float>(
    decoder: &DecoderState<T>,
    features: &[Tensor<T>; 4],
    gt: &BinaryMask,
    weights: LossWeights<T>,
    samples_per_group: usize,
    seed: u64,
) -> Result<GradReport, ModelError> {
    let mut tape = Tape::new();
    let fwd = decoder_forward(&mut tape, decoder, features, (gt.height(), gt.width()), true)?;
    let loss = tape.bce_dice_loss(fwd.prob, gt, weights)?;
    tape.backward(loss);
    let analytic: Vec<Vec<f64>> = fwd
        .params
        .iter()
        .zip(decoder.params())
        .map(|(&id, (_, p))| match tape.grad(id) {
            Some(g) => g.data().iter().map(|v| v.to_f64_lossy()).collect(),
            None => vec![0.0; p.numel()],
        })
        .collect();

    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, (name, _)) in decoder.params().iter().enumerate() {
        let prefix = name.split('.').next().unwrap_or(name).to_string();
        match groups.iter_mut().find(|(g, _)| *g == prefix) {
            Some((_, idxs)) => idxs.push(i),
            None => groups.push((prefix, vec![i])),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gradcheck"));
    let h = T::from_f64_exactish(FD_STEP);
    let mut scratch = DecoderState::from_params(decoder.config(), decoder.params().to_vec())?;
    let mut report = Vec::with_capacity(groups.len());
    for (name, tensor_idxs) in groups {
        let total: usize = tensor_idxs.iter().map(|&i| decoder.params()[i].1.numel()).sum();
        let checked = samples_per_group.min(total);
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for _ in 0..checked {
            let mut flat = rng.gen_range(0..total);
            let mut ti = tensor_idxs[0];
            for &i in &tensor_idxs {
                let n = decoder.params()[i].1.numel();
                if flat < n {
                    ti = i;
                    break;
                }
                flat -= n;
            }

            let original = scratch.params()[ti].1.data()[flat];
            scratch.params_mut()[ti].1.data_mut()[flat] = original + h;
            let up = loss_value(&scratch, features, gt, weights)?.to_f64_lossy();
            scratch.params_mut()[ti].1.data_mut()[flat] = original - h;
            let down = loss_value(&scratch, features, gt, weights)?.to_f64_lossy();
            scratch.params_mut()[ti].1.data_mut()[flat] = original;

            let fd = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ti][flat];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(REL_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        report.push(GroupReport { name, checked, max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(GradReport { groups: report })
}
