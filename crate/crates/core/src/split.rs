//! Patient-level stratified splitting and nested data-starvation subsets.
//!
//! Frames never move independently of their patient, so any split produced
//! here is leakage-free by construction at both levels.

use crate::data::{DatasetManifest, Pathology, SplitRatios};
use crate::float::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("stratum {0} has {1} patients, need at least 3")]
    TooFewPatients(Pathology, usize),
    #[error("bad ratios: {0}")]
    BadRatios(String),
    #[error("bad fraction: {0}")]
    BadFraction(String),
}

pub type Result<T> = std::result::Result<T, SplitError>;

/// Disjoint patient partition. Parts are stored sorted, so equal splits
/// compare and serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

const PARTS: usize = 3;

/// Allocate `size` seats to the three parts, extending `cum_alloc` so that
/// every part stays within one seat of its cumulative quota `cum_quota`.
/// Within the stratum each part receives its quota floor, and leftover seats
/// go to the parts lagging their cumulative quota the most, one each.
fn allocate_stratum(
    size: usize,
    ratios: [f64; PARTS],
    cum_quota: &mut [f64; PARTS],
    cum_alloc: &mut [usize; PARTS],
) -> [usize; PARTS] {
    let mut alloc = [0usize; PARTS];
    for p in 0..PARTS {
        let q = ratios[p] * size as f64;
        cum_quota[p] += q;
        alloc[p] = q.floor() as usize;
    }
    let mut assigned: usize = alloc.iter().sum();
    let mut extras = [0usize; PARTS];
    while assigned < size {
        let mut best: Option<usize> = None;
        for p in 0..PARTS {
            if extras[p] > 0 {
                continue;
            }
            let deficit = cum_quota[p] - (cum_alloc[p] + alloc[p]) as f64;
            let better = match best {
                None => true,
                Some(b) => deficit > cum_quota[b] - (cum_alloc[b] + alloc[b]) as f64,
            };
            if better {
                best = Some(p);
            }
        }
        // All parts capped: fall back to the largest deficit regardless.
        let p = best.unwrap_or_else(|| {
            (0..PARTS)
                .max_by(|&a, &b| {
                    let da = cum_quota[a] - (cum_alloc[a] + alloc[a]) as f64;
                    let db = cum_quota[b] - (cum_alloc[b] + alloc[b]) as f64;
                    da.partial_cmp(&db).expect("finite quotas")
                })
                .expect("three parts")
        });
        alloc[p] += 1;
        extras[p] += 1;
        assigned += 1;
    }
    for p in 0..PARTS {
        cum_alloc[p] += alloc[p];
    }
    alloc
}

/// Partition patients into train/val/test so that each pathology stratum is
/// split close to `ratios` and no patient spans two parts. Deterministic for
/// a fixed (manifest, ratios, seed).
pub fn stratified_split(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split> {
    ratios.validate().map_err(|e| SplitError::BadRatios(e.to_string()))?;
    let rv = [ratios.train, ratios.val, ratios.test];

    // Strata in a fixed pathology order, each as a sorted patient list.
    let mut strata: Vec<(Pathology, Vec<String>)> = Vec::new();
    for pathology in [Pathology::Benign, Pathology::Malignant] {
        let patients: Vec<String> = manifest
            .patients()
            .into_iter()
            .filter(|p| manifest.pathology_of(p) == Some(pathology))
            .map(str::to_string)
            .collect();
        if patients.is_empty() {
            continue;
        }
        if patients.len() < 3 {
            return Err(SplitError::TooFewPatients(pathology, patients.len()));
        }
        strata.push((pathology, patients));
    }

    let mut parts: [Vec<String>; PARTS] = [Vec::new(), Vec::new(), Vec::new()];
    let mut cum_quota = [0f64; PARTS];
    let mut cum_alloc = [0usize; PARTS];
    for (pathology, mut patients) in strata {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("split:{pathology}")));
        patients.shuffle(&mut rng);
        let alloc = allocate_stratum(patients.len(), rv, &mut cum_quota, &mut cum_alloc);
        let mut rest = patients;
        for p in 0..PARTS {
            let tail = rest.split_off(alloc[p]);
            parts[p].extend(rest);
            rest = tail;
        }
        debug_assert!(rest.is_empty());
    }
    for part in &mut parts {
        part.sort();
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test, seed, ratios })
}

/// Nested starvation subsets: shuffle the training patients once, then take
/// prefixes. Fraction 1.0 keeps everything; smaller fractions keep
/// floor(f·n) patients, so subsets for smaller fractions are strict subsets
/// of larger ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarvationLadder {
    /// Descending, always starting at 1.0.
    pub fractions: Vec<f64>,
    /// Parallel to `fractions`; each is a prefix of the shuffled order.
    pub subsets: Vec<Vec<String>>,
    pub seed: u64,
}

impl StarvationLadder {
    pub fn subset_for(&self, fraction: f64) -> Option<&[String]> {
        self.fractions.iter().position(|&f| f == fraction).map(|i| self.subsets[i].as_slice())
    }
}

pub fn starve(train_patients: &[String], fractions: &[f64], seed: u64) -> Result<StarvationLadder> {
    if fractions.is_empty() {
        return Err(SplitError::BadFraction("no fractions given".into()));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(SplitError::BadFraction(format!("{f} outside (0,1]")));
        }
    }
    let mut sorted: Vec<f64> = fractions.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite fractions"));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(SplitError::BadFraction("duplicate fraction".into()));
    }
    if sorted[0] != 1.0 {
        return Err(SplitError::BadFraction("fractions must include 1.0".into()));
    }

    let mut order: Vec<String> = train_patients.to_vec();
    order.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "starve"));
    order.shuffle(&mut rng);

    let n = order.len();
    let subsets = sorted
        .iter()
        .map(|&f| {
            let k = if f == 1.0 { n } else { ((f * n as f64).floor() as usize).min(n) };
            order[..k].to_vec()
        })
        .collect();
    Ok(StarvationLadder { fractions: sorted, subsets, seed })
}
