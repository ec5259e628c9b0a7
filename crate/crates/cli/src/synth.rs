use crate::cfgfile::SynthConfig;
use anyhow::{Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sonobench_core::data::{
    save_manifest, save_mask, BinaryMask, DatasetManifest, FrameRecord, Pathology,
};
use sonobench_core::float::derive_seed;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

const BACKGROUND: f64 = 0.4;
const SHADOW_GAIN: f64 = 0.45;

/// Rayleigh draw with unit mean.
fn rayleigh_unit_mean(rng: &mut ChaCha8Rng) -> f64 {
    let sigma = (2.0 / PI).sqrt();
    let u: f64 = rng.gen();
    sigma * (-2.0 * (1.0 - u).ln()).sqrt()
}

struct Lesion {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    wobble_amp: f64,
    wobble_phase: f64,
    lobes: f64,
}

impl Lesion {
    fn sample(cfg: &SynthConfig, pathology: Pathology, rng: &mut ChaCha8Rng) -> Self {
        let s = cfg.image_size as f64;
        let jitter = s / 8.0;
        let cx = s / 2.0 + rng.gen_range(-jitter..jitter);
        let cy = s / 2.0 + rng.gen_range(-jitter..jitter);
        let a = rng.gen_range(cfg.lesion_radius_min..=cfg.lesion_radius_max);
        let b = rng.gen_range(cfg.lesion_radius_min..=cfg.lesion_radius_max);
        let theta = rng.gen_range(0.0..PI);
        let (wobble_amp, lobes) = match pathology {
            Pathology::Benign => (rng.gen_range(0.0..0.05), 3.0),
            Pathology::Malignant => (rng.gen_range(0.10..0.22), rng.gen_range(3..6) as f64),
        };
        let wobble_phase = rng.gen_range(0.0..2.0 * PI);
        Lesion { cx, cy, a, b, theta, wobble_amp, wobble_phase, lobes }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.theta.cos() + dy * self.theta.sin();
        let v = -dx * self.theta.sin() + dy * self.theta.cos();
        let r = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        let phi = v.atan2(u);
        let boundary = 1.0 + self.wobble_amp * (self.lobes * phi + self.wobble_phase).sin();
        r <= boundary
    }
}

/// Separable 3x3 binomial blur with clamped borders.
fn blur3(field: &[f64], h: usize, w: usize) -> Vec<f64> {
    let tap = |x: &[f64], i: isize, n: usize| x[i.clamp(0, n as isize - 1) as usize];
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..w {
            let xi = x as isize;
            horiz[y * w + x] =
                0.25 * tap(row, xi - 1, w) + 0.5 * row[x] + 0.25 * tap(row, xi + 1, w);
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let col = |yy: isize| horiz[(yy.clamp(0, h as isize - 1) as usize) * w + x];
            let yi = y as isize;
            out[y * w + x] = 0.25 * col(yi - 1) + 0.5 * horiz[y * w + x] + 0.25 * col(yi + 1);
        }
    }
    out
}

struct Shadow {
    apex_x: f64,
    tilt: f64,
    half_angle: f64,
}

/// One frame: the quantized image bytes and the ground-truth lesion mask.
fn render_frame(
    cfg: &SynthConfig,
    pathology: Pathology,
    rng: &mut ChaCha8Rng,
) -> (Vec<u8>, BinaryMask) {
    let s = cfg.image_size;
    let lesion = Lesion::sample(cfg, pathology, rng);

    let mask = BinaryMask::from_fn(s, s, |y, x| lesion.contains(x as f64 + 0.5, y as f64 + 0.5));
    let mut contrast_field: Vec<f64> =
        mask.bits().iter().map(|&b| if b != 0 { cfg.contrast } else { 0.0 }).collect();
    if cfg.speckle_strength > 0.0 {
        contrast_field = blur3(&contrast_field, s, s);
    }

    let mut values: Vec<f64> = contrast_field.iter().map(|c| BACKGROUND - c).collect();
    if cfg.speckle_strength > 0.0 {
        let k = cfg.speckle_strength;
        for v in &mut values {
            *v *= (1.0 - k) + k * rayleigh_unit_mean(rng);
        }
    }

    let shadow = if cfg.shadow_probability > 0.0 && rng.gen::<f64>() < cfg.shadow_probability {
        Some(Shadow {
            apex_x: rng.gen_range(0.0..s as f64),
            tilt: rng.gen_range(-0.3..0.3),
            half_angle: rng.gen_range(0.08..0.25),
        })
    } else {
        None
    };
    if let Some(sh) = &shadow {
        for y in 0..s {
            for x in 0..s {
                let angle = (x as f64 + 0.5 - sh.apex_x).atan2(y as f64 + 1.0);
                if (angle - sh.tilt).abs() <= sh.half_angle {
                    values[y * s + x] *= SHADOW_GAIN;
                }
            }
        }
    }

    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    (bytes, mask)
}

/// Renders the whole dataset under `out_dir` and returns the manifest path.
/// Every frame is seeded independently from (seed, patient, frame), so the
/// corpus is byte-identical across runs and machines.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    std::fs::create_dir_all(&images_dir)?;
    std::fs::create_dir_all(&masks_dir)?;

    let malignant_count = (cfg.malignant_fraction * cfg.n_patients as f64).round() as usize;
    let mut records = Vec::with_capacity(cfg.n_patients * cfg.frames_per_patient);
    for p in 0..cfg.n_patients {
        let pathology = if p < malignant_count { Pathology::Malignant } else { Pathology::Benign };
        let patient_id = format!("p{p:03}");
        for f in 0..cfg.frames_per_patient {
            let frame_id = format!("f{f:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &format!("synth:{patient_id}:{frame_id}"),
            ));
            let (bytes, mask) = render_frame(cfg, pathology, &mut rng);
            let image_rel = PathBuf::from(format!("images/{patient_id}_{frame_id}.pgm"));
            let mask_rel = PathBuf::from(format!("masks/{patient_id}_{frame_id}.pgm"));
            sonobench_core::data::save_image_u8(
                &out_dir.join(&image_rel),
                cfg.image_size,
                cfg.image_size,
                &bytes,
            )
            .context("writing image")?;
            save_mask(&out_dir.join(&mask_rel), &mask).context("writing mask")?;
            records.push(FrameRecord {
                patient_id: patient_id.clone(),
                frame_id,
                pathology,
                image_path: image_rel,
                mask_path: Some(mask_rel),
            });
        }
    }
    let manifest = DatasetManifest::from_records(records)
        .map_err(|e| anyhow::anyhow!("synthesized manifest is inconsistent: {e}"))?;
    let manifest_path = out_dir.join("manifest.tsv");
    save_manifest(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sonobench_core::data::{load_manifest, load_mask, Image};

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_patients: 2,
            frames_per_patient: 3,
            image_size: 32,
            lesion_radius_min: 4.0,
            lesion_radius_max: 8.0,
            contrast: 0.25,
            speckle_strength: 0.2,
            shadow_probability: 0.1,
            malignant_fraction: 0.5,
            seed: 7,
        }
    }

    fn hash_tree(dir: &Path) -> u64 {
        let mut paths: Vec<PathBuf> = walk(dir);
        paths.sort();
        let mut acc: u64 = 0xcbf29ce484222325;
        for p in paths {
            let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
            for chunk in [rel.into_bytes(), std::fs::read(&p).unwrap()] {
                for b in chunk {
                    acc ^= b as u64;
                    acc = acc.wrapping_mul(0x100000001b3);
                }
            }
        }
        acc
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
        out
    }

    #[test]
    fn two_patients_three_frames_yield_six_records() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = synth_generate(&small_cfg(), dir.path()).unwrap();
        let manifest = load_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.records().len(), 6);
        assert_eq!(manifest.patients().len(), 2);
        assert_eq!(manifest.num_annotated(), 6);
        let malignant =
            manifest.records().iter().filter(|r| r.pathology == Pathology::Malignant).count();
        assert_eq!(malignant, 3);
    }

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_generate(&small_cfg(), d1.path()).unwrap();
        synth_generate(&small_cfg(), d2.path()).unwrap();
        assert_eq!(hash_tree(d1.path()), hash_tree(d2.path()));

        let d3 = tempfile::tempdir().unwrap();
        let mut other = small_cfg();
        other.seed = 8;
        synth_generate(&other, d3.path()).unwrap();
        assert_ne!(hash_tree(d1.path()), hash_tree(d3.path()));
    }

    #[test]
    fn noiseless_images_hit_the_contrast_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.speckle_strength = 0.0;
        cfg.shadow_probability = 0.0;
        cfg.contrast = 0.2;
        let manifest = load_manifest(&synth_generate(&cfg, dir.path()).unwrap()).unwrap();
        for rec in manifest.records() {
            let img: Image<f64> = sonobench_core::data::load_image(&rec.image_path).unwrap();
            let mask = load_mask(rec.mask_path.as_ref().unwrap()).unwrap();
            for (v, &inside) in img.plane(0).iter().zip(mask.bits()) {
                let byte = (v * 255.0).round() as u8;
                assert_eq!(byte, if inside != 0 { 51 } else { 102 });
            }
        }
    }

    #[test]
    fn masks_are_nonempty_and_away_from_the_border() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = load_manifest(&synth_generate(&small_cfg(), dir.path()).unwrap()).unwrap();
        for rec in manifest.records() {
            let mask = load_mask(rec.mask_path.as_ref().unwrap()).unwrap();
            let area = mask.count_ones();
            assert!(area > 20, "lesion too small: {area}");
            assert!(area < 32 * 32 / 2, "lesion too big: {area}");
        }
    }

    #[test]
    fn shadows_only_darken_the_image_and_leave_masks_alone() {
        let base = {
            let mut c = small_cfg();
            c.shadow_probability = 0.0;
            c
        };
        let shadowed = {
            let mut c = small_cfg();
            c.shadow_probability = 1.0;
            c
        };
        let d0 = tempfile::tempdir().unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let m0 = load_manifest(&synth_generate(&base, d0.path()).unwrap()).unwrap();
        let m1 = load_manifest(&synth_generate(&shadowed, d1.path()).unwrap()).unwrap();
        let mut darkened = 0usize;
        for (r0, r1) in m0.records().iter().zip(m1.records()) {
            let i0: Image<f64> = sonobench_core::data::load_image(&r0.image_path).unwrap();
            let i1: Image<f64> = sonobench_core::data::load_image(&r1.image_path).unwrap();
            let mask0 = load_mask(r0.mask_path.as_ref().unwrap()).unwrap();
            let mask1 = load_mask(r1.mask_path.as_ref().unwrap()).unwrap();
            assert_eq!(mask0.bits(), mask1.bits());
            for (a, b) in i0.plane(0).iter().zip(i1.plane(0)) {
                assert!(*b <= a + 1.0 / 255.0, "shadow brightened a pixel");
                if b + 0.05 < *a {
                    darkened += 1;
                }
            }
        }
        assert!(darkened > 50, "expected a visible wedge, got {darkened} dark pixels");
    }
}
