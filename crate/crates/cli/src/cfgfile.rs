use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sonobench_core::data::ExperimentConfig;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

fn default_image_size() -> usize {
    64
}
fn default_radius_min() -> f64 {
    8.0
}
fn default_radius_max() -> f64 {
    16.0
}
fn default_contrast() -> f64 {
    0.25
}
fn default_speckle() -> f64 {
    0.2
}
fn default_shadow() -> f64 {
    0.1
}
fn default_malignant() -> f64 {
    0.5
}

/// Synthetic dataset recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub frames_per_patient: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Lesion semi-axis range in pixels; both axes draw from it.
    #[serde(default = "default_radius_min")]
    pub lesion_radius_min: f64,
    #[serde(default = "default_radius_max")]
    pub lesion_radius_max: f64,
    /// Intensity drop of the lesion relative to the background.
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    /// Blend weight of the multiplicative speckle field; 0 disables it.
    #[serde(default = "default_speckle")]
    pub speckle_strength: f64,
    #[serde(default = "default_shadow")]
    pub shadow_probability: f64,
    #[serde(default = "default_malignant")]
    pub malignant_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.frames_per_patient == 0 {
            bail!("synth needs at least one patient and one frame per patient");
        }
        if self.image_size < 16 {
            bail!("image size {} is too small to hold a lesion", self.image_size);
        }
        if !(self.lesion_radius_min > 0.0 && self.lesion_radius_min <= self.lesion_radius_max) {
            bail!(
                "lesion radius range [{}, {}] is empty or negative",
                self.lesion_radius_min,
                self.lesion_radius_max
            );
        }
        if self.lesion_radius_max >= self.image_size as f64 / 2.0 {
            bail!(
                "lesion radius {} does not fit a {}px image",
                self.lesion_radius_max,
                self.image_size
            );
        }
        if !(self.contrast > 0.0 && self.contrast < 0.4) {
            bail!("contrast {} outside (0, 0.4)", self.contrast);
        }
        if !(0.0..=1.0).contains(&self.speckle_strength) {
            bail!("speckle strength {} outside [0, 1]", self.speckle_strength);
        }
        for (name, p) in [
            ("shadow_probability", self.shadow_probability),
            ("malignant_fraction", self.malignant_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bail!("{name} {p} outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// Optional file locations, resolved relative to the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<PathBuf>,
}

/// Top-level config file. Unknown keys anywhere are errors so hyperparameter
/// typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl FileConfig {
    /// CLI `--seed` beats whatever the file says, everywhere a seed lives.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            if let Some(synth) = &mut self.synth {
                synth.seed = s;
            }
            if let Some(exp) = &mut self.experiment {
                exp.seed = s;
            }
        }
    }

    pub fn require_synth(&self) -> Result<SynthConfig> {
        self.synth.context("config has no [synth] section")
    }

    pub fn require_experiment(&self) -> Result<ExperimentConfig> {
        self.experiment.clone().context("config has no [experiment] section")
    }

    pub fn require_manifest(&self) -> Result<PathBuf> {
        self.paths.manifest.clone().context("config has no paths.manifest entry")
    }

    pub fn require_checkpoint(&self) -> Result<PathBuf> {
        self.paths.checkpoint.clone().context("config has no paths.checkpoint entry")
    }

    pub fn require_records(&self) -> Result<PathBuf> {
        self.paths.records.clone().context("config has no paths.records entry")
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
    if cfg.schema_version != SCHEMA_VERSION {
        bail!(
            "config {} has schema_version {}, this build expects {}",
            path.display(),
            cfg.schema_version,
            SCHEMA_VERSION
        );
    }
    if let Some(synth) = &cfg.synth {
        synth.validate()?;
    }
    if let Some(exp) = &cfg.experiment {
        exp.validate().map_err(|e| anyhow::anyhow!("bad [experiment] section: {e}"))?;
    }
    let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    cfg.paths.manifest = cfg.paths.manifest.take().map(|p| resolve(&base, p));
    cfg.paths.checkpoint = cfg.paths.checkpoint.take().map(|p| resolve(&base, p));
    cfg.paths.records = cfg.paths.records.take().map(|p| resolve(&base, p));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("cfg.toml");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn minimal_config_round_trips_with_defaults() {
        let dir = tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "schema_version = 1\n\n[synth]\nn_patients = 4\nframes_per_patient = 2\n",
        );
        let cfg = load_config(&path).unwrap();
        let synth = cfg.require_synth().unwrap();
        assert_eq!(synth.image_size, 64);
        assert_eq!(synth.contrast, 0.25);
        assert!(cfg.experiment.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "schema_version = 1\n\n[experiment]\nseed = 1\nscale = \"toy\"\nlerning_rate = 0.1\n",
        );
        let err = load_config(&path).unwrap_err().to_string();
        assert!(err.contains("cannot parse config"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = write_config(dir.path(), "schema_version = 2\n");
        let err = format!("{:#}", load_config(&path).unwrap_err());
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let dir = tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "schema_version = 1\n\n[paths]\nmanifest = \"data/frames.tsv\"\n",
        );
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.require_manifest().unwrap(), dir.path().join("data/frames.tsv"));
    }

    #[test]
    fn seed_override_reaches_both_sections() {
        let dir = tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "schema_version = 1\n\n[synth]\nn_patients = 1\nframes_per_patient = 1\nseed = 5\n\n[experiment]\nseed = 5\nscale = \"toy\"\nresolution = 64\n",
        );
        let mut cfg = load_config(&path).unwrap();
        cfg.override_seed(Some(99));
        assert_eq!(cfg.require_synth().unwrap().seed, 99);
        assert_eq!(cfg.require_experiment().unwrap().seed, 99);
        cfg.override_seed(None);
        assert_eq!(cfg.require_experiment().unwrap().seed, 99);
    }

    #[test]
    fn bad_synth_ranges_are_rejected() {
        let dir = tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "schema_version = 1\n\n[synth]\nn_patients = 2\nframes_per_patient = 2\nlesion_radius_min = 40.0\nlesion_radius_max = 50.0\n",
        );
        let err = format!("{:#}", load_config(&path).unwrap_err());
        assert!(err.contains("does not fit"), "{err}");
    }
}
